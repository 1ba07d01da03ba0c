#include <cstring>

#include "faultsim/cnn.hpp"
#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"

// Layer-to-kernel code generation. Every generated kernel is straight-line:
// loops are unrolled at compile time and per-element base addresses come from
// index tables written into constant memory, so warps never branch and the
// only predication is the bounds guard P0 on padded tail threads. Reductions
// always accumulate in ascending index order, which is the bit-exactness
// contract shared with the reference path. Registers are allocated densely
// from R0 so R0..R9 carry all traffic:
//
//   R0 element id   R1 byte offset / out addr   R2 addr scratch
//   R3 base/value   R4 base/value               R5 accumulator
//   R6 tap addr/val R7 tap addr/val             R8 running input addr (dense)

namespace faultsim::cnn {

namespace {

using isa::CmpOp;
using isa::Instruction;
using isa::Opcode;
using isa::Operand;
using isa::Predicate;
using isa::RegisterId;
using isa::SpecialReg;

constexpr uint32_t kMaxTpb = 256;

class KernelBuilder {
  public:
    explicit KernelBuilder(std::string name) { k_.name = std::move(name); }

    // emits the element-id preamble into R0 and a P0 bounds guard when the
    // grid has padded tail threads; returns the launch shape
    simt::LaunchConfig preamble(uint32_t n_elems) {
        simt::LaunchConfig launch;
        if (n_elems <= kMaxTpb) {
            launch = {1, n_elems};
            op(Opcode::MOV, 0, {Operand::make_special(SpecialReg::TID_X)});
        } else {
            launch = {(n_elems + kMaxTpb - 1) / kMaxTpb, kMaxTpb};
            op(Opcode::MOV, 0, {Operand::make_special(SpecialReg::CTAID_X)});
            op(Opcode::IMAD, 0,
               {Operand::make_reg(0), Operand::make_special(SpecialReg::NTID_X),
                Operand::make_special(SpecialReg::TID_X)});
        }
        if (uint64_t(launch.grid_blocks) * launch.threads_per_block > n_elems) {
            Instruction ins;
            ins.opcode = Opcode::ISETP;
            ins.cmp = CmpOp::LT;
            ins.pred_dst = 0;
            ins.srcs = {Operand::make_reg(0), Operand::make_imm(n_elems)};
            push(std::move(ins));
            guard_ = Predicate{0, false};
        }
        return launch;
    }

    void op(Opcode o, uint8_t dst, std::vector<Operand> srcs) {
        Instruction ins;
        ins.opcode = o;
        ins.dst = RegisterId{dst};
        ins.srcs = std::move(srcs);
        push(std::move(ins));
    }

    // loads and stores honor the bounds guard; ALU ops run unguarded (their
    // results on tail threads are dead)
    void ld(uint8_t dst, uint8_t addr_reg) {
        Instruction ins;
        ins.opcode = Opcode::LD;
        ins.dst = RegisterId{dst};
        ins.srcs = {Operand::make_reg(addr_reg)};
        ins.guard = guard_;
        push(std::move(ins));
    }

    void st(uint8_t addr_reg, uint8_t val_reg) {
        Instruction ins;
        ins.opcode = Opcode::ST;
        ins.srcs = {Operand::make_reg(addr_reg), Operand::make_reg(val_reg)};
        ins.guard = guard_;
        push(std::move(ins));
    }

    isa::Kernel finish() {
        Instruction ins;
        ins.opcode = Opcode::EXIT;
        push(std::move(ins));
        return std::move(k_);
    }

  private:
    void push(Instruction ins) {
        ins.seq_no = static_cast<uint32_t>(k_.instructions.size());
        k_.instructions.push_back(std::move(ins));
    }

    isa::Kernel k_;
    std::optional<Predicate> guard_;
};

uint32_t flat_len(const std::vector<uint32_t>& shape) {
    uint32_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

std::vector<uint32_t> f32_words(const std::vector<float>& v) {
    std::vector<uint32_t> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = fp::bits(v[i]);
    return out;
}

struct LayerCtx {
    const LayerSpec& layer;
    const std::vector<uint32_t>& in_shape;
    uint32_t in_base, out_base;
    MemArena& arena;
    std::string prefix;
    CompiledLayer result;

    uint32_t alloc_table(const std::string& name, std::vector<uint32_t> words) {
        uint32_t base = arena.alloc_words(static_cast<uint32_t>(words.size()));
        result.layout.constants.push_back(
            {name, base, static_cast<uint32_t>(words.size())});
        result.const_data.emplace_back(base, std::move(words));
        return base;
    }
};

void compile_relu(LayerCtx& c) {
    uint32_t n = flat_len(c.in_shape);
    KernelBuilder b(c.prefix + "_relu");
    auto launch = b.preamble(n);
    b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(c.in_base)});
    b.ld(3, 2);
    b.op(Opcode::FMAX, 3, {Operand::make_reg(3), Operand::make_imm(fp::bits(0.0f))});
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(c.out_base)});
    b.st(2, 3);
    c.result.kernels.push_back({b.finish(), launch});
}

// shared by the real conv and the padded-scratch variant (geometry differs)
void emit_conv_kernel(LayerCtx& c, uint32_t src_base, uint32_t ic_n, uint32_t ih, uint32_t iw) {
    const auto& p = c.layer.conv;
    auto out_sh = output_shape(c.layer, c.in_shape);
    uint32_t oc_n = out_sh[0], oh = out_sh[1], ow = out_sh[2];
    uint32_t k = p.kernel_size;
    uint32_t n = oc_n * oh * ow;

    if (c.layer.weights.data.size() != size_t(oc_n) * ic_n * k * k)
        throw ShapeMismatch("conv weights: expected " + std::to_string(oc_n * ic_n * k * k) +
                            ", found " + std::to_string(c.layer.weights.data.size()));
    if (c.layer.bias.data.size() != oc_n)
        throw ShapeMismatch("conv bias: expected " + std::to_string(oc_n) + ", found " +
                            std::to_string(c.layer.bias.data.size()));

    uint32_t wt_base = c.alloc_table("weights", f32_words(c.layer.weights.data));
    uint32_t bias_base = c.alloc_table("bias", f32_words(c.layer.bias.data));

    std::vector<uint32_t> t_in(n), t_wt(n), t_bias(n);
    uint32_t per_oc_bytes = ic_n * k * k * 4;
    for (uint32_t g = 0; g < n; ++g) {
        uint32_t oc = g / (oh * ow);
        uint32_t oy = (g / ow) % oh;
        uint32_t ox = g % ow;
        t_in[g] = src_base + (oy * p.stride * iw + ox * p.stride) * 4;
        t_wt[g] = wt_base + oc * per_oc_bytes;
        t_bias[g] = bias_base + oc * 4;
    }
    uint32_t t_in_base = c.alloc_table("t_in", std::move(t_in));
    uint32_t t_wt_base = c.alloc_table("t_wt", std::move(t_wt));
    uint32_t t_bias_base = c.alloc_table("t_bias", std::move(t_bias));

    KernelBuilder b(c.prefix + "_conv");
    auto launch = b.preamble(n);
    b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(t_in_base)});
    b.ld(3, 2);  // input patch origin
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(t_wt_base)});
    b.ld(4, 2);  // weight block base
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(t_bias_base)});
    b.ld(2, 2);
    b.ld(5, 2);  // acc = bias[oc]
    for (uint32_t ic = 0; ic < ic_n; ++ic) {
        for (uint32_t ky = 0; ky < k; ++ky) {
            for (uint32_t kx = 0; kx < k; ++kx) {
                uint32_t off_in = ((ic * ih + ky) * iw + kx) * 4;
                uint32_t off_wt = ((ic * k + ky) * k + kx) * 4;
                b.op(Opcode::IADD, 6, {Operand::make_reg(3), Operand::make_imm(off_in)});
                b.ld(6, 6);
                b.op(Opcode::IADD, 7, {Operand::make_reg(4), Operand::make_imm(off_wt)});
                b.ld(7, 7);
                b.op(Opcode::FFMA, 5,
                     {Operand::make_reg(6), Operand::make_reg(7), Operand::make_reg(5)});
            }
        }
    }
    b.op(Opcode::IADD, 1, {Operand::make_reg(1), Operand::make_imm(c.out_base)});
    b.st(1, 5);
    c.result.kernels.push_back({b.finish(), launch});
}

void compile_conv(LayerCtx& c) {
    const auto& p = c.layer.conv;
    uint32_t ic_n = c.in_shape[0], ih = c.in_shape[1], iw = c.in_shape[2];

    if (p.padding == 0) {
        emit_conv_kernel(c, c.in_base, ic_n, ih, iw);
        return;
    }

    // padded conv: gather the input through an address table into a scratch
    // buffer first (out-of-range positions read a zero cell), then run the
    // plain conv against the scratch geometry
    uint32_t ph = ih + 2 * p.padding, pw = iw + 2 * p.padding;
    uint32_t n_pad = ic_n * ph * pw;
    uint32_t zero_cell = c.arena.alloc_words(1);
    c.result.layout.constants.push_back({"zero_cell", zero_cell, 1});
    uint32_t scratch = c.arena.alloc_words(n_pad);
    c.result.layout.constants.push_back({"pad_scratch", scratch, n_pad});

    std::vector<uint32_t> t_src(n_pad);
    for (uint32_t g = 0; g < n_pad; ++g) {
        uint32_t ic = g / (ph * pw);
        uint32_t py = (g / pw) % ph;
        uint32_t px = g % pw;
        int32_t iy = int32_t(py) - int32_t(p.padding);
        int32_t ix = int32_t(px) - int32_t(p.padding);
        if (iy >= 0 && iy < int32_t(ih) && ix >= 0 && ix < int32_t(iw))
            t_src[g] = c.in_base + ((ic * ih + uint32_t(iy)) * iw + uint32_t(ix)) * 4;
        else
            t_src[g] = zero_cell;
    }
    uint32_t t_src_base = c.alloc_table("t_src", std::move(t_src));

    KernelBuilder b(c.prefix + "_gather");
    auto launch = b.preamble(n_pad);
    b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(t_src_base)});
    b.ld(2, 2);
    b.ld(3, 2);
    b.op(Opcode::IADD, 1, {Operand::make_reg(1), Operand::make_imm(scratch)});
    b.st(1, 3);
    c.result.kernels.push_back({b.finish(), launch});

    emit_conv_kernel(c, scratch, ic_n, ph, pw);
}

void compile_maxpool(LayerCtx& c) {
    const auto& p = c.layer.pool;
    auto out_sh = output_shape(c.layer, c.in_shape);
    uint32_t ih = c.in_shape[1], iw = c.in_shape[2];
    uint32_t oh = out_sh[1], ow = out_sh[2];
    uint32_t n = out_sh[0] * oh * ow;

    std::vector<uint32_t> t_in(n);
    for (uint32_t g = 0; g < n; ++g) {
        uint32_t ch = g / (oh * ow);
        uint32_t oy = (g / ow) % oh;
        uint32_t ox = g % ow;
        t_in[g] = c.in_base + ((ch * ih + oy * p.stride) * iw + ox * p.stride) * 4;
    }
    uint32_t t_in_base = c.alloc_table("t_in", std::move(t_in));

    KernelBuilder b(c.prefix + "_maxpool");
    auto launch = b.preamble(n);
    b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(t_in_base)});
    b.ld(2, 2);  // window origin
    b.ld(5, 2);  // acc = first tap
    for (uint32_t ky = 0; ky < p.size; ++ky) {
        for (uint32_t kx = 0; kx < p.size; ++kx) {
            if (ky == 0 && kx == 0) continue;
            b.op(Opcode::IADD, 6, {Operand::make_reg(2), Operand::make_imm((ky * iw + kx) * 4)});
            b.ld(6, 6);
            b.op(Opcode::FMAX, 5, {Operand::make_reg(5), Operand::make_reg(6)});
        }
    }
    b.op(Opcode::IADD, 1, {Operand::make_reg(1), Operand::make_imm(c.out_base)});
    b.st(1, 5);
    c.result.kernels.push_back({b.finish(), launch});
}

void compile_dense(LayerCtx& c) {
    uint32_t if_n = flat_len(c.in_shape);
    uint32_t of_n = c.layer.dense.out_features;

    if (c.layer.weights.data.size() != size_t(of_n) * if_n)
        throw ShapeMismatch("dense weights: expected " + std::to_string(of_n * if_n) +
                            ", found " + std::to_string(c.layer.weights.data.size()));
    if (c.layer.bias.data.size() != of_n)
        throw ShapeMismatch("dense bias: expected " + std::to_string(of_n) + ", found " +
                            std::to_string(c.layer.bias.data.size()));

    uint32_t wt_base = c.alloc_table("weights", f32_words(c.layer.weights.data));
    uint32_t bias_base = c.alloc_table("bias", f32_words(c.layer.bias.data));

    KernelBuilder b(c.prefix + "_dense");
    auto launch = b.preamble(of_n);
    b.op(Opcode::IMUL, 1, {Operand::make_reg(0), Operand::make_imm(if_n * 4)});
    b.op(Opcode::IADD, 1, {Operand::make_reg(1), Operand::make_imm(wt_base)});  // weight row
    b.op(Opcode::SHL, 2, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(2), Operand::make_imm(bias_base)});
    b.ld(5, 2);  // acc = bias
    b.op(Opcode::MOVI, 8, {Operand::make_imm(c.in_base)});
    for (uint32_t j = 0; j < if_n; ++j) {
        b.ld(6, 8);  // in[j]
        b.op(Opcode::IADD, 7, {Operand::make_reg(1), Operand::make_imm(j * 4)});
        b.ld(7, 7);  // w[g][j]
        b.op(Opcode::FFMA, 5, {Operand::make_reg(6), Operand::make_reg(7), Operand::make_reg(5)});
        b.op(Opcode::IADD, 8, {Operand::make_reg(8), Operand::make_imm(4)});
    }
    b.op(Opcode::SHL, 2, {Operand::make_reg(0), Operand::make_imm(2)});
    b.op(Opcode::IADD, 2, {Operand::make_reg(2), Operand::make_imm(c.out_base)});
    b.st(2, 5);
    c.result.kernels.push_back({b.finish(), launch});
}

void compile_softmax(LayerCtx& c) {
    uint32_t n = flat_len(c.in_shape);
    uint32_t e_base = c.arena.alloc_words(n);
    c.result.layout.constants.push_back({"softmax_e", e_base, n});

    {  // pass 1: e_t = exp2((x_t - max) * log2e)
        KernelBuilder b(c.prefix + "_softmax_exp");
        auto launch = b.preamble(n);
        b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
        b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(c.in_base)});
        b.ld(3, 2);  // x_t
        b.op(Opcode::MOVI, 6, {Operand::make_imm(c.in_base)});
        b.ld(5, 6);  // running max = x_0
        for (uint32_t j = 1; j < n; ++j) {
            b.op(Opcode::MOVI, 6, {Operand::make_imm(c.in_base + j * 4)});
            b.ld(7, 6);
            b.op(Opcode::FMAX, 5, {Operand::make_reg(5), Operand::make_reg(7)});
        }
        b.op(Opcode::FFMA, 4,
             {Operand::make_reg(5), Operand::make_imm(fp::bits(-1.0f)), Operand::make_reg(3)});
        b.op(Opcode::FMUL, 4, {Operand::make_reg(4), Operand::make_imm(fp::kLog2eBits)});
        b.op(Opcode::FEXP2, 4, {Operand::make_reg(4)});
        b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(e_base)});
        b.st(2, 4);
        c.result.kernels.push_back({b.finish(), launch});
    }
    {  // pass 2: out_t = e_t / sum(e)
        KernelBuilder b(c.prefix + "_softmax_norm");
        auto launch = b.preamble(n);
        b.op(Opcode::SHL, 1, {Operand::make_reg(0), Operand::make_imm(2)});
        b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(e_base)});
        b.ld(3, 2);  // e_t
        b.op(Opcode::MOVI, 6, {Operand::make_imm(e_base)});
        b.ld(5, 6);  // sum = e_0
        for (uint32_t j = 1; j < n; ++j) {
            b.op(Opcode::MOVI, 6, {Operand::make_imm(e_base + j * 4)});
            b.ld(7, 6);
            b.op(Opcode::FADD, 5, {Operand::make_reg(5), Operand::make_reg(7)});
        }
        b.op(Opcode::FRCP, 5, {Operand::make_reg(5)});
        b.op(Opcode::FMUL, 4, {Operand::make_reg(3), Operand::make_reg(5)});
        b.op(Opcode::IADD, 2, {Operand::make_reg(1), Operand::make_imm(c.out_base)});
        b.st(2, 4);
        c.result.kernels.push_back({b.finish(), launch});
    }
}

}  // namespace

uint32_t MemArena::alloc_words(uint32_t words) {
    uint32_t base = cursor_;
    cursor_ += words * 4;
    return base;
}

namespace {

CompiledLayer dispatch_layer(LayerCtx& c) {
    c.result.layout.input = {"input", c.in_base, flat_len(c.in_shape)};
    c.result.layout.output = {"output", c.out_base,
                              flat_len(output_shape(c.layer, c.in_shape))};
    switch (c.layer.kind) {
        case LayerSpec::Kind::Relu: compile_relu(c); break;
        case LayerSpec::Kind::Conv: compile_conv(c); break;
        case LayerSpec::Kind::MaxPool: compile_maxpool(c); break;
        case LayerSpec::Kind::Dense: compile_dense(c); break;
        case LayerSpec::Kind::Softmax: compile_softmax(c); break;
    }
    return std::move(c.result);
}

}  // namespace

CompiledLayer compile_layer(const LayerSpec& layer, const std::vector<uint32_t>& input_shape,
                            uint32_t in_base, uint32_t out_base, MemArena& arena) {
    LayerCtx c{layer, input_shape, in_base, out_base, arena, "L", {}};
    return dispatch_layer(c);
}

CompiledLayer compile_layer(const LayerSpec& layer, const std::vector<uint32_t>& input_shape) {
    MemArena arena;
    uint32_t in_base = arena.alloc_words(flat_len(input_shape));
    uint32_t out_base = arena.alloc_words(flat_len(output_shape(layer, input_shape)));
    return compile_layer(layer, input_shape, in_base, out_base, arena);
}

CompiledModel compile_model(const Model& model, const simt::DeviceConfig& device) {
    device.validate();
    if (model.layers.empty()) throw FormatError("model has no layers");

    CompiledModel cm;
    cm.model_name = model.name;
    MemArena arena;

    // activations first: input, then one buffer per layer output
    std::vector<uint32_t> shape = model.input_shape;
    cm.input_words = flat_len(shape);
    cm.input_base = arena.alloc_words(cm.input_words);

    struct Placement {
        uint32_t in_base, out_base;
        std::vector<uint32_t> in_shape;
    };
    std::vector<Placement> placements;
    uint32_t cur_base = cm.input_base;
    for (const auto& layer : model.layers) {
        auto out_sh = output_shape(layer, shape);
        uint32_t out_base = arena.alloc_words(flat_len(out_sh));
        placements.push_back({cur_base, out_base, shape});
        cur_base = out_base;
        shape = out_sh;
    }
    cm.output_base = cur_base;
    cm.output_words = flat_len(shape);

    std::vector<std::pair<uint32_t, std::vector<uint32_t>>> const_data;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        LayerCtx c{model.layers[i], placements[i].in_shape, placements[i].in_base,
                   placements[i].out_base, arena, "L" + std::to_string(i), {}};
        CompiledLayer cl = dispatch_layer(c);
        for (auto& ck : cl.kernels) cm.launches.push_back(std::move(ck));
        for (auto& cd : cl.const_data) const_data.push_back(std::move(cd));
    }

    uint32_t words_needed = (arena.cursor() + 3) / 4;
    if (words_needed > device.global_mem_words)
        throw ConfigError("model needs " + std::to_string(words_needed) +
                          " memory words, device has " + std::to_string(device.global_mem_words));

    cm.initial_memory.assign(device.global_mem_words, 0);
    for (const auto& [base, words] : const_data)
        std::copy(words.begin(), words.end(), cm.initial_memory.begin() + base / 4);
    return cm;
}

InferOutcome infer(const CompiledModel& compiled, const Tensor& image,
                   const simt::DeviceConfig& device, simt::WriteHook* hook, InferStats* stats) {
    if (image.data.size() != compiled.input_words)
        throw ShapeMismatch("image has " + std::to_string(image.data.size()) +
                            " values, model expects " + std::to_string(compiled.input_words));
    if (compiled.initial_memory.size() != device.global_mem_words)
        throw ConfigError("compiled model memory does not match device.global_mem_words");

    simt::MemoryImage mem = compiled.initial_memory;
    for (size_t i = 0; i < image.data.size(); ++i)
        mem[compiled.input_base / 4 + i] = fp::bits(image.data[i]);

    for (const auto& ck : compiled.launches) {
        auto outcome = simt::execute_kernel(ck.kernel, ck.launch, device, std::move(mem), hook);
        if (auto* trap = std::get_if<simt::Trap>(&outcome)) return *trap;
        auto& res = std::get<simt::ExecResult>(outcome);
        mem = std::move(res.memory);
        if (stats) {
            stats->exec.accumulate(res.stats);
            stats->per_kernel_instrs.push_back(res.stats.instructions_executed);
        }
    }

    Tensor out;
    out.shape = {compiled.output_words};
    out.data.resize(compiled.output_words);
    for (uint32_t i = 0; i < compiled.output_words; ++i)
        out.data[i] = fp::from_bits(mem[compiled.output_base / 4 + i]);
    return out;
}

InferOutcome infer(const Model& model, const Tensor& image, const simt::DeviceConfig& device,
                   simt::WriteHook* hook) {
    CompiledModel cm = compile_model(model, device);
    return infer(cm, image, device, hook);
}

}  // namespace faultsim::cnn
