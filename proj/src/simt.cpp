#include "faultsim/simt.hpp"

#include <fstream>

#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"
#include "json.hpp"

namespace faultsim::simt {

void DeviceConfig::validate() const {
    if (warp_size != 32) throw ConfigError("warp_size must be 32");
    if (num_sms < 1) throw ConfigError("num_sms must be >= 1");
    if (max_resident_warps_per_sm < 1) throw ConfigError("max_resident_warps_per_sm must be >= 1");
    if (regs_per_thread < 16 || regs_per_thread > 64)
        throw ConfigError("regs_per_thread must be in [16, 64]");
    if (instr_budget == 0) throw ConfigError("instr_budget must be > 0");
    if (global_mem_words == 0) throw ConfigError("global_mem_words must be > 0");
}

const char* trap_kind_name(TrapKind k) {
    switch (k) {
        case TrapKind::OutOfBoundsAccess: return "OUT_OF_BOUNDS_ACCESS";
        case TrapKind::MisalignedAccess: return "MISALIGNED_ACCESS";
        case TrapKind::Timeout: return "TIMEOUT";
    }
    return "?";
}

std::optional<TrapKind> trap_kind_from_name(std::string_view name) {
    if (name == "OUT_OF_BOUNDS_ACCESS") return TrapKind::OutOfBoundsAccess;
    if (name == "MISALIGNED_ACCESS") return TrapKind::MisalignedAccess;
    if (name == "TIMEOUT") return TrapKind::Timeout;
    return std::nullopt;
}

void ExecStats::accumulate(const ExecStats& other) {
    instructions_executed += other.instructions_executed;
    if (reg_write_counts.size() < other.reg_write_counts.size())
        reg_write_counts.resize(other.reg_write_counts.size(), 0);
    for (size_t i = 0; i < other.reg_write_counts.size(); ++i)
        reg_write_counts[i] += other.reg_write_counts[i];
    per_warp_retired.insert(per_warp_retired.end(), other.per_warp_retired.begin(),
                            other.per_warp_retired.end());
}

std::string stats_to_json(const ExecStats& s) {
    nlohmann::json j;
    j["instructions_executed"] = s.instructions_executed;
    j["reg_write_counts"] = s.reg_write_counts;
    return j.dump();
}

std::map<uint32_t, BlockPlacement> schedule_blocks(const LaunchConfig& launch,
                                                   const DeviceConfig& device) {
    device.validate();
    if (launch.grid_blocks < 1) throw ConfigError("grid_blocks must be >= 1");
    if (launch.threads_per_block < 1) throw ConfigError("threads_per_block must be >= 1");
    if (launch.threads_per_block > device.max_resident_warps_per_sm * device.warp_size)
        throw ConfigError("threads_per_block exceeds resident capacity of one SM");

    uint32_t warps_per_block = (launch.threads_per_block + device.warp_size - 1) / device.warp_size;
    if (warps_per_block > device.max_resident_warps_per_sm)
        throw ConfigError("a single block needs more warp slots than the SM has");

    std::map<uint32_t, BlockPlacement> out;
    std::vector<uint32_t> cursor(device.num_sms, 0);
    for (uint32_t b = 0; b < launch.grid_blocks; ++b) {
        uint32_t sm = b % device.num_sms;
        out[b] = {sm, cursor[sm]};
        cursor[sm] = (cursor[sm] + warps_per_block) % device.max_resident_warps_per_sm;
    }
    return out;
}

uint32_t eval_alu(isa::Opcode op, const std::vector<uint32_t>& s) {
    using isa::Opcode;
    using namespace fp;
    switch (op) {
        case Opcode::IADD: return s[0] + s[1];
        case Opcode::ISUB: return s[0] - s[1];
        case Opcode::IMUL: return s[0] * s[1];
        case Opcode::IMAD: return s[0] * s[1] + s[2];
        case Opcode::SHL: return s[0] << (s[1] & 31u);
        case Opcode::SHR: return s[0] >> (s[1] & 31u);
        case Opcode::AND: return s[0] & s[1];
        case Opcode::OR: return s[0] | s[1];
        case Opcode::XOR: return s[0] ^ s[1];
        case Opcode::FADD: return bits(fadd(from_bits(s[0]), from_bits(s[1])));
        case Opcode::FMUL: return bits(fmul(from_bits(s[0]), from_bits(s[1])));
        case Opcode::FFMA: return bits(ffma(from_bits(s[0]), from_bits(s[1]), from_bits(s[2])));
        case Opcode::FMAX: return bits(fmax_(from_bits(s[0]), from_bits(s[1])));
        case Opcode::FMIN: return bits(fmin_(from_bits(s[0]), from_bits(s[1])));
        case Opcode::FRCP: return bits(frcp(from_bits(s[0])));
        case Opcode::FRSQ: return bits(frsq(from_bits(s[0])));
        case Opcode::FEXP2: return bits(fexp2(from_bits(s[0])));
        case Opcode::FLOG2: return bits(flog2(from_bits(s[0])));
        case Opcode::MOV:
        case Opcode::MOVI: return s[0];
        case Opcode::I2F: return bits(i2f(s[0]));
        case Opcode::F2I: return f2i(from_bits(s[0]));
        default: throw Error(std::string("eval_alu: not an ALU opcode: ") + isa::opcode_name(op));
    }
}

bool eval_cmp(isa::Opcode op, isa::CmpOp cmp, uint32_t a, uint32_t b) {
    using isa::CmpOp;
    if (op == isa::Opcode::ISETP) {
        int32_t x = static_cast<int32_t>(a), y = static_cast<int32_t>(b);
        switch (cmp) {
            case CmpOp::LT: return x < y;
            case CmpOp::LE: return x <= y;
            case CmpOp::GT: return x > y;
            case CmpOp::GE: return x >= y;
            case CmpOp::EQ: return x == y;
            case CmpOp::NE: return x != y;
        }
    } else {
        float x = fp::from_bits(a), y = fp::from_bits(b);
        switch (cmp) {
            case CmpOp::LT: return x < y;
            case CmpOp::LE: return x <= y;
            case CmpOp::GT: return x > y;
            case CmpOp::GE: return x >= y;
            case CmpOp::EQ: return x == y;
            case CmpOp::NE: return x != y;  // true for NaN operands
        }
    }
    return false;
}

namespace {

std::string hex_addr(uint32_t addr) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", addr);
    return buf;
}

}  // namespace

ExecOutcome execute_kernel(const isa::Kernel& kernel, const LaunchConfig& launch,
                           const DeviceConfig& device, MemoryImage memory, WriteHook* hook) {
    auto violations = isa::validate_kernel(kernel);
    if (!violations.empty())
        throw ConfigError("kernel '" + kernel.name + "' does not validate: seq " +
                          std::to_string(violations[0].seq_no) + " " +
                          isa::violation_rule_name(violations[0].rule));
    if (memory.size() != device.global_mem_words)
        throw ConfigError("memory image size does not match device.global_mem_words");

    // register indices must fit the device's per-thread file
    for (const auto& ins : kernel.instructions) {
        uint8_t max_idx = 0;
        if (ins.dst) max_idx = std::max(max_idx, ins.dst->index);
        for (const auto& s : ins.srcs)
            if (s.kind == isa::Operand::Kind::Register) max_idx = std::max(max_idx, s.reg.index);
        if (max_idx >= device.regs_per_thread)
            throw ConfigError("kernel '" + kernel.name + "' uses R" + std::to_string(max_idx) +
                              " but device has " + std::to_string(device.regs_per_thread) +
                              " registers per thread");
    }

    auto placements = schedule_blocks(launch, device);

    // resolve branch targets once
    std::vector<uint32_t> bra_target(kernel.instructions.size(), 0);
    for (size_t i = 0; i < kernel.instructions.size(); ++i)
        if (kernel.instructions[i].opcode == isa::Opcode::BRA)
            bra_target[i] = kernel.labels.at(*kernel.instructions[i].branch_target);

    ExecStats stats;
    stats.reg_write_counts.assign(device.regs_per_thread, 0);
    uint64_t issued = 0;

    const uint32_t warp = device.warp_size;
    const uint32_t tpb = launch.threads_per_block;
    const uint32_t warps_per_block = (tpb + warp - 1) / warp;

    for (uint32_t b = 0; b < launch.grid_blocks; ++b) {
        const BlockPlacement pl = placements.at(b);
        for (uint32_t w = 0; w < warps_per_block; ++w) {
            const uint32_t slot = (pl.warp_slot_base + w) % device.max_resident_warps_per_sm;

            std::vector<ThreadState> lane(warp);
            for (uint32_t l = 0; l < warp; ++l) {
                uint32_t t = w * warp + l;  // thread index within block
                lane[l].active = t < tpb;
                lane[l].global_tid = b * tpb + t;
                lane[l].regs.assign(device.regs_per_thread, 0);
            }

            auto coord_of = [&](uint32_t l) {
                return ResidentThreadCoord{pl.sm_id, slot * warp + l};
            };
            auto operand_value = [&](const isa::Operand& o, uint32_t l) -> uint32_t {
                switch (o.kind) {
                    case isa::Operand::Kind::Register: return lane[l].regs[o.reg.index];
                    case isa::Operand::Kind::Immediate: return o.imm;
                    case isa::Operand::Kind::Special:
                        switch (o.sreg) {
                            case isa::SpecialReg::TID_X: return w * warp + l;
                            case isa::SpecialReg::CTAID_X: return b;
                            case isa::SpecialReg::NTID_X: return tpb;
                        }
                }
                return 0;
            };

            uint64_t warp_retired = 0;
            uint32_t pc = 0;
            bool warp_done = false;
            while (!warp_done) {
                const isa::Instruction& ins = kernel.instructions[pc];
                if (++issued > device.instr_budget) {
                    return Trap{TrapKind::Timeout, kernel.name, ins.seq_no,
                                "instruction budget " + std::to_string(device.instr_budget) +
                                    " exhausted"};
                }
                ++warp_retired;

                std::array<bool, 32> enabled{};
                uint32_t n_enabled = 0, n_active = 0;
                for (uint32_t l = 0; l < warp; ++l) {
                    if (!lane[l].active) continue;
                    ++n_active;
                    bool en = true;
                    if (ins.guard)
                        en = lane[l].preds[ins.guard->index] != ins.guard->negated;
                    enabled[l] = en;
                    if (en) ++n_enabled;
                }

                using isa::Opcode;
                if (ins.opcode == Opcode::EXIT || ins.opcode == Opcode::BRA) {
                    // control flow must be warp-uniform over active threads
                    if (n_enabled != 0 && n_enabled != n_active)
                        throw DivergenceError("kernel '" + kernel.name + "' seq " +
                                              std::to_string(ins.seq_no) +
                                              ": non-uniform branch predicate in warp");
                    if (ins.opcode == Opcode::EXIT) {
                        if (n_enabled != 0 || n_active == 0) {
                            warp_done = true;
                            continue;
                        }
                        ++pc;
                        continue;
                    }
                    pc = n_enabled != 0 ? bra_target[pc] : pc + 1;
                    continue;
                }

                for (uint32_t l = 0; l < warp; ++l) {
                    if (!enabled[l]) continue;
                    ThreadState& ts = lane[l];
                    switch (ins.opcode) {
                        case Opcode::LD:
                        case Opcode::ST: {
                            uint32_t addr = operand_value(ins.srcs[0], l);
                            if (addr % 4 != 0)
                                return Trap{TrapKind::MisalignedAccess, kernel.name, ins.seq_no,
                                            "address " + hex_addr(addr) + " not word-aligned"};
                            uint32_t word = addr / 4;
                            if (word >= device.global_mem_words)
                                return Trap{TrapKind::OutOfBoundsAccess, kernel.name, ins.seq_no,
                                            "address " + hex_addr(addr) + " beyond " +
                                                std::to_string(device.global_mem_words) + " words"};
                            if (ins.opcode == Opcode::LD) {
                                uint32_t v = memory[word];
                                if (hook) v = hook->on_write(coord_of(l), ins, v);
                                ts.regs[ins.dst->index] = v;
                                ++stats.reg_write_counts[ins.dst->index];
                            } else {
                                memory[word] = operand_value(ins.srcs[1], l);
                            }
                            break;
                        }
                        case Opcode::ISETP:
                        case Opcode::FSETP: {
                            uint32_t a = operand_value(ins.srcs[0], l);
                            uint32_t c = operand_value(ins.srcs[1], l);
                            ts.preds[*ins.pred_dst] = eval_cmp(ins.opcode, *ins.cmp, a, c);
                            break;
                        }
                        default: {
                            std::vector<uint32_t> vals;
                            vals.reserve(ins.srcs.size());
                            for (const auto& s : ins.srcs) vals.push_back(operand_value(s, l));
                            uint32_t v = eval_alu(ins.opcode, vals);
                            if (hook) v = hook->on_write(coord_of(l), ins, v);
                            ts.regs[ins.dst->index] = v;
                            ++stats.reg_write_counts[ins.dst->index];
                            break;
                        }
                    }
                }
                ++pc;
            }
            stats.per_warp_retired.push_back(warp_retired);
        }
    }

    stats.instructions_executed = issued;
    return ExecResult{std::move(memory), std::move(stats)};
}

void write_memory_image(const std::string& path, const MemoryImage& mem) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for write: " + path);
    for (uint32_t w : mem) {
        unsigned char b[4] = {static_cast<unsigned char>(w & 0xFF),
                              static_cast<unsigned char>((w >> 8) & 0xFF),
                              static_cast<unsigned char>((w >> 16) & 0xFF),
                              static_cast<unsigned char>((w >> 24) & 0xFF)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
}

MemoryImage read_memory_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw FormatError("memory image not a multiple of 4 bytes");
    MemoryImage mem(bytes.size() / 4);
    for (size_t i = 0; i < mem.size(); ++i)
        mem[i] = uint32_t(bytes[4 * i]) | uint32_t(bytes[4 * i + 1]) << 8 |
                 uint32_t(bytes[4 * i + 2]) << 16 | uint32_t(bytes[4 * i + 3]) << 24;
    return mem;
}

}  // namespace faultsim::simt
