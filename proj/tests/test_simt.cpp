#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"
#include "faultsim/isa.hpp"
#include "faultsim/simt.hpp"

using namespace faultsim;
using namespace faultsim::simt;

namespace {

DeviceConfig small_device() {
    DeviceConfig d;
    d.num_sms = 2;
    d.max_resident_warps_per_sm = 4;
    d.regs_per_thread = 16;
    d.global_mem_words = 1024;
    d.instr_budget = 1u << 20;
    return d;
}

ExecResult run_ok(const std::string& asm_text, LaunchConfig launch, DeviceConfig dev,
                  WriteHook* hook = nullptr) {
    auto k = isa::parse_kernel(asm_text);
    auto out = execute_kernel(k, launch, dev, MemoryImage(dev.global_mem_words, 0), hook);
    REQUIRE(std::holds_alternative<ExecResult>(out));
    return std::get<ExecResult>(std::move(out));
}

Trap run_trap(const std::string& asm_text, LaunchConfig launch, DeviceConfig dev) {
    auto k = isa::parse_kernel(asm_text);
    auto out = execute_kernel(k, launch, dev, MemoryImage(dev.global_mem_words, 0), nullptr);
    REQUIRE(std::holds_alternative<Trap>(out));
    return std::get<Trap>(std::move(out));
}

struct IdentityHook : WriteHook {
    uint32_t on_write(const ResidentThreadCoord&, const isa::Instruction&, uint32_t v) override {
        return v;
    }
};

}  // namespace

TEST_CASE("schedule: one block on one SM") {
    DeviceConfig d;
    d.num_sms = 1;
    auto m = schedule_blocks({1, 32}, d);
    CHECK(m.at(0).sm_id == 0);
    CHECK(m.at(0).warp_slot_base == 0);
}

TEST_CASE("schedule: round robin over SMs, consecutive slots per SM") {
    DeviceConfig d;
    d.num_sms = 2;
    d.max_resident_warps_per_sm = 2;
    auto m = schedule_blocks({4, 32}, d);
    CHECK(m.at(0).sm_id == 0);
    CHECK(m.at(0).warp_slot_base == 0);
    CHECK(m.at(1).sm_id == 1);
    CHECK(m.at(1).warp_slot_base == 0);
    CHECK(m.at(2).sm_id == 0);
    CHECK(m.at(2).warp_slot_base == 1);
    CHECK(m.at(3).sm_id == 1);
    CHECK(m.at(3).warp_slot_base == 1);
}

TEST_CASE("schedule: slots wrap for later waves") {
    DeviceConfig d;
    d.num_sms = 1;
    d.max_resident_warps_per_sm = 2;
    auto m = schedule_blocks({3, 32}, d);
    CHECK(m.at(0).warp_slot_base == 0);
    CHECK(m.at(1).warp_slot_base == 1);
    CHECK(m.at(2).warp_slot_base == 0);  // same physical slot as block 0
}

TEST_CASE("schedule: block too large for the SM") {
    DeviceConfig d;
    d.num_sms = 1;
    d.max_resident_warps_per_sm = 2;
    CHECK_THROWS_AS(schedule_blocks({1, 96}, d), ConfigError);
}

TEST_CASE("property: every block maps to one SM, threads conserved") {
    std::mt19937 rng(99);
    for (int iter = 0; iter < 100; ++iter) {
        DeviceConfig d;
        d.num_sms = 1 + rng() % 4;
        d.max_resident_warps_per_sm = 1 + rng() % 8;
        LaunchConfig l;
        l.threads_per_block = 1 + rng() % (d.max_resident_warps_per_sm * 32);
        l.grid_blocks = 1 + rng() % 20;
        auto m = schedule_blocks(l, d);
        CHECK(m.size() == l.grid_blocks);
        uint64_t threads = 0;
        for (const auto& [b, pl] : m) {
            CHECK(pl.sm_id < d.num_sms);
            CHECK(pl.warp_slot_base < d.max_resident_warps_per_sm);
            threads += l.threads_per_block;
        }
        CHECK(threads == uint64_t(l.grid_blocks) * l.threads_per_block);
    }
}

TEST_CASE("store to memory: MOVI/ST with zero-initialized address register") {
    auto res = run_ok("MOVI R0, 7\nST [R1], R0\nEXIT", {1, 1}, small_device());
    CHECK(res.memory[0] == 7);
}

TEST_CASE("alu semantics") {
    CHECK(eval_alu(isa::Opcode::IADD, {0x7FFFFFFFu, 1u}) == 0x80000000u);  // wrap
    CHECK(eval_alu(isa::Opcode::ISUB, {0u, 1u}) == 0xFFFFFFFFu);
    CHECK(eval_alu(isa::Opcode::FADD, {fp::bits(1.5f), fp::bits(2.5f)}) == fp::bits(4.0f));
    CHECK(eval_alu(isa::Opcode::FEXP2, {fp::bits(1.0f)}) == fp::bits(2.0f));
    CHECK(eval_alu(isa::Opcode::FRCP, {fp::bits(2.0f)}) == fp::bits(0.5f));
    CHECK(eval_alu(isa::Opcode::SHL, {1u, 4u}) == 16u);
    CHECK(eval_alu(isa::Opcode::SHR, {0x80000000u, 31u}) == 1u);
    CHECK(eval_alu(isa::Opcode::IMAD, {3u, 4u, 5u}) == 17u);
    CHECK(eval_alu(isa::Opcode::I2F, {uint32_t(int32_t(-2))}) == fp::bits(-2.0f));
    CHECK(eval_alu(isa::Opcode::F2I, {fp::bits(-2.7f)}) == uint32_t(int32_t(-2)));
    CHECK(eval_alu(isa::Opcode::FFMA, {fp::bits(2.0f), fp::bits(3.0f), fp::bits(1.0f)}) ==
          fp::bits(7.0f));
}

TEST_CASE("setp comparisons, signed and float") {
    CHECK(eval_cmp(isa::Opcode::ISETP, isa::CmpOp::LT, uint32_t(int32_t(-1)), 0u));
    CHECK(!eval_cmp(isa::Opcode::ISETP, isa::CmpOp::GT, uint32_t(int32_t(-1)), 0u));
    CHECK(eval_cmp(isa::Opcode::FSETP, isa::CmpOp::LT, fp::bits(-0.5f), fp::bits(0.0f)));
    uint32_t nan = fp::bits(std::numeric_limits<float>::quiet_NaN());
    CHECK(!eval_cmp(isa::Opcode::FSETP, isa::CmpOp::EQ, nan, nan));
    CHECK(eval_cmp(isa::Opcode::FSETP, isa::CmpOp::NE, nan, nan));
}

TEST_CASE("special registers and predication") {
    // each thread writes its global id; threads with tid >= 3 are masked off
    std::string src =
        "MOV R0, %ctaid.x\n"
        "IMAD R0, R0, %ntid.x, %tid.x\n"
        "ISETP.LT P0, R0, 3\n"
        "SHL R1, R0, 2\n"
        "@P0 ST [R1], R0\n"
        "EXIT\n";
    auto res = run_ok(src, {2, 4}, small_device());
    CHECK(res.memory[0] == 0);
    CHECK(res.memory[1] == 1);
    CHECK(res.memory[2] == 2);
    CHECK(res.memory[3] == 0);  // masked, still zero
    CHECK(res.memory[4] == 0);
}

TEST_CASE("out-of-bounds load traps at the memory limit") {
    DeviceConfig d = small_device();
    std::string src = "MOVI R0, " + std::to_string(d.global_mem_words * 4) + "\nLD R1, [R0]\nEXIT";
    Trap t = run_trap(src, {1, 1}, d);
    CHECK(t.kind == TrapKind::OutOfBoundsAccess);
    CHECK(t.seq_no == 1);
}

TEST_CASE("misaligned access traps") {
    Trap t = run_trap("MOVI R0, 2\nLD R1, [R0]\nEXIT", {1, 1}, small_device());
    CHECK(t.kind == TrapKind::MisalignedAccess);
}

TEST_CASE("timeout on an infinite loop") {
    DeviceConfig d = small_device();
    d.instr_budget = 1000;
    Trap t = run_trap("loop:\nBRA loop\nEXIT", {1, 1}, d);
    CHECK(t.kind == TrapKind::Timeout);
}

TEST_CASE("uniform predicated branch works; divergent branch is a hard error") {
    // all threads take the loop once: uniform
    std::string uniform =
        "MOVI R2, 0\n"
        "loop:\n"
        "IADD R2, R2, 1\n"
        "ISETP.LT P0, R2, 2\n"
        "@P0 BRA loop\n"
        "EXIT\n";
    auto res = run_ok(uniform, {1, 32}, small_device());
    CHECK(res.stats.instructions_executed > 0);

    // per-thread trip counts diverge
    std::string divergent =
        "MOV R0, %tid.x\n"
        "ISETP.LT P0, R0, 1\n"
        "@P0 BRA skip\n"
        "skip:\n"
        "EXIT\n";
    auto k = isa::parse_kernel(divergent);
    DeviceConfig d = small_device();
    CHECK_THROWS_AS(execute_kernel(k, {1, 2}, d, MemoryImage(d.global_mem_words, 0), nullptr),
                    DivergenceError);
}

TEST_CASE("determinism: identical runs produce identical memory and stats") {
    std::string src =
        "MOV R0, %tid.x\n"
        "I2F R1, R0\n"
        "FMUL R1, R1, f:1.25\n"
        "SHL R2, R0, 2\n"
        "ST [R2], R1\n"
        "EXIT\n";
    auto a = run_ok(src, {3, 32}, small_device());
    auto b = run_ok(src, {3, 32}, small_device());
    CHECK(a.memory == b.memory);
    CHECK(a.stats.instructions_executed == b.stats.instructions_executed);
    CHECK(a.stats.reg_write_counts == b.stats.reg_write_counts);
    CHECK(a.stats.per_warp_retired == b.stats.per_warp_retired);
}

TEST_CASE("hook neutrality: identity hook output is bit-identical") {
    std::string src =
        "MOV R0, %tid.x\n"
        "I2F R1, R0\n"
        "FRSQ R1, R1\n"
        "SHL R2, R0, 2\n"
        "ST [R2], R1\n"
        "EXIT\n";
    IdentityHook hook;
    auto without = run_ok(src, {2, 16}, small_device(), nullptr);
    auto with = run_ok(src, {2, 16}, small_device(), &hook);
    CHECK(without.memory == with.memory);
    CHECK(without.stats.reg_write_counts == with.stats.reg_write_counts);
}

TEST_CASE("conservation: instructions_executed equals per-warp retirements") {
    std::string src =
        "MOV R0, %tid.x\n"
        "IADD R0, R0, 5\n"
        "EXIT\n";
    auto res = run_ok(src, {5, 48}, small_device());
    uint64_t sum = 0;
    for (uint64_t w : res.stats.per_warp_retired) sum += w;
    CHECK(sum == res.stats.instructions_executed);
    CHECK(res.stats.per_warp_retired.size() == 5 * 2);  // two warps per block
}

TEST_CASE("kernel using a register beyond the device file is rejected") {
    DeviceConfig d = small_device();  // 16 regs
    auto k = isa::parse_kernel("MOVI R15, 1\nEXIT");
    CHECK_NOTHROW(execute_kernel(k, {1, 1}, d, MemoryImage(d.global_mem_words, 0), nullptr));
    auto k2 = isa::parse_kernel("MOVI R16, 1\nEXIT");
    CHECK_THROWS_AS(execute_kernel(k2, {1, 1}, d, MemoryImage(d.global_mem_words, 0), nullptr),
                    ConfigError);
}

TEST_CASE("memory image round-trips through the raw little-endian file") {
    MemoryImage mem = {0x00000000u, 0x11223344u, 0xDEADBEEFu, 0xFFFFFFFFu};
    std::string path = "simt_mem_image.bin";
    write_memory_image(path, mem);
    CHECK(read_memory_image(path) == mem);
    std::ifstream in(path, std::ios::binary);
    char b[8];
    in.read(b, 8);
    CHECK(static_cast<unsigned char>(b[4]) == 0x44);  // little-endian word order
    std::remove(path.c_str());
}

TEST_CASE("stats serialize to the documented JSON shape") {
    auto res = run_ok("MOVI R3, 1\nEXIT", {1, 2}, small_device());
    std::string j = stats_to_json(res.stats);
    CHECK(j.find("\"instructions_executed\":2") != std::string::npos);
    CHECK(j.find("\"reg_write_counts\":[0,0,0,2,0") != std::string::npos);
}

TEST_CASE("hooks only see register writes, with correct coordinates") {
    struct Recorder : WriteHook {
        std::vector<std::pair<ResidentThreadCoord, uint32_t>> writes;
        uint32_t on_write(const ResidentThreadCoord& c, const isa::Instruction& i,
                          uint32_t v) override {
            CHECK(i.writes_register());
            writes.push_back({c, v});
            return v;
        }
    } rec;
    DeviceConfig d = small_device();
    d.num_sms = 2;
    // block 0 -> SM0 slot 0, block 1 -> SM1 slot 0
    std::string src = "MOVI R0, 9\nST [R1], R0\nEXIT";
    run_ok(src, {2, 2}, d, &rec);
    REQUIRE(rec.writes.size() == 4);  // MOVI on 2 threads x 2 blocks; ST not hooked
    CHECK(rec.writes[0].first.sm_id == 0);
    CHECK(rec.writes[2].first.sm_id == 1);
    CHECK(rec.writes[1].first.resident_thread_id == 1);
}
