#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "faultsim/errors.hpp"
#include "faultsim/faults.hpp"
#include "faultsim/fp_ops.hpp"
#include "faultsim/simt.hpp"

using namespace faultsim;
using namespace faultsim::faults;

namespace {

simt::DeviceConfig device_1sm() {
    simt::DeviceConfig d;
    d.num_sms = 1;
    d.max_resident_warps_per_sm = 4;
    d.global_mem_words = 1024;
    return d;
}

isa::Instruction write_instr(uint8_t dst_reg, isa::Opcode op = isa::Opcode::IADD) {
    isa::Instruction ins;
    ins.opcode = op;
    ins.dst = isa::RegisterId{dst_reg};
    ins.srcs = {isa::Operand::make_reg(1), isa::Operand::make_reg(2)};
    return ins;
}

}  // namespace

TEST_CASE("corrupt_value: the worked examples") {
    CHECK(corrupt_value(0b1010, 2, CorruptMode::STUCK_AT_1) == 0b1110);
    CHECK(corrupt_value(0b1010, 1, CorruptMode::STUCK_AT_1) == 0b1010);  // already set
    CHECK(corrupt_value(fp::bits(1.0f), 31, CorruptMode::FLIP) == fp::bits(-1.0f));
    CHECK(corrupt_value(0xFF, 3, CorruptMode::STUCK_AT_0) == 0xF7);
}

TEST_CASE("property: stuck-at idempotence, flip involution, single-bit locality") {
    std::mt19937 rng(123);
    for (int iter = 0; iter < 2000; ++iter) {
        uint32_t v = rng();
        uint32_t bit = rng() % 32;
        for (auto mode : {CorruptMode::STUCK_AT_0, CorruptMode::STUCK_AT_1}) {
            uint32_t once = corrupt_value(v, bit, mode);
            CHECK(corrupt_value(once, bit, mode) == once);
        }
        CHECK(corrupt_value(corrupt_value(v, bit, CorruptMode::FLIP), bit, CorruptMode::FLIP) == v);
        for (auto mode : {CorruptMode::FLIP, CorruptMode::STUCK_AT_0, CorruptMode::STUCK_AT_1})
            CHECK(std::popcount(v ^ corrupt_value(v, bit, mode)) <= 1);
    }
}

TEST_CASE("matches: register fault hits only its destination register") {
    FaultSpec spec{"F1", RegisterFault{0, 5, isa::RegisterId{3}, 12, 1}};
    simt::ResidentThreadCoord at{0, 5};
    CHECK(matches(spec, at, write_instr(3)));
    CHECK(!matches(spec, at, write_instr(4)));  // R3 may be a source; dst is R4
    CHECK(!matches(spec, {0, 6}, write_instr(3)));
    CHECK(!matches(spec, {1, 5}, write_instr(3)));
    isa::Instruction st;
    st.opcode = isa::Opcode::ST;
    st.srcs = {isa::Operand::make_reg(3), isa::Operand::make_reg(3)};
    CHECK(!matches(spec, at, st));  // no register write
}

TEST_CASE("matches: unit fault needs the unit class and a register write") {
    FaultSpec fp_all{"F2", UnitFault{0, std::nullopt, isa::UnitClass::FP_CORE, 31,
                                     CorruptMode::FLIP}};
    simt::ResidentThreadCoord at{0, 5};
    CHECK(matches(fp_all, at, write_instr(1, isa::Opcode::FMUL)));
    CHECK(!matches(fp_all, at, write_instr(1, isa::Opcode::LD)));  // MEM != FP_CORE
    CHECK(!matches(fp_all, at, write_instr(1, isa::Opcode::IADD)));
    isa::Instruction fsetp;
    fsetp.opcode = isa::Opcode::FSETP;
    fsetp.pred_dst = 0;
    fsetp.cmp = isa::CmpOp::LT;
    fsetp.srcs = {isa::Operand::make_reg(0), isa::Operand::make_reg(1)};
    CHECK(!matches(fp_all, at, fsetp));  // writes a predicate, not a register

    FaultSpec lane3{"F3", UnitFault{0, 3u, isa::UnitClass::FP_CORE, 0, CorruptMode::FLIP}};
    CHECK(matches(lane3, {0, 3}, write_instr(1, isa::Opcode::FADD)));
    CHECK(matches(lane3, {0, 35}, write_instr(1, isa::Opcode::FADD)));  // lane 3 of slot 1
    CHECK(!matches(lane3, {0, 4}, write_instr(1, isa::Opcode::FADD)));
}

TEST_CASE("hook: register fault corrupts matching writes and counts them") {
    FaultSpec spec{"F4", RegisterFault{0, 0, isa::RegisterId{2}, 4, 1}};
    auto hook = make_hook(spec);
    simt::ResidentThreadCoord at{0, 0};
    uint32_t v = hook->on_write(at, write_instr(2), 0);
    CHECK(v == 16u);
    CHECK(hook->matched_writes() == 1);
    CHECK(hook->corrupted_writes() == 1);
    // bit already set: matched but unchanged
    v = hook->on_write(at, write_instr(2), 16u);
    CHECK(v == 16u);
    CHECK(hook->matched_writes() == 2);
    CHECK(hook->corrupted_writes() == 1);
    // different destination: untouched
    v = hook->on_write(at, write_instr(3), 0);
    CHECK(v == 0);
    CHECK(hook->matched_writes() == 2);
}

TEST_CASE("property: stuck-at hook application is idempotent") {
    std::mt19937 rng(321);
    for (int iter = 0; iter < 500; ++iter) {
        uint32_t bit = rng() % 32;
        FaultSpec spec{"F", RegisterFault{0, 0, isa::RegisterId{1}, bit, uint32_t(rng() % 2)}};
        auto hook = make_hook(spec);
        simt::ResidentThreadCoord at{0, 0};
        uint32_t v = rng();
        uint32_t once = hook->on_write(at, write_instr(1), v);
        uint32_t twice = hook->on_write(at, write_instr(1), once);
        CHECK(once == twice);
    }
}

TEST_CASE("end-to-end: unit fault flips the sign of a product") {
    // f:2.0 * f:3.0 with a FLIP on bit 31 of every FP_CORE result -> -6.0
    std::string src =
        "MOVI R1, f:2.0\n"
        "MOVI R2, f:3.0\n"
        "FMUL R3, R1, R2\n"
        "ST [R0], R3\n"
        "EXIT\n";
    auto k = isa::parse_kernel(src);
    auto dev = device_1sm();
    FaultSpec spec{"F5", UnitFault{0, std::nullopt, isa::UnitClass::FP_CORE, 31,
                                   CorruptMode::FLIP}};
    auto hook = make_hook(spec);
    auto out = simt::execute_kernel(k, {1, 1}, dev, simt::MemoryImage(dev.global_mem_words, 0),
                                    hook.get());
    auto& res = std::get<simt::ExecResult>(out);
    CHECK(res.memory[0] == fp::bits(-6.0f));
    CHECK(hook->corrupted_writes() == 1);  // only the FMUL write matches
}

TEST_CASE("end-to-end: register fault on a never-written register is silent") {
    std::string src =
        "MOVI R1, 17\n"
        "ST [R0], R1\n"
        "EXIT\n";
    auto k = isa::parse_kernel(src);
    auto dev = device_1sm();
    auto golden = std::get<simt::ExecResult>(
        simt::execute_kernel(k, {1, 4}, dev, simt::MemoryImage(dev.global_mem_words, 0), nullptr));
    FaultSpec spec{"F6", RegisterFault{0, 2, isa::RegisterId{9}, 7, 1}};
    auto hook = make_hook(spec);
    auto faulty = std::get<simt::ExecResult>(simt::execute_kernel(
        k, {1, 4}, dev, simt::MemoryImage(dev.global_mem_words, 0), hook.get()));
    CHECK(golden.memory == faulty.memory);
    CHECK(hook->matched_writes() == 0);
    CHECK(hook->corrupted_writes() == 0);
}

TEST_CASE("permanence: one hook keeps corrupting across consecutive launches") {
    std::string src =
        "MOVI R1, f:1.0\n"
        "FADD R2, R1, f:1.0\n"
        "ST [R0], R2\n"
        "EXIT\n";
    auto k = isa::parse_kernel(src);
    auto dev = device_1sm();
    FaultSpec spec{"FP", UnitFault{0, std::nullopt, isa::UnitClass::FP_CORE, 1,
                                   CorruptMode::FLIP}};
    auto hook = make_hook(spec);
    for (int launch = 0; launch < 3; ++launch) {
        auto out = simt::execute_kernel(k, {1, 2}, dev,
                                        simt::MemoryImage(dev.global_mem_words, 0), hook.get());
        CHECK(std::holds_alternative<simt::ExecResult>(out));
    }
    // one FADD per thread per launch, every one corrupted, no exemptions
    CHECK(hook->matched_writes() == 3 * 2);
    CHECK(hook->corrupted_writes() == 3 * 2);
}

TEST_CASE("transient faults fire exactly once") {
    FaultSpec spec{"F7", TransientFault{TransientKind::ALL_ZERO, 0, 0, 2, 0}};
    auto hook = make_hook(spec);
    simt::ResidentThreadCoord at{0, 0};
    CHECK(hook->on_write(at, write_instr(1), 0xAA) == 0xAA);  // occurrence 0
    CHECK(hook->on_write(at, write_instr(1), 0xBB) == 0xBB);  // occurrence 1
    CHECK(hook->on_write(at, write_instr(1), 0xCC) == 0u);    // fires
    CHECK(hook->on_write(at, write_instr(1), 0xDD) == 0xDD);  // never again
    CHECK(hook->corrupted_writes() == 1);

    FaultSpec two{"F8", TransientFault{TransientKind::TWO_ADJACENT_BIT_FLIP, 0, 0, 0, 4}};
    auto hook2 = make_hook(two);
    CHECK(hook2->on_write(at, write_instr(1), 0) == 0x30u);  // bits 4 and 5

    FaultSpec rnd{"F9", TransientFault{TransientKind::RANDOM_VALUE, 0, 0, 0, 0}};
    auto ha = make_hook(rnd);
    auto hb = make_hook(rnd);
    uint32_t va = ha->on_write(at, write_instr(1), 7);
    uint32_t vb = hb->on_write(at, write_instr(1), 7);
    CHECK(va == vb);  // deterministic in the fault id
}

TEST_CASE("generate: seeded determinism and the R0..R9 constraint") {
    auto dev = device_1sm();
    FaultListConstraints c;
    c.reg_lo = 0;
    c.reg_hi = 9;
    auto a = generate_fault_list(1, 10, FaultKind::REGISTER, c, dev);
    auto b = generate_fault_list(1, 10, FaultKind::REGISTER, c, dev);
    REQUIRE(a.size() == 10);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(spec_to_json_line(a[i]) == spec_to_json_line(b[i]));
        const auto& rf = std::get<RegisterFault>(a[i].body);
        CHECK(rf.reg.index <= 9);
        CHECK(rf.sm_id == 0);
    }
    CHECK(a[0].id == "F000001");
    CHECK(a[9].id == "F000010");
    // distinct quintuples
    std::set<std::string> keys;
    for (const auto& s : a) {
        auto line = spec_to_json_line(FaultSpec{"", s.body});
        CHECK(keys.insert(line).second);
    }
}

TEST_CASE("generate: unit faults, bit histogram roughly uniform") {
    auto dev = device_1sm();
    FaultListConstraints c;
    c.units = {isa::UnitClass::FP_CORE};
    c.modes = {CorruptMode::FLIP};
    c.lanes.clear();
    c.lanes.push_back(std::nullopt);
    for (uint32_t l = 0; l < 32; ++l) c.lanes.push_back(l);  // widen the space
    auto list = generate_fault_list(7, 660, FaultKind::UNIT, c, dev);
    std::array<uint32_t, 32> hist{};
    for (const auto& s : list) ++hist[std::get<UnitFault>(s.body).bit];
    // chi-square against uniform: 31 dof, mean 20.6 per bin; 80 is far beyond
    // any plausible uniform draw only if the sampler is broken
    double expected = 660.0 / 32.0;
    double chi2 = 0;
    for (uint32_t h : hist) chi2 += (h - expected) * (h - expected) / expected;
    CHECK(chi2 < 80.0);
    for (uint32_t h : hist) CHECK(h > 0);
}

TEST_CASE("generate: constraint errors") {
    auto dev = device_1sm();
    FaultListConstraints c;
    CHECK_THROWS_AS(generate_fault_list(1, 0, FaultKind::REGISTER, c, dev), ConstraintError);
    FaultListConstraints inverted;
    inverted.reg_lo = 5;
    inverted.reg_hi = 2;
    CHECK_THROWS_AS(generate_fault_list(1, 5, FaultKind::REGISTER, inverted, dev),
                    ConstraintError);
    FaultListConstraints beyond;
    beyond.reg_hi = 63;  // device has 16 registers
    CHECK_THROWS_AS(generate_fault_list(1, 5, FaultKind::REGISTER, beyond, dev), ConstraintError);
    // ALL_LANES-only FLIP unit space is 32 per unit: 100 cannot be distinct
    FaultListConstraints small;
    CHECK_THROWS_AS(generate_fault_list(1, 100, FaultKind::UNIT, small, dev), ConstraintError);
    FaultListConstraints empty_sm;
    empty_sm.sm_ids.clear();
    CHECK_THROWS_AS(generate_fault_list(1, 1, FaultKind::REGISTER, empty_sm, dev),
                    ConstraintError);
}

TEST_CASE("fault list files: write/read round trip and id uniqueness") {
    auto dev = device_1sm();
    FaultListConstraints c;
    auto regs = generate_fault_list(11, 8, FaultKind::REGISTER, c, dev);
    auto units = generate_fault_list(12, 8, FaultKind::UNIT, c, dev,
                                     static_cast<uint32_t>(regs.size()) + 1);
    std::vector<FaultSpec> all(regs);
    all.insert(all.end(), units.begin(), units.end());
    all.push_back(FaultSpec{"F000099", TransientFault{TransientKind::RANDOM_VALUE, 0, 3, 5, 0}});

    std::string path = "fault_list_test.jsonl";
    write_fault_list(path, all);
    auto back = read_fault_list(path);
    REQUIRE(back.size() == all.size());
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK(back[i].id == all[i].id);
        CHECK(spec_to_json_line(back[i]) == spec_to_json_line(all[i]));
    }

    // duplicate ids rejected
    std::ofstream out(path, std::ios::app);
    out << spec_to_json_line(all[0]) << "\n";
    out.close();
    CHECK_THROWS_AS(read_fault_list(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("spec json lines match the documented shape") {
    FaultSpec reg{"F000001", RegisterFault{0, 5, isa::RegisterId{3}, 12, 1}};
    auto line = spec_to_json_line(reg);
    CHECK(line.find("\"kind\":\"register\"") != std::string::npos);
    CHECK(line.find("\"sm\":0") != std::string::npos);
    CHECK(line.find("\"thread\":5") != std::string::npos);
    CHECK(line.find("\"reg\":3") != std::string::npos);
    CHECK(line.find("\"bit\":12") != std::string::npos);
    CHECK(line.find("\"stuck_at\":1") != std::string::npos);

    FaultSpec unit{"F000002", UnitFault{0, std::nullopt, isa::UnitClass::FP_CORE, 31,
                                        CorruptMode::FLIP}};
    auto uline = spec_to_json_line(unit);
    CHECK(uline.find("\"kind\":\"unit\"") != std::string::npos);
    CHECK(uline.find("\"lane\":\"all\"") != std::string::npos);
    CHECK(uline.find("\"unit\":\"FP_CORE\"") != std::string::npos);
    CHECK(uline.find("\"mode\":\"flip\"") != std::string::npos);
}

TEST_CASE("validate_spec rejects out-of-device coordinates") {
    auto dev = device_1sm();
    CHECK_THROWS_AS(
        validate_spec(FaultSpec{"F", RegisterFault{1, 0, isa::RegisterId{0}, 0, 0}}, dev),
        ConstraintError);
    CHECK_THROWS_AS(
        validate_spec(FaultSpec{"F", RegisterFault{0, 4 * 32, isa::RegisterId{0}, 0, 0}}, dev),
        ConstraintError);
    CHECK_THROWS_AS(
        validate_spec(FaultSpec{"F", UnitFault{0, std::nullopt, isa::UnitClass::MEM, 0,
                                               CorruptMode::FLIP}},
                      dev),
        ConstraintError);
    CHECK_NOTHROW(
        validate_spec(FaultSpec{"F", RegisterFault{0, 127, isa::RegisterId{15}, 31, 1}}, dev));
}
