#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Mini-SASS instruction set: 28 opcodes covering the arithmetic a small CNN
// needs, with one functional-unit class per opcode. Programs are line-oriented
// assembly:
//
//     [label:] [@P<n>|@!P<n>] MNEMONIC dst, src1[, src2[, src3]]   # comment
//
// Registers are R0..R63, predicates P0..P7, immediates 0x-hex / decimal /
// f:<float>, special registers %tid.x %ctaid.x %ntid.x, memory operands [R<n>].
// An optional ".kernel <name>" directive names the kernel.

namespace faultsim::isa {

enum class Opcode : uint8_t {
    // integer
    IADD, ISUB, IMUL, IMAD, SHL, SHR, AND, OR, XOR, ISETP,
    // floating point
    FADD, FMUL, FFMA, FMAX, FMIN, FSETP,
    // special function
    FRCP, FRSQ, FEXP2, FLOG2,
    // memory
    LD, ST,
    // control
    BRA, EXIT,
    // data movement
    MOV, MOVI, I2F, F2I,
};
inline constexpr int kOpcodeCount = 28;

enum class UnitClass : uint8_t { INT_CORE, FP_CORE, SFU, MEM, CTRL };

// Every opcode maps to exactly one functional-unit class.
UnitClass unit_class(Opcode op);

const char* opcode_name(Opcode op);
const char* unit_class_name(UnitClass u);
std::optional<Opcode> opcode_from_name(std::string_view name);
std::optional<UnitClass> unit_class_from_name(std::string_view name);

// True for every opcode that writes a general-purpose destination register
// (all except ST, BRA, EXIT and the predicate-writing ISETP/FSETP).
bool opcode_writes_register(Opcode op);

// Number of source operands the opcode expects.
int opcode_src_count(Opcode op);

struct RegisterId {
    uint8_t index = 0;  // [0, 63]; must be < DeviceConfig.regs_per_thread to execute
    auto operator<=>(const RegisterId&) const = default;
};

enum class SpecialReg : uint8_t { TID_X, CTAID_X, NTID_X };

struct Operand {
    enum class Kind : uint8_t { Register, Immediate, Special };
    Kind kind = Kind::Register;
    RegisterId reg{};
    uint32_t imm = 0;  // always a full 32-bit pattern
    SpecialReg sreg = SpecialReg::TID_X;

    static Operand make_reg(uint8_t index) { return {Kind::Register, RegisterId{index}, 0, SpecialReg::TID_X}; }
    static Operand make_imm(uint32_t pattern) { return {Kind::Immediate, RegisterId{}, pattern, SpecialReg::TID_X}; }
    static Operand make_special(SpecialReg s) { return {Kind::Special, RegisterId{}, 0, s}; }

    bool operator==(const Operand&) const = default;
};

// Comparison modifier for ISETP (signed) / FSETP (IEEE, NaN compares false
// except NE which is true).
enum class CmpOp : uint8_t { LT, LE, GT, GE, EQ, NE };
const char* cmp_name(CmpOp c);
std::optional<CmpOp> cmp_from_name(std::string_view name);

// @P3 / @!P3 guard. A guarded-off thread skips the instruction entirely.
struct Predicate {
    uint8_t index = 0;  // [0, 7]
    bool negated = false;
    bool operator==(const Predicate&) const = default;
};

struct Instruction {
    uint32_t seq_no = 0;
    Opcode opcode = Opcode::EXIT;
    std::optional<RegisterId> dst;           // present iff opcode writes a register
    std::optional<uint8_t> pred_dst;         // ISETP/FSETP destination predicate
    std::optional<CmpOp> cmp;                // ISETP/FSETP only
    std::vector<Operand> srcs;               // <= 3
    std::optional<Predicate> guard;
    std::optional<std::string> branch_target;  // BRA only

    bool writes_register() const { return dst.has_value(); }
    bool operator==(const Instruction&) const = default;
};

struct Kernel {
    std::string name = "main";
    std::vector<Instruction> instructions;
    std::map<std::string, uint32_t> labels;  // label -> instruction index

    bool operator==(const Kernel&) const = default;
};

// Parses assembly text. Throws SyntaxError, UnresolvedLabel, DuplicateLabel.
// seq_no is assigned in textual order starting at 0.
Kernel parse_kernel(const std::string& source, const std::string& default_name = "main");

// Textual form that parse_kernel maps back to a structurally equal Kernel.
std::string emit_text(const Kernel& k);

struct Violation {
    enum class Rule : uint8_t {
        MissingExit,
        MissingDst,
        UnexpectedDst,
        MissingPredDst,
        UnexpectedPredDst,
        MissingCmp,
        UnexpectedCmp,
        BadSrcCount,
        BadOperandKind,
        RegisterOutOfRange,
        PredicateOutOfRange,
        MissingBranchTarget,
        UnexpectedBranchTarget,
        BadBranchTarget,
        SeqNoGap,
    };
    uint32_t seq_no = 0;
    Rule rule = Rule::MissingExit;
    std::string detail;
};
const char* violation_rule_name(Violation::Rule r);

// Structural checks; an empty result means every kernel invariant holds.
std::vector<Violation> validate_kernel(const Kernel& k);

}  // namespace faultsim::isa
