#include "faultsim/isa.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <sstream>

#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"

namespace faultsim::isa {

namespace {

struct OpInfo {
    Opcode op;
    const char* name;
    UnitClass unit;
    int srcs;
    bool writes_reg;
    bool writes_pred;
};

constexpr std::array<OpInfo, kOpcodeCount> kOps = {{
    {Opcode::IADD, "IADD", UnitClass::INT_CORE, 2, true, false},
    {Opcode::ISUB, "ISUB", UnitClass::INT_CORE, 2, true, false},
    {Opcode::IMUL, "IMUL", UnitClass::INT_CORE, 2, true, false},
    {Opcode::IMAD, "IMAD", UnitClass::INT_CORE, 3, true, false},
    {Opcode::SHL, "SHL", UnitClass::INT_CORE, 2, true, false},
    {Opcode::SHR, "SHR", UnitClass::INT_CORE, 2, true, false},
    {Opcode::AND, "AND", UnitClass::INT_CORE, 2, true, false},
    {Opcode::OR, "OR", UnitClass::INT_CORE, 2, true, false},
    {Opcode::XOR, "XOR", UnitClass::INT_CORE, 2, true, false},
    {Opcode::ISETP, "ISETP", UnitClass::INT_CORE, 2, false, true},
    {Opcode::FADD, "FADD", UnitClass::FP_CORE, 2, true, false},
    {Opcode::FMUL, "FMUL", UnitClass::FP_CORE, 2, true, false},
    {Opcode::FFMA, "FFMA", UnitClass::FP_CORE, 3, true, false},
    {Opcode::FMAX, "FMAX", UnitClass::FP_CORE, 2, true, false},
    {Opcode::FMIN, "FMIN", UnitClass::FP_CORE, 2, true, false},
    {Opcode::FSETP, "FSETP", UnitClass::FP_CORE, 2, false, true},
    {Opcode::FRCP, "FRCP", UnitClass::SFU, 1, true, false},
    {Opcode::FRSQ, "FRSQ", UnitClass::SFU, 1, true, false},
    {Opcode::FEXP2, "FEXP2", UnitClass::SFU, 1, true, false},
    {Opcode::FLOG2, "FLOG2", UnitClass::SFU, 1, true, false},
    {Opcode::LD, "LD", UnitClass::MEM, 1, true, false},
    {Opcode::ST, "ST", UnitClass::MEM, 2, false, false},
    {Opcode::BRA, "BRA", UnitClass::CTRL, 0, false, false},
    {Opcode::EXIT, "EXIT", UnitClass::CTRL, 0, false, false},
    {Opcode::MOV, "MOV", UnitClass::INT_CORE, 1, true, false},
    {Opcode::MOVI, "MOVI", UnitClass::INT_CORE, 1, true, false},
    {Opcode::I2F, "I2F", UnitClass::INT_CORE, 1, true, false},
    {Opcode::F2I, "F2I", UnitClass::INT_CORE, 1, true, false},
}};

const OpInfo& info(Opcode op) { return kOps[static_cast<size_t>(op)]; }

constexpr std::array<const char*, 5> kUnitNames = {"INT_CORE", "FP_CORE", "SFU", "MEM", "CTRL"};
constexpr std::array<const char*, 6> kCmpNames = {"LT", "LE", "GT", "GE", "EQ", "NE"};

}  // namespace

UnitClass unit_class(Opcode op) { return info(op).unit; }
const char* opcode_name(Opcode op) { return info(op).name; }
bool opcode_writes_register(Opcode op) { return info(op).writes_reg; }
int opcode_src_count(Opcode op) { return info(op).srcs; }
const char* unit_class_name(UnitClass u) { return kUnitNames[static_cast<size_t>(u)]; }
const char* cmp_name(CmpOp c) { return kCmpNames[static_cast<size_t>(c)]; }

std::optional<Opcode> opcode_from_name(std::string_view name) {
    for (const auto& oi : kOps)
        if (name == oi.name) return oi.op;
    return std::nullopt;
}

std::optional<UnitClass> unit_class_from_name(std::string_view name) {
    for (size_t i = 0; i < kUnitNames.size(); ++i)
        if (name == kUnitNames[i]) return static_cast<UnitClass>(i);
    return std::nullopt;
}

std::optional<CmpOp> cmp_from_name(std::string_view name) {
    for (size_t i = 0; i < kCmpNames.size(); ++i)
        if (name == kCmpNames[i]) return static_cast<CmpOp>(i);
    return std::nullopt;
}

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Splits "R3, R1, 0x10" on top-level commas (no nesting to worry about since
// brackets never contain commas, but keep them intact).
std::vector<std::string> split_operands(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(std::string(trim(cur)));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(std::string(trim(cur)));
    return out;
}

uint8_t parse_reg_index(std::string_view tok, int line, uint8_t max_index, const char* what) {
    if (tok.size() < 2) throw SyntaxError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
    uint32_t v = 0;
    auto [p, ec] = std::from_chars(tok.data() + 1, tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v > max_index)
        throw SyntaxError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
    return static_cast<uint8_t>(v);
}

uint32_t parse_immediate(std::string_view tok, int line) {
    std::string s(tok);
    if (tok.size() > 2 && tok.substr(0, 2) == "f:") {
        const char* begin = s.c_str() + 2;
        char* end = nullptr;
        float f = std::strtof(begin, &end);
        if (end != s.c_str() + s.size()) throw SyntaxError(line, "bad float literal '" + s + "'");
        return fp::bits(f);
    }
    if (tok.size() > 2 && (tok.substr(0, 2) == "0x" || tok.substr(0, 2) == "0X")) {
        uint64_t v = 0;
        auto [p, ec] = std::from_chars(tok.data() + 2, tok.data() + tok.size(), v, 16);
        if (ec != std::errc() || p != tok.data() + tok.size() || v > 0xFFFFFFFFull)
            throw SyntaxError(line, "bad hex immediate '" + s + "'");
        return static_cast<uint32_t>(v);
    }
    int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v > 0xFFFFFFFFll || v < -0x80000000ll)
        throw SyntaxError(line, "bad immediate '" + s + "'");
    return static_cast<uint32_t>(static_cast<int64_t>(v));
}

Operand parse_operand(std::string_view tok, int line) {
    if (tok.empty()) throw SyntaxError(line, "empty operand");
    if (tok == "%tid.x") return Operand::make_special(SpecialReg::TID_X);
    if (tok == "%ctaid.x") return Operand::make_special(SpecialReg::CTAID_X);
    if (tok == "%ntid.x") return Operand::make_special(SpecialReg::NTID_X);
    if (tok.front() == 'R' && tok.size() >= 2 && std::isdigit(static_cast<unsigned char>(tok[1])))
        return Operand::make_reg(parse_reg_index(tok, line, 63, "register"));
    return Operand::make_imm(parse_immediate(tok, line));
}

// "[R5]" -> R5
uint8_t parse_mem_operand(std::string_view tok, int line) {
    if (tok.size() < 4 || tok.front() != '[' || tok.back() != ']')
        throw SyntaxError(line, "expected memory operand '[R<n>]', got '" + std::string(tok) + "'");
    std::string_view inner = trim(tok.substr(1, tok.size() - 2));
    if (inner.empty() || inner.front() != 'R')
        throw SyntaxError(line, "memory operand must name a register: '" + std::string(tok) + "'");
    return parse_reg_index(inner, line, 63, "register");
}

}  // namespace

Kernel parse_kernel(const std::string& source, const std::string& default_name) {
    Kernel k;
    k.name = default_name;
    std::vector<std::string> pending_labels;
    std::vector<std::pair<std::string, int>> branch_refs;  // label, line

    std::istringstream in(source);
    std::string raw;
    int line_no = 0;
    int last_label_line = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (auto pos = line.find('#'); pos != std::string_view::npos) line = line.substr(0, pos);
        line = trim(line);
        if (line.empty()) continue;

        if (line.substr(0, 7) == ".kernel") {
            std::string_view name = trim(line.substr(7));
            if (name.empty()) throw SyntaxError(line_no, ".kernel needs a name");
            k.name = std::string(name);
            continue;
        }

        // label prefix (possibly on its own line)
        if (is_ident_start(line.front())) {
            size_t i = 1;
            while (i < line.size() && is_ident_char(line[i])) ++i;
            if (i < line.size() && line[i] == ':') {
                std::string label(line.substr(0, i));
                if (k.labels.count(label)) throw DuplicateLabel(label);
                k.labels[label] = static_cast<uint32_t>(k.instructions.size());
                pending_labels.push_back(label);
                last_label_line = line_no;
                line = trim(line.substr(i + 1));
                if (line.empty()) continue;
            }
        }

        Instruction ins;
        ins.seq_no = static_cast<uint32_t>(k.instructions.size());

        if (line.front() == '@') {
            size_t sp = line.find_first_of(" \t");
            if (sp == std::string_view::npos) throw SyntaxError(line_no, "guard without instruction");
            std::string_view g = line.substr(1, sp - 1);
            Predicate pred;
            if (!g.empty() && g.front() == '!') {
                pred.negated = true;
                g.remove_prefix(1);
            }
            if (g.size() < 2 || g.front() != 'P') throw SyntaxError(line_no, "bad guard predicate");
            pred.index = parse_reg_index(g, line_no, 7, "predicate");
            ins.guard = pred;
            line = trim(line.substr(sp));
        }

        size_t sp = line.find_first_of(" \t");
        std::string_view mnem_tok = sp == std::string_view::npos ? line : line.substr(0, sp);
        std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));

        std::string_view mnem = mnem_tok;
        std::optional<CmpOp> cmp;
        if (auto dot = mnem_tok.find('.'); dot != std::string_view::npos) {
            mnem = mnem_tok.substr(0, dot);
            cmp = cmp_from_name(mnem_tok.substr(dot + 1));
            if (!cmp) throw SyntaxError(line_no, "unknown modifier '" + std::string(mnem_tok.substr(dot + 1)) + "'");
        }
        auto opc = opcode_from_name(mnem);
        if (!opc) throw SyntaxError(line_no, "unknown mnemonic '" + std::string(mnem) + "'");
        ins.opcode = *opc;
        bool is_setp = ins.opcode == Opcode::ISETP || ins.opcode == Opcode::FSETP;
        if (cmp && !is_setp) throw SyntaxError(line_no, "modifier on non-compare opcode");
        if (is_setp && !cmp) throw SyntaxError(line_no, "ISETP/FSETP need a .LT/.LE/.GT/.GE/.EQ/.NE modifier");
        ins.cmp = cmp;

        auto operands = split_operands(rest);
        if (operands.size() == 1 && operands[0].empty()) operands.clear();

        switch (ins.opcode) {
            case Opcode::BRA: {
                if (operands.size() != 1 || operands[0].empty() || !is_ident_start(operands[0][0]))
                    throw SyntaxError(line_no, "BRA expects a label");
                ins.branch_target = operands[0];
                branch_refs.emplace_back(operands[0], line_no);
                break;
            }
            case Opcode::EXIT:
                if (!operands.empty()) throw SyntaxError(line_no, "EXIT takes no operands");
                break;
            case Opcode::LD: {
                if (operands.size() != 2) throw SyntaxError(line_no, "LD expects 'LD R<d>, [R<a>]'");
                ins.dst = RegisterId{parse_reg_index(operands[0], line_no, 63, "register")};
                ins.srcs.push_back(Operand::make_reg(parse_mem_operand(operands[1], line_no)));
                break;
            }
            case Opcode::ST: {
                if (operands.size() != 2) throw SyntaxError(line_no, "ST expects 'ST [R<a>], src'");
                ins.srcs.push_back(Operand::make_reg(parse_mem_operand(operands[0], line_no)));
                ins.srcs.push_back(parse_operand(operands[1], line_no));
                break;
            }
            case Opcode::ISETP:
            case Opcode::FSETP: {
                if (operands.size() != 3) throw SyntaxError(line_no, "SETP expects 'P<d>, srcA, srcB'");
                if (operands[0].empty() || operands[0][0] != 'P')
                    throw SyntaxError(line_no, "SETP destination must be a predicate register");
                ins.pred_dst = parse_reg_index(operands[0], line_no, 7, "predicate");
                ins.srcs.push_back(parse_operand(operands[1], line_no));
                ins.srcs.push_back(parse_operand(operands[2], line_no));
                break;
            }
            default: {
                int want = opcode_src_count(ins.opcode);
                if (static_cast<int>(operands.size()) != want + 1)
                    throw SyntaxError(line_no, std::string(opcode_name(ins.opcode)) + " expects " +
                                                   std::to_string(want + 1) + " operands");
                ins.dst = RegisterId{parse_reg_index(operands[0], line_no, 63, "register")};
                for (int i = 0; i < want; ++i) ins.srcs.push_back(parse_operand(operands[i + 1], line_no));
                break;
            }
        }
        k.instructions.push_back(std::move(ins));
        pending_labels.clear();
    }

    if (!pending_labels.empty())
        throw SyntaxError(last_label_line, "label '" + pending_labels.front() + "' at end of kernel");
    for (const auto& [label, line] : branch_refs)
        if (!k.labels.count(label)) throw UnresolvedLabel(label);
    return k;
}

namespace {

std::string operand_text(const Operand& o) {
    switch (o.kind) {
        case Operand::Kind::Register:
            return "R" + std::to_string(o.reg.index);
        case Operand::Kind::Immediate: {
            char buf[16];
            std::snprintf(buf, sizeof buf, "0x%08x", o.imm);
            return buf;
        }
        case Operand::Kind::Special:
            switch (o.sreg) {
                case SpecialReg::TID_X: return "%tid.x";
                case SpecialReg::CTAID_X: return "%ctaid.x";
                case SpecialReg::NTID_X: return "%ntid.x";
            }
    }
    return "?";
}

}  // namespace

std::string emit_text(const Kernel& k) {
    // labels by target index, emitted before the instruction they mark
    std::multimap<uint32_t, std::string> by_index;
    for (const auto& [name, idx] : k.labels) by_index.emplace(idx, name);

    std::ostringstream out;
    out << ".kernel " << k.name << "\n";
    for (size_t i = 0; i < k.instructions.size(); ++i) {
        auto range = by_index.equal_range(static_cast<uint32_t>(i));
        for (auto it = range.first; it != range.second; ++it) out << it->second << ":\n";
        const Instruction& ins = k.instructions[i];
        out << "  ";
        if (ins.guard) out << "@" << (ins.guard->negated ? "!" : "") << "P" << int(ins.guard->index) << " ";
        out << opcode_name(ins.opcode);
        if (ins.cmp) out << "." << cmp_name(*ins.cmp);

        std::vector<std::string> ops;
        switch (ins.opcode) {
            case Opcode::BRA:
                if (ins.branch_target) ops.push_back(*ins.branch_target);
                break;
            case Opcode::EXIT:
                break;
            case Opcode::LD:
                ops.push_back("R" + std::to_string(ins.dst ? ins.dst->index : 0));
                ops.push_back("[" + operand_text(ins.srcs.at(0)) + "]");
                break;
            case Opcode::ST:
                ops.push_back("[" + operand_text(ins.srcs.at(0)) + "]");
                ops.push_back(operand_text(ins.srcs.at(1)));
                break;
            case Opcode::ISETP:
            case Opcode::FSETP:
                ops.push_back("P" + std::to_string(ins.pred_dst ? *ins.pred_dst : 0));
                for (const auto& s : ins.srcs) ops.push_back(operand_text(s));
                break;
            default:
                if (ins.dst) ops.push_back("R" + std::to_string(ins.dst->index));
                for (const auto& s : ins.srcs) ops.push_back(operand_text(s));
                break;
        }
        for (size_t j = 0; j < ops.size(); ++j) out << (j ? ", " : " ") << ops[j];
        out << "\n";
    }
    return out.str();
}

const char* violation_rule_name(Violation::Rule r) {
    switch (r) {
        case Violation::Rule::MissingExit: return "MissingExit";
        case Violation::Rule::MissingDst: return "MissingDst";
        case Violation::Rule::UnexpectedDst: return "UnexpectedDst";
        case Violation::Rule::MissingPredDst: return "MissingPredDst";
        case Violation::Rule::UnexpectedPredDst: return "UnexpectedPredDst";
        case Violation::Rule::MissingCmp: return "MissingCmp";
        case Violation::Rule::UnexpectedCmp: return "UnexpectedCmp";
        case Violation::Rule::BadSrcCount: return "BadSrcCount";
        case Violation::Rule::BadOperandKind: return "BadOperandKind";
        case Violation::Rule::RegisterOutOfRange: return "RegisterOutOfRange";
        case Violation::Rule::PredicateOutOfRange: return "PredicateOutOfRange";
        case Violation::Rule::MissingBranchTarget: return "MissingBranchTarget";
        case Violation::Rule::UnexpectedBranchTarget: return "UnexpectedBranchTarget";
        case Violation::Rule::BadBranchTarget: return "BadBranchTarget";
        case Violation::Rule::SeqNoGap: return "SeqNoGap";
    }
    return "?";
}

std::vector<Violation> validate_kernel(const Kernel& k) {
    std::vector<Violation> v;
    auto add = [&](uint32_t seq, Violation::Rule rule, std::string detail = {}) {
        v.push_back({seq, rule, std::move(detail)});
    };

    if (k.instructions.empty() || k.instructions.back().opcode != Opcode::EXIT)
        add(k.instructions.empty() ? 0 : k.instructions.back().seq_no, Violation::Rule::MissingExit);

    for (size_t i = 0; i < k.instructions.size(); ++i) {
        const Instruction& ins = k.instructions[i];
        uint32_t seq = ins.seq_no;
        if (seq != i) add(seq, Violation::Rule::SeqNoGap, "expected seq_no " + std::to_string(i));

        bool setp = ins.opcode == Opcode::ISETP || ins.opcode == Opcode::FSETP;
        if (opcode_writes_register(ins.opcode) && !ins.dst) add(seq, Violation::Rule::MissingDst);
        if (!opcode_writes_register(ins.opcode) && ins.dst) add(seq, Violation::Rule::UnexpectedDst);
        if (setp && !ins.pred_dst) add(seq, Violation::Rule::MissingPredDst);
        if (!setp && ins.pred_dst) add(seq, Violation::Rule::UnexpectedPredDst);
        if (setp && !ins.cmp) add(seq, Violation::Rule::MissingCmp);
        if (!setp && ins.cmp) add(seq, Violation::Rule::UnexpectedCmp);

        if (static_cast<int>(ins.srcs.size()) != opcode_src_count(ins.opcode))
            add(seq, Violation::Rule::BadSrcCount,
                "want " + std::to_string(opcode_src_count(ins.opcode)) + " got " + std::to_string(ins.srcs.size()));

        if (ins.dst && ins.dst->index > 63) add(seq, Violation::Rule::RegisterOutOfRange, "dst");
        if (ins.pred_dst && *ins.pred_dst > 7) add(seq, Violation::Rule::PredicateOutOfRange, "pred_dst");
        if (ins.guard && ins.guard->index > 7) add(seq, Violation::Rule::PredicateOutOfRange, "guard");
        for (const auto& s : ins.srcs)
            if (s.kind == Operand::Kind::Register && s.reg.index > 63)
                add(seq, Violation::Rule::RegisterOutOfRange, "src");

        // memory address operands must be registers
        if ((ins.opcode == Opcode::LD || ins.opcode == Opcode::ST) && !ins.srcs.empty() &&
            ins.srcs[0].kind != Operand::Kind::Register)
            add(seq, Violation::Rule::BadOperandKind, "memory address must be a register");
        if (ins.opcode == Opcode::MOVI && !ins.srcs.empty() && ins.srcs[0].kind != Operand::Kind::Immediate)
            add(seq, Violation::Rule::BadOperandKind, "MOVI source must be an immediate");
        if (ins.opcode == Opcode::MOV && !ins.srcs.empty() && ins.srcs[0].kind == Operand::Kind::Immediate)
            add(seq, Violation::Rule::BadOperandKind, "MOV source must be a register or special register");

        if (ins.opcode == Opcode::BRA) {
            if (!ins.branch_target) {
                add(seq, Violation::Rule::MissingBranchTarget);
            } else {
                auto it = k.labels.find(*ins.branch_target);
                if (it == k.labels.end() || it->second >= k.instructions.size())
                    add(seq, Violation::Rule::BadBranchTarget, *ins.branch_target);
            }
        } else if (ins.branch_target) {
            add(seq, Violation::Rule::UnexpectedBranchTarget);
        }
    }
    return v;
}

}  // namespace faultsim::isa
