#include "faultsim/faults.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "faultsim/errors.hpp"
#include "json.hpp"

namespace faultsim::faults {

using nlohmann::json;

const char* corrupt_mode_name(CorruptMode m) {
    switch (m) {
        case CorruptMode::FLIP: return "flip";
        case CorruptMode::STUCK_AT_0: return "stuck_at_0";
        case CorruptMode::STUCK_AT_1: return "stuck_at_1";
    }
    return "?";
}

std::optional<CorruptMode> corrupt_mode_from_name(std::string_view name) {
    if (name == "flip") return CorruptMode::FLIP;
    if (name == "stuck_at_0") return CorruptMode::STUCK_AT_0;
    if (name == "stuck_at_1") return CorruptMode::STUCK_AT_1;
    return std::nullopt;
}

const char* transient_kind_name(TransientKind k) {
    switch (k) {
        case TransientKind::SINGLE_BIT_FLIP: return "single_bit_flip";
        case TransientKind::TWO_ADJACENT_BIT_FLIP: return "two_adjacent_bit_flip";
        case TransientKind::RANDOM_VALUE: return "random_value";
        case TransientKind::ALL_ZERO: return "all_zero";
    }
    return "?";
}

std::optional<TransientKind> transient_kind_from_name(std::string_view name) {
    if (name == "single_bit_flip") return TransientKind::SINGLE_BIT_FLIP;
    if (name == "two_adjacent_bit_flip") return TransientKind::TWO_ADJACENT_BIT_FLIP;
    if (name == "random_value") return TransientKind::RANDOM_VALUE;
    if (name == "all_zero") return TransientKind::ALL_ZERO;
    return std::nullopt;
}

uint32_t corrupt_value(uint32_t value, uint32_t bit, CorruptMode mode) {
    uint32_t mask = 1u << (bit & 31u);
    switch (mode) {
        case CorruptMode::FLIP: return value ^ mask;
        case CorruptMode::STUCK_AT_0: return value & ~mask;
        case CorruptMode::STUCK_AT_1: return value | mask;
    }
    return value;
}

bool matches(const FaultSpec& spec, const simt::ResidentThreadCoord& coord,
             const isa::Instruction& instr) {
    if (const auto* rf = std::get_if<RegisterFault>(&spec.body)) {
        return coord.sm_id == rf->sm_id && coord.resident_thread_id == rf->thread_id &&
               instr.dst.has_value() && instr.dst->index == rf->reg.index;
    }
    if (const auto* uf = std::get_if<UnitFault>(&spec.body)) {
        if (coord.sm_id != uf->sm_id) return false;
        if (uf->lane && coord.resident_thread_id % 32 != *uf->lane) return false;
        return instr.dst.has_value() && isa::unit_class(instr.opcode) == uf->unit;
    }
    const auto& tf = std::get<TransientFault>(spec.body);
    return coord.sm_id == tf.sm_id && coord.resident_thread_id == tf.thread_id &&
           instr.dst.has_value();
}

void validate_spec(const FaultSpec& spec, const simt::DeviceConfig& device) {
    uint32_t resident_threads = device.max_resident_warps_per_sm * device.warp_size;
    auto check = [&](bool ok, const std::string& why) {
        if (!ok) throw ConstraintError("fault " + spec.id + ": " + why);
    };
    if (const auto* rf = std::get_if<RegisterFault>(&spec.body)) {
        check(rf->sm_id < device.num_sms, "sm_id out of range");
        check(rf->thread_id < resident_threads, "thread_id out of range");
        check(rf->reg.index < device.regs_per_thread, "register out of range");
        check(rf->bit <= 31, "bit out of range");
        check(rf->stuck_at <= 1, "stuck_at must be 0 or 1");
    } else if (const auto* uf = std::get_if<UnitFault>(&spec.body)) {
        check(uf->sm_id < device.num_sms, "sm_id out of range");
        check(!uf->lane || *uf->lane < device.warp_size, "lane out of range");
        check(uf->unit == isa::UnitClass::INT_CORE || uf->unit == isa::UnitClass::FP_CORE ||
                  uf->unit == isa::UnitClass::SFU,
              "unit must be INT_CORE, FP_CORE or SFU");
        check(uf->bit <= 31, "bit out of range");
    } else {
        const auto& tf = std::get<TransientFault>(spec.body);
        check(tf.sm_id < device.num_sms, "sm_id out of range");
        check(tf.thread_id < resident_threads, "thread_id out of range");
        check(tf.bit <= 31, "bit out of range");
        if (tf.kind == TransientKind::TWO_ADJACENT_BIT_FLIP)
            check(tf.bit <= 30, "two-adjacent flip needs bit <= 30");
    }
}

namespace {

// FNV-1a, used to derive deterministic per-fault payloads from the spec id.
uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

FaultHook::FaultHook(FaultSpec spec) : spec_(std::move(spec)) {
    uint64_t h = fnv1a(spec_.id);
    random_payload_ = static_cast<uint32_t>(h ^ (h >> 32));
}

uint32_t FaultHook::on_write(const simt::ResidentThreadCoord& coord,
                             const isa::Instruction& instr, uint32_t written_value) {
    if (!matches(spec_, coord, instr)) return written_value;

    uint32_t out = written_value;
    if (const auto* rf = std::get_if<RegisterFault>(&spec_.body)) {
        ++matched_;
        out = corrupt_value(written_value, rf->bit,
                            rf->stuck_at ? CorruptMode::STUCK_AT_1 : CorruptMode::STUCK_AT_0);
    } else if (const auto* uf = std::get_if<UnitFault>(&spec_.body)) {
        ++matched_;
        out = corrupt_value(written_value, uf->bit, uf->mode);
    } else {
        const auto& tf = std::get<TransientFault>(spec_.body);
        uint64_t idx = seen_++;
        if (fired_ || idx != tf.occurrence) return written_value;
        fired_ = true;
        ++matched_;
        switch (tf.kind) {
            case TransientKind::SINGLE_BIT_FLIP:
                out = corrupt_value(written_value, tf.bit, CorruptMode::FLIP);
                break;
            case TransientKind::TWO_ADJACENT_BIT_FLIP:
                out = corrupt_value(written_value, tf.bit, CorruptMode::FLIP);
                out = corrupt_value(out, tf.bit + 1, CorruptMode::FLIP);
                break;
            case TransientKind::RANDOM_VALUE:
                out = random_payload_;
                break;
            case TransientKind::ALL_ZERO:
                out = 0;
                break;
        }
    }
    if (out != written_value) ++corrupted_;
    return out;
}

std::unique_ptr<FaultHook> make_hook(const FaultSpec& spec) {
    return std::make_unique<FaultHook>(spec);
}

namespace {

// xorshift-free bounded sampling on top of mt19937_64 so fault lists are
// reproducible across standard libraries.
uint64_t bounded(std::mt19937_64& rng, uint64_t n) {
    uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

std::string canonical_key(const FaultSpec& s) { return spec_to_json_line(FaultSpec{"", s.body}); }

}  // namespace

std::vector<FaultSpec> generate_fault_list(uint64_t seed, size_t n, FaultKind kind,
                                           const FaultListConstraints& c,
                                           const simt::DeviceConfig& device, uint32_t first_id) {
    if (n < 1) throw ConstraintError("fault count must be >= 1");
    if (c.sm_ids.empty()) throw ConstraintError("sm_ids constraint is empty");
    for (uint32_t sm : c.sm_ids)
        if (sm >= device.num_sms) throw ConstraintError("sm_id constraint beyond device");
    if (c.bit_lo > c.bit_hi || c.bit_hi > 31) throw ConstraintError("bad bit range");

    uint32_t resident_threads = device.max_resident_warps_per_sm * device.warp_size;
    uint64_t space = 0;
    if (kind == FaultKind::REGISTER) {
        if (c.reg_lo > c.reg_hi) throw ConstraintError("bad register range");
        if (c.reg_hi >= device.regs_per_thread)
            throw ConstraintError("register range beyond device.regs_per_thread");
        space = uint64_t(c.sm_ids.size()) * resident_threads * (c.reg_hi - c.reg_lo + 1) *
                (c.bit_hi - c.bit_lo + 1) * 2;
    } else {
        if (c.units.empty()) throw ConstraintError("unit set is empty");
        for (auto u : c.units)
            if (u != isa::UnitClass::INT_CORE && u != isa::UnitClass::FP_CORE &&
                u != isa::UnitClass::SFU)
                throw ConstraintError("unit constraint must be INT_CORE, FP_CORE or SFU");
        if (c.lanes.empty()) throw ConstraintError("lane scope set is empty");
        for (const auto& l : c.lanes)
            if (l && *l >= device.warp_size) throw ConstraintError("lane constraint out of range");
        if (c.modes.empty()) throw ConstraintError("mode set is empty");
        space = uint64_t(c.sm_ids.size()) * c.units.size() * c.lanes.size() * c.modes.size() *
                (c.bit_hi - c.bit_lo + 1);
    }
    if (space < n)
        throw ConstraintError("constraint space holds only " + std::to_string(space) +
                              " distinct faults, " + std::to_string(n) + " requested");

    std::mt19937_64 rng(seed);
    std::vector<FaultSpec> out;
    std::set<std::string> seen;
    while (out.size() < n) {
        FaultSpec spec;
        if (kind == FaultKind::REGISTER) {
            RegisterFault rf;
            rf.sm_id = c.sm_ids[bounded(rng, c.sm_ids.size())];
            rf.thread_id = static_cast<uint32_t>(bounded(rng, resident_threads));
            rf.reg.index = static_cast<uint8_t>(c.reg_lo + bounded(rng, c.reg_hi - c.reg_lo + 1));
            rf.bit = static_cast<uint32_t>(c.bit_lo + bounded(rng, c.bit_hi - c.bit_lo + 1));
            rf.stuck_at = static_cast<uint32_t>(bounded(rng, 2));
            spec.body = rf;
        } else {
            UnitFault uf;
            uf.sm_id = c.sm_ids[bounded(rng, c.sm_ids.size())];
            uf.unit = c.units[bounded(rng, c.units.size())];
            uf.lane = c.lanes[bounded(rng, c.lanes.size())];
            uf.bit = static_cast<uint32_t>(c.bit_lo + bounded(rng, c.bit_hi - c.bit_lo + 1));
            uf.mode = c.modes[bounded(rng, c.modes.size())];
            spec.body = uf;
        }
        if (!seen.insert(canonical_key(spec)).second) continue;  // duplicate: resample
        out.push_back(std::move(spec));
    }
    for (size_t i = 0; i < out.size(); ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "F%06u", first_id + static_cast<uint32_t>(i));
        out[i].id = buf;
        validate_spec(out[i], device);
    }
    return out;
}

std::string spec_to_json_line(const FaultSpec& spec) {
    json j;
    j["id"] = spec.id;
    if (const auto* rf = std::get_if<RegisterFault>(&spec.body)) {
        j["kind"] = "register";
        j["sm"] = rf->sm_id;
        j["thread"] = rf->thread_id;
        j["reg"] = rf->reg.index;
        j["bit"] = rf->bit;
        j["stuck_at"] = rf->stuck_at;
    } else if (const auto* uf = std::get_if<UnitFault>(&spec.body)) {
        j["kind"] = "unit";
        j["sm"] = uf->sm_id;
        if (uf->lane)
            j["lane"] = *uf->lane;
        else
            j["lane"] = "all";
        j["unit"] = isa::unit_class_name(uf->unit);
        j["bit"] = uf->bit;
        j["mode"] = corrupt_mode_name(uf->mode);
    } else {
        const auto& tf = std::get<TransientFault>(spec.body);
        j["kind"] = "transient";
        j["mode"] = transient_kind_name(tf.kind);
        j["sm"] = tf.sm_id;
        j["thread"] = tf.thread_id;
        j["occurrence"] = tf.occurrence;
        j["bit"] = tf.bit;
    }
    return j.dump();
}

FaultSpec spec_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad fault-list line: ") + e.what());
    }
    try {
        FaultSpec spec;
        spec.id = j.at("id").get<std::string>();
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "register") {
            RegisterFault rf;
            rf.sm_id = j.at("sm").get<uint32_t>();
            rf.thread_id = j.at("thread").get<uint32_t>();
            rf.reg.index = j.at("reg").get<uint8_t>();
            rf.bit = j.at("bit").get<uint32_t>();
            rf.stuck_at = j.at("stuck_at").get<uint32_t>();
            spec.body = rf;
        } else if (kind == "unit") {
            UnitFault uf;
            uf.sm_id = j.at("sm").get<uint32_t>();
            const auto& lane = j.at("lane");
            if (lane.is_string()) {
                if (lane.get<std::string>() != "all")
                    throw FormatError("lane must be \"all\" or an integer");
                uf.lane = std::nullopt;
            } else {
                uf.lane = lane.get<uint32_t>();
            }
            auto unit = isa::unit_class_from_name(j.at("unit").get<std::string>());
            if (!unit) throw FormatError("unknown unit class in fault list");
            uf.unit = *unit;
            uf.bit = j.at("bit").get<uint32_t>();
            auto mode = corrupt_mode_from_name(j.at("mode").get<std::string>());
            if (!mode) throw FormatError("unknown corrupt mode in fault list");
            uf.mode = *mode;
            spec.body = uf;
        } else if (kind == "transient") {
            TransientFault tf;
            auto tk = transient_kind_from_name(j.at("mode").get<std::string>());
            if (!tk) throw FormatError("unknown transient mode in fault list");
            tf.kind = *tk;
            tf.sm_id = j.at("sm").get<uint32_t>();
            tf.thread_id = j.at("thread").get<uint32_t>();
            tf.occurrence = j.at("occurrence").get<uint64_t>();
            tf.bit = j.value("bit", 0u);
            spec.body = tf;
        } else {
            throw FormatError("unknown fault kind '" + kind + "'");
        }
        return spec;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad fault-list line: ") + e.what());
    }
}

void write_fault_list(const std::string& path, const std::vector<FaultSpec>& specs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for write: " + path);
    for (const auto& s : specs) out << spec_to_json_line(s) << "\n";
}

std::vector<FaultSpec> read_fault_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    std::vector<FaultSpec> specs;
    std::set<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        specs.push_back(spec_from_json_line(line));
        if (!ids.insert(specs.back().id).second)
            throw FormatError("duplicate fault id " + specs.back().id);
    }
    return specs;
}

}  // namespace faultsim::faults
