#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "faultsim/isa.hpp"
#include "faultsim/simt.hpp"

// Permanent-fault models (register-file stuck-at and functional-unit output
// corruption) plus the four classic transient corruption modes, all realized
// as write hooks. One FaultSpec is injected per run and persists across every
// kernel of that run.

namespace faultsim::faults {

enum class CorruptMode : uint8_t { FLIP, STUCK_AT_0, STUCK_AT_1 };
const char* corrupt_mode_name(CorruptMode m);
std::optional<CorruptMode> corrupt_mode_from_name(std::string_view name);

// Single-bit corruption; all other bits pass through untouched.
uint32_t corrupt_value(uint32_t value, uint32_t bit, CorruptMode mode);

// The register-file fault quintuple: the fault lives at one physical resident
// thread coordinate and forces one bit of one destination register.
struct RegisterFault {
    uint32_t sm_id = 0;
    uint32_t thread_id = 0;  // resident thread: warp_slot * 32 + lane
    isa::RegisterId reg{};
    uint32_t bit = 0;  // [0, 31], single-bit mask
    uint32_t stuck_at = 0;  // 0 | 1
};

// Functional-unit fault: corrupts the output of every instruction executed on
// the chosen unit class of one SM (optionally a single lane's SP).
struct UnitFault {
    uint32_t sm_id = 0;
    std::optional<uint32_t> lane;  // nullopt = ALL_LANES
    isa::UnitClass unit = isa::UnitClass::FP_CORE;  // INT_CORE | FP_CORE | SFU
    uint32_t bit = 0;
    CorruptMode mode = CorruptMode::FLIP;
};

enum class TransientKind : uint8_t { SINGLE_BIT_FLIP, TWO_ADJACENT_BIT_FLIP, RANDOM_VALUE, ALL_ZERO };
const char* transient_kind_name(TransientKind k);
std::optional<TransientKind> transient_kind_from_name(std::string_view name);

// One-shot corruption of the n-th register write retired by one resident
// thread. Supported for hook-API completeness; permanent campaigns exclude it.
struct TransientFault {
    TransientKind kind = TransientKind::SINGLE_BIT_FLIP;
    uint32_t sm_id = 0;
    uint32_t thread_id = 0;
    uint64_t occurrence = 0;  // 0-based index among that thread's register writes
    uint32_t bit = 0;  // flip kinds; TWO_ADJACENT uses bits {bit, bit+1}, bit <= 30
};

struct FaultSpec {
    std::string id;  // campaign-unique, e.g. "F000001"
    std::variant<RegisterFault, UnitFault, TransientFault> body;

    bool is_register() const { return std::holds_alternative<RegisterFault>(body); }
    bool is_unit() const { return std::holds_alternative<UnitFault>(body); }
    bool is_transient() const { return std::holds_alternative<TransientFault>(body); }
};

// Static match of a spec against one register write site. Transient occurrence
// counting is stateful and lives in the hook; this checks the static part.
bool matches(const FaultSpec& spec, const simt::ResidentThreadCoord& coord,
             const isa::Instruction& instr);

// Throws ConstraintError when the spec addresses coordinates or registers the
// device does not have.
void validate_spec(const FaultSpec& spec, const simt::DeviceConfig& device);

class FaultHook : public simt::WriteHook {
  public:
    explicit FaultHook(FaultSpec spec);
    uint32_t on_write(const simt::ResidentThreadCoord& coord, const isa::Instruction& instr,
                      uint32_t written_value) override;

    // writes where the static match held / where the value actually changed
    uint64_t matched_writes() const { return matched_; }
    uint64_t corrupted_writes() const { return corrupted_; }
    const FaultSpec& spec() const { return spec_; }

  private:
    FaultSpec spec_;
    uint64_t matched_ = 0;
    uint64_t corrupted_ = 0;
    uint64_t seen_ = 0;  // transient occurrence counter
    bool fired_ = false;
    uint32_t random_payload_ = 0;  // RANDOM_VALUE, derived from the spec id
};

std::unique_ptr<FaultHook> make_hook(const FaultSpec& spec);

enum class FaultKind : uint8_t { REGISTER, UNIT };

struct FaultListConstraints {
    std::vector<uint32_t> sm_ids{0};
    // REGISTER dimension
    uint32_t reg_lo = 0, reg_hi = 9;
    // shared
    uint32_t bit_lo = 0, bit_hi = 31;
    // UNIT dimensions
    std::vector<isa::UnitClass> units{isa::UnitClass::FP_CORE};
    std::vector<std::optional<uint32_t>> lanes{std::nullopt};  // nullopt = ALL_LANES
    std::vector<CorruptMode> modes{CorruptMode::FLIP};
};

// Seeded, uniform-per-dimension sampler; duplicates are resampled away and ids
// run F%06u from first_id. Throws ConstraintError when the constraint space
// cannot yield n distinct faults.
std::vector<FaultSpec> generate_fault_list(uint64_t seed, size_t n, FaultKind kind,
                                           const FaultListConstraints& constraints,
                                           const simt::DeviceConfig& device,
                                           uint32_t first_id = 1);

// Line-oriented JSON fault-list files.
void write_fault_list(const std::string& path, const std::vector<FaultSpec>& specs);
std::vector<FaultSpec> read_fault_list(const std::string& path);

std::string spec_to_json_line(const FaultSpec& spec);
FaultSpec spec_from_json_line(const std::string& line);

}  // namespace faultsim::faults
