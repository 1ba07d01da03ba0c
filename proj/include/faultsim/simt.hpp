#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "faultsim/isa.hpp"

// Deterministic functional model of a multi-SM SIMT device. Blocks are
// dispatched round-robin over SMs, warps execute in lockstep with per-thread
// predication, and every general-register write can be routed through a
// WriteHook; that hook point is where fault injectors attach.

namespace faultsim::simt {

struct DeviceConfig {
    uint32_t num_sms = 1;
    uint32_t max_resident_warps_per_sm = 16;
    uint32_t warp_size = 32;  // fixed by the execution model
    uint32_t regs_per_thread = 16;  // [16, 64]
    uint32_t global_mem_words = 1u << 20;  // 32-bit words
    uint64_t instr_budget = 1ull << 40;  // warp-instructions per kernel launch

    void validate() const;  // throws ConfigError
};

struct LaunchConfig {
    uint32_t grid_blocks = 1;
    uint32_t threads_per_block = 1;  // padded to warps of 32 inside the SM
};

// Physical residency coordinate: the (warp slot, lane) position inside one SM
// that successive thread blocks occupy over time. Register faults address
// these coordinates, so every block wave landing on the slot sees the fault.
struct ResidentThreadCoord {
    uint32_t sm_id = 0;
    uint32_t resident_thread_id = 0;  // warp_slot * 32 + lane
    auto operator<=>(const ResidentThreadCoord&) const = default;
};

struct ThreadState {
    std::vector<uint32_t> regs;  // regs_per_thread entries, zero at block start
    std::array<bool, 8> preds{};
    bool active = false;
    uint32_t global_tid = 0;
};

enum class TrapKind : uint8_t { OutOfBoundsAccess, MisalignedAccess, Timeout };
const char* trap_kind_name(TrapKind k);
std::optional<TrapKind> trap_kind_from_name(std::string_view name);

struct Trap {
    TrapKind kind = TrapKind::Timeout;
    std::string kernel_name;
    uint32_t seq_no = 0;
    std::string detail;
};

// Transforms a value on its way into the destination register. Must not touch
// any simulator state; implementations may keep their own counters.
struct WriteHook {
    virtual ~WriteHook() = default;
    virtual uint32_t on_write(const ResidentThreadCoord& coord, const isa::Instruction& instr,
                              uint32_t written_value) = 0;
};

struct ExecStats {
    uint64_t instructions_executed = 0;  // warp-granularity issues
    std::vector<uint64_t> reg_write_counts;  // indexed by RegisterId
    std::vector<uint64_t> per_warp_retired;  // one entry per warp, execution order

    void accumulate(const ExecStats& other);
};

std::string stats_to_json(const ExecStats& s);

struct BlockPlacement {
    uint32_t sm_id = 0;
    uint32_t warp_slot_base = 0;
};

// Deterministic round-robin block scheduler: block b lands on SM b % num_sms;
// within an SM blocks take consecutive warp slots in arrival order, wrapping
// modulo max_resident_warps_per_sm (later waves re-use the same slots).
std::map<uint32_t, BlockPlacement> schedule_blocks(const LaunchConfig& launch,
                                                   const DeviceConfig& device);

using MemoryImage = std::vector<uint32_t>;

struct ExecResult {
    MemoryImage memory;
    ExecStats stats;
};

using ExecOutcome = std::variant<ExecResult, Trap>;

// Runs one kernel launch to completion. Deterministic: identical inputs give
// bit-identical memory and stats. Traps come back as values; non-uniform
// branching inside a warp throws DivergenceError.
ExecOutcome execute_kernel(const isa::Kernel& kernel, const LaunchConfig& launch,
                           const DeviceConfig& device, MemoryImage memory,
                           WriteHook* hook = nullptr);

// Pure ALU/SFU result for a register-writing opcode, given resolved source
// values. LD/ST/BRA/EXIT and the SETP family are handled by the executor.
uint32_t eval_alu(isa::Opcode op, const std::vector<uint32_t>& src);

// SETP comparison result.
bool eval_cmp(isa::Opcode op, isa::CmpOp cmp, uint32_t a, uint32_t b);

// Raw little-endian 32-bit word images.
void write_memory_image(const std::string& path, const MemoryImage& mem);
MemoryImage read_memory_image(const std::string& path);

}  // namespace faultsim::simt
