#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "faultsim/cnn.hpp"
#include "faultsim/faults.hpp"
#include "faultsim/simt.hpp"

// Campaign orchestration: golden run, one-fault-at-a-time faulty runs, the
// four-way outcome classification and table-style aggregation. Runs are
// embarrassingly parallel; reports are byte-identical for any --jobs setting.

namespace faultsim::campaign {

enum class OutcomeKind : uint8_t { MASKED, SDC_SAFE, SDC_CRITICAL, DUE, TOOL_ERROR };
const char* outcome_name(OutcomeKind k);
std::optional<OutcomeKind> outcome_from_name(std::string_view name);

struct Outcome {
    OutcomeKind kind = OutcomeKind::MASKED;
    std::optional<simt::TrapKind> trap;  // DUE only

    bool operator==(const Outcome&) const = default;
};

// Lowest index wins ties.
size_t argmax(const cnn::Tensor& v);

// Bit-identical vectors are MASKED; same top-1 is SDC_SAFE; a changed top-1 is
// SDC_CRITICAL; traps are DUE.
Outcome classify(const cnn::Tensor& golden, const cnn::InferOutcome& faulty);

// severity: DUE > SDC_CRITICAL > SDC_SAFE > MASKED
int severity_rank(OutcomeKind k);

struct CampaignConfig {
    std::string model_path;
    std::string images_path;
    std::string labels_path;
    std::string fault_list_path;
    std::string out_dir;
    uint32_t image_count = 3;  // images inferred per fault
    simt::DeviceConfig device;
    uint64_t instr_budget = 0;  // 0 = 20x the worst golden kernel
    uint64_t seed = 0;
    uint32_t parallelism = 1;
    bool save_vectors = false;  // audit copies of faulty probability vectors
};

CampaignConfig load_campaign_config(const std::string& path);
simt::DeviceConfig device_config_from_json_file(const std::string& path);

struct RunRecord {
    std::string fault_id;
    uint32_t image_index = 0;
    Outcome outcome;
    uint64_t corrupted_writes = 0;
    uint32_t golden_top1 = 0;
    std::optional<uint32_t> faulty_top1;  // absent on DUE / TOOL_ERROR
};

struct FaultResult {
    std::string fault_id;
    std::vector<RunRecord> runs;  // one per image, ascending image_index
    Outcome collapsed;            // severity max; TOOL_ERROR if any run errored
    uint64_t corrupted_writes_total = 0;
};

Outcome collapse(const std::vector<RunRecord>& runs);
FaultResult make_fault_result(std::string fault_id, std::vector<RunRecord> runs);

struct CategoryStat {
    uint64_t count = 0;
    double percent = 0.0;
};

struct ReportTable {
    uint64_t total = 0;  // classified entries (TOOL_ERROR excluded)
    std::map<OutcomeKind, CategoryStat> categories;  // the four real categories
    std::map<simt::TrapKind, uint64_t> due_by_trap;
};

struct CampaignReport {
    ReportTable per_run;    // (fault, image) granularity
    ReportTable per_fault;  // severity-collapsed granularity
    uint64_t tool_error_runs = 0;
    uint64_t tool_error_faults = 0;
    std::string metadata_json;  // seed, device, model, fault-list digest
};

// Throws EmptyResults on an empty input.
CampaignReport aggregate(const std::vector<FaultResult>& results);

struct GoldenResult {
    std::vector<cnn::Tensor> vectors;       // one per selected image
    std::vector<cnn::InferStats> stats;     // per image
    uint64_t max_kernel_instrs = 0;         // worst single launch
};

// Fault-free run over the selected images, cross-checked bit-exactly against
// the sequential reference; a mismatch or trap is a hard failure.
GoldenResult run_golden(const CampaignConfig& config);

// Full campaign: golden, per-fault runs, CSV + report files under out_dir.
// With resume = true, fault ids already complete in results.csv are kept.
using ProgressFn = std::function<void(size_t done, size_t total)>;
CampaignReport run_campaign(const CampaignConfig& config, bool resume = false,
                            ProgressFn progress = {});

// Destination-register write frequencies over a fault-free run, sorted by
// count descending (ties by register index); zero-count registers omitted.
std::vector<std::pair<isa::RegisterId, uint64_t>> profile_registers(
    const cnn::Model& model, const std::vector<cnn::Tensor>& images,
    const simt::DeviceConfig& device);

// ---- file formats ----

inline constexpr const char* kResultsCsvHeader =
    "fault_id,image_index,outcome,trap_kind,corrupted_writes,golden_top1,faulty_top1";

void write_results_csv(const std::string& path, const std::vector<FaultResult>& results);

// Groups rows by fault id. If expected_runs > 0, faults with fewer rows are
// dropped (resume support).
std::vector<FaultResult> read_results_csv(const std::string& path, uint32_t expected_runs = 0);

std::string report_to_json(const CampaignReport& report);
std::string report_to_table(const CampaignReport& report);
std::string report_to_csv(const CampaignReport& report);

uint64_t fnv1a_file_digest(const std::string& path);

}  // namespace faultsim::campaign
