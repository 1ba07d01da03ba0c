#include "faultsim/campaign.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"
#include "json.hpp"

namespace faultsim::campaign {

using nlohmann::json;
namespace fs = std::filesystem;

const char* outcome_name(OutcomeKind k) {
    switch (k) {
        case OutcomeKind::MASKED: return "MASKED";
        case OutcomeKind::SDC_SAFE: return "SDC_SAFE";
        case OutcomeKind::SDC_CRITICAL: return "SDC_CRITICAL";
        case OutcomeKind::DUE: return "DUE";
        case OutcomeKind::TOOL_ERROR: return "TOOL_ERROR";
    }
    return "?";
}

std::optional<OutcomeKind> outcome_from_name(std::string_view name) {
    if (name == "MASKED") return OutcomeKind::MASKED;
    if (name == "SDC_SAFE") return OutcomeKind::SDC_SAFE;
    if (name == "SDC_CRITICAL") return OutcomeKind::SDC_CRITICAL;
    if (name == "DUE") return OutcomeKind::DUE;
    if (name == "TOOL_ERROR") return OutcomeKind::TOOL_ERROR;
    return std::nullopt;
}

size_t argmax(const cnn::Tensor& v) {
    size_t best = 0;
    for (size_t i = 1; i < v.data.size(); ++i)
        if (v.data[i] > v.data[best]) best = i;
    return best;
}

Outcome classify(const cnn::Tensor& golden, const cnn::InferOutcome& faulty) {
    if (const auto* trap = std::get_if<simt::Trap>(&faulty)) return {OutcomeKind::DUE, trap->kind};
    const auto& f = std::get<cnn::Tensor>(faulty);
    if (f.data.size() != golden.data.size())
        throw LengthMismatch("golden and faulty vectors differ in length");
    bool identical = true;
    for (size_t i = 0; i < f.data.size(); ++i)
        if (fp::bits(f.data[i]) != fp::bits(golden.data[i])) {
            identical = false;
            break;
        }
    if (identical) return {OutcomeKind::MASKED, std::nullopt};
    return {argmax(f) == argmax(golden) ? OutcomeKind::SDC_SAFE : OutcomeKind::SDC_CRITICAL,
            std::nullopt};
}

int severity_rank(OutcomeKind k) {
    switch (k) {
        case OutcomeKind::MASKED: return 0;
        case OutcomeKind::SDC_SAFE: return 1;
        case OutcomeKind::SDC_CRITICAL: return 2;
        case OutcomeKind::DUE: return 3;
        case OutcomeKind::TOOL_ERROR: return 4;  // handled out-of-band
    }
    return 0;
}

Outcome collapse(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw EmptyResults("cannot collapse a fault with no runs");
    // any tool error poisons the fault so it never leaks into the categories
    for (const auto& r : runs)
        if (r.outcome.kind == OutcomeKind::TOOL_ERROR) return {OutcomeKind::TOOL_ERROR, {}};
    Outcome best = runs.front().outcome;
    for (const auto& r : runs)
        if (severity_rank(r.outcome.kind) > severity_rank(best.kind)) best = r.outcome;
    return best;
}

FaultResult make_fault_result(std::string fault_id, std::vector<RunRecord> runs) {
    FaultResult fr;
    fr.fault_id = std::move(fault_id);
    std::sort(runs.begin(), runs.end(),
              [](const RunRecord& a, const RunRecord& b) { return a.image_index < b.image_index; });
    fr.runs = std::move(runs);
    fr.collapsed = collapse(fr.runs);
    for (const auto& r : fr.runs) fr.corrupted_writes_total += r.corrupted_writes;
    return fr;
}

namespace {

const std::array<OutcomeKind, 4> kRealCategories = {OutcomeKind::DUE, OutcomeKind::SDC_SAFE,
                                                    OutcomeKind::SDC_CRITICAL, OutcomeKind::MASKED};

void fill_percentages(ReportTable& t) {
    for (auto k : kRealCategories) {
        auto& stat = t.categories[k];  // ensure all four rows exist
        stat.percent = t.total == 0 ? 0.0 : 100.0 * double(stat.count) / double(t.total);
    }
}

}  // namespace

CampaignReport aggregate(const std::vector<FaultResult>& results) {
    if (results.empty()) throw EmptyResults("no fault results to aggregate");
    CampaignReport rep;
    for (auto k : kRealCategories) {
        rep.per_run.categories[k] = {};
        rep.per_fault.categories[k] = {};
    }
    for (const auto& fr : results) {
        for (const auto& run : fr.runs) {
            if (run.outcome.kind == OutcomeKind::TOOL_ERROR) {
                ++rep.tool_error_runs;
                continue;
            }
            ++rep.per_run.total;
            ++rep.per_run.categories[run.outcome.kind].count;
            if (run.outcome.kind == OutcomeKind::DUE && run.outcome.trap)
                ++rep.per_run.due_by_trap[*run.outcome.trap];
        }
        if (fr.collapsed.kind == OutcomeKind::TOOL_ERROR) {
            ++rep.tool_error_faults;
            continue;
        }
        ++rep.per_fault.total;
        ++rep.per_fault.categories[fr.collapsed.kind].count;
        if (fr.collapsed.kind == OutcomeKind::DUE && fr.collapsed.trap)
            ++rep.per_fault.due_by_trap[*fr.collapsed.trap];
    }
    fill_percentages(rep.per_run);
    fill_percentages(rep.per_fault);
    return rep;
}

// ---- config ----

namespace {

simt::DeviceConfig device_from_json(const json& j) {
    simt::DeviceConfig d;
    d.num_sms = j.value("num_sms", d.num_sms);
    d.max_resident_warps_per_sm = j.value("max_resident_warps_per_sm", d.max_resident_warps_per_sm);
    d.warp_size = j.value("warp_size", d.warp_size);
    d.regs_per_thread = j.value("regs_per_thread", d.regs_per_thread);
    d.global_mem_words = j.value("global_mem_words", d.global_mem_words);
    d.instr_budget = j.value("instr_budget", d.instr_budget);
    d.validate();
    return d;
}

json device_to_json(const simt::DeviceConfig& d) {
    json j;
    j["num_sms"] = d.num_sms;
    j["max_resident_warps_per_sm"] = d.max_resident_warps_per_sm;
    j["warp_size"] = d.warp_size;
    j["regs_per_thread"] = d.regs_per_thread;
    j["global_mem_words"] = d.global_mem_words;
    j["instr_budget"] = d.instr_budget;
    return j;
}

std::string resolve_rel(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path.string() : (base_dir / path).string();
}

}  // namespace

simt::DeviceConfig device_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open device config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad device config JSON: ") + e.what());
    }
    return device_from_json(j);
}

CampaignConfig load_campaign_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open campaign config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad campaign config JSON: ") + e.what());
    }
    try {
        CampaignConfig c;
        fs::path base = fs::path(path).parent_path();
        c.model_path = resolve_rel(base, j.at("model").get<std::string>());
        c.images_path = resolve_rel(base, j.at("images").get<std::string>());
        c.labels_path = resolve_rel(base, j.at("labels").get<std::string>());
        c.fault_list_path = resolve_rel(base, j.at("fault_list").get<std::string>());
        c.out_dir = resolve_rel(base, j.at("out_dir").get<std::string>());
        c.image_count = j.value("image_count", 3u);
        if (j.contains("device")) c.device = device_from_json(j.at("device"));
        c.instr_budget = j.value("instr_budget", 0ull);
        c.seed = j.value("seed", 0ull);
        c.parallelism = j.value("jobs", 1u);
        c.save_vectors = j.value("save_vectors", false);
        if (c.image_count < 1) throw FormatError("image_count must be >= 1");
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad campaign config: ") + e.what());
    }
}

// ---- golden ----

namespace {

struct LoadedCampaign {
    cnn::Model model;
    cnn::Dataset dataset;
    cnn::CompiledModel compiled;
    GoldenResult golden;
    simt::DeviceConfig golden_device;
    simt::DeviceConfig faulty_device;
};

LoadedCampaign load_and_golden(const CampaignConfig& config) {
    LoadedCampaign lc;
    lc.model = cnn::load_model(config.model_path);
    lc.dataset = config.labels_path.empty()
                     ? cnn::load_idx_images(config.images_path)
                     : cnn::load_idx(config.images_path, config.labels_path);
    if (config.image_count < 1 || config.image_count > lc.dataset.images.size())
        throw ConfigError("image_count must be in [1, " +
                          std::to_string(lc.dataset.images.size()) + "]");

    lc.golden_device = config.device;
    lc.compiled = cnn::compile_model(lc.model, lc.golden_device);

    for (uint32_t i = 0; i < config.image_count; ++i) {
        const cnn::Tensor& image = lc.dataset.images[i];
        cnn::InferStats stats;
        auto outcome = cnn::infer(lc.compiled, image, lc.golden_device, nullptr, &stats);
        if (const auto* trap = std::get_if<simt::Trap>(&outcome))
            throw CampaignFailure("golden run trapped on image " + std::to_string(i) + ": " +
                                  simt::trap_kind_name(trap->kind) + " in " + trap->kernel_name +
                                  " (" + trap->detail + ")");
        cnn::Tensor vec = std::get<cnn::Tensor>(outcome);

        cnn::Tensor ref = cnn::reference_infer(lc.model, image);
        if (ref.data.size() != vec.data.size())
            throw CampaignFailure("golden/reference length mismatch");
        for (size_t k = 0; k < ref.data.size(); ++k)
            if (fp::bits(ref.data[k]) != fp::bits(vec.data[k]))
                throw CampaignFailure(
                    "golden run disagrees with the sequential reference on image " +
                    std::to_string(i) + " component " + std::to_string(k) +
                    "; simulator defect, aborting");

        for (uint64_t n : stats.per_kernel_instrs)
            lc.golden.max_kernel_instrs = std::max(lc.golden.max_kernel_instrs, n);
        lc.golden.vectors.push_back(std::move(vec));
        lc.golden.stats.push_back(std::move(stats));
    }

    lc.faulty_device = config.device;
    lc.faulty_device.instr_budget =
        config.instr_budget ? config.instr_budget : 20 * std::max<uint64_t>(1, lc.golden.max_kernel_instrs);
    return lc;
}

std::string tensor_hex(const cnn::Tensor& t) {
    std::string s;
    char buf[12];
    for (size_t i = 0; i < t.data.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%08x", fp::bits(t.data[i]));
        if (i) s += " ";
        s += buf;
    }
    return s;
}

json golden_to_json(const GoldenResult& g) {
    json j;
    j["image_count"] = g.vectors.size();
    j["max_kernel_instrs"] = g.max_kernel_instrs;
    json vecs = json::array();
    for (const auto& v : g.vectors) {
        json e;
        e["bits"] = tensor_hex(v);
        e["values"] = v.data;
        vecs.push_back(e);
    }
    j["vectors"] = vecs;
    json stats = json::array();
    for (const auto& s : g.stats) {
        json e;
        e["instructions_executed"] = s.exec.instructions_executed;
        e["reg_write_counts"] = s.exec.reg_write_counts;
        e["per_kernel_instrs"] = s.per_kernel_instrs;
        stats.push_back(e);
    }
    j["stats"] = stats;
    return j;
}

}  // namespace

GoldenResult run_golden(const CampaignConfig& config) {
    return load_and_golden(config).golden;
}

std::vector<std::pair<isa::RegisterId, uint64_t>> profile_registers(
    const cnn::Model& model, const std::vector<cnn::Tensor>& images,
    const simt::DeviceConfig& device) {
    cnn::CompiledModel compiled = cnn::compile_model(model, device);
    std::vector<uint64_t> counts(device.regs_per_thread, 0);
    for (const auto& image : images) {
        cnn::InferStats stats;
        auto outcome = cnn::infer(compiled, image, device, nullptr, &stats);
        if (const auto* trap = std::get_if<simt::Trap>(&outcome))
            throw CampaignFailure(std::string("profiling run trapped: ") +
                                  simt::trap_kind_name(trap->kind));
        for (size_t r = 0; r < stats.exec.reg_write_counts.size(); ++r)
            counts[r] += stats.exec.reg_write_counts[r];
    }
    std::vector<std::pair<isa::RegisterId, uint64_t>> table;
    for (size_t r = 0; r < counts.size(); ++r)
        if (counts[r] > 0) table.push_back({isa::RegisterId{static_cast<uint8_t>(r)}, counts[r]});
    std::sort(table.begin(), table.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first.index < b.first.index;
    });
    return table;
}

// ---- results CSV ----

namespace {

std::string run_to_csv_row(const RunRecord& r) {
    std::ostringstream out;
    out << r.fault_id << "," << r.image_index << "," << outcome_name(r.outcome.kind) << ",";
    if (r.outcome.trap) out << simt::trap_kind_name(*r.outcome.trap);
    out << "," << r.corrupted_writes << "," << r.golden_top1 << ",";
    if (r.faulty_top1) out << *r.faulty_top1;
    out << "\n";
    return out.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<FaultResult>& results) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for write: " + path);
    out << kResultsCsvHeader << "\n";
    for (const auto& fr : results)
        for (const auto& r : fr.runs) out << run_to_csv_row(r);
}

std::vector<FaultResult> read_results_csv(const std::string& path, uint32_t expected_runs) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw EmptyResults("results file is empty: " + path);
    if (line != kResultsCsvHeader) throw FormatError("unexpected results CSV header in " + path);

    std::map<std::string, std::vector<RunRecord>> by_fault;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 7) throw FormatError("bad results row: " + line);
        RunRecord r;
        r.fault_id = f[0];
        r.image_index = static_cast<uint32_t>(std::stoul(f[1]));
        auto kind = outcome_from_name(f[2]);
        if (!kind) throw FormatError("unknown outcome '" + f[2] + "'");
        r.outcome.kind = *kind;
        if (!f[3].empty()) {
            auto trap = simt::trap_kind_from_name(f[3]);
            if (!trap) throw FormatError("unknown trap kind '" + f[3] + "'");
            r.outcome.trap = trap;
        }
        r.corrupted_writes = std::stoull(f[4]);
        r.golden_top1 = static_cast<uint32_t>(std::stoul(f[5]));
        if (!f[6].empty()) r.faulty_top1 = static_cast<uint32_t>(std::stoul(f[6]));
        if (!by_fault.count(r.fault_id)) order.push_back(r.fault_id);
        by_fault[r.fault_id].push_back(std::move(r));
    }

    std::vector<FaultResult> out;
    for (const auto& id : order) {
        auto& runs = by_fault[id];
        if (expected_runs > 0 && runs.size() != expected_runs) continue;  // incomplete: redo
        out.push_back(make_fault_result(id, std::move(runs)));
    }
    if (out.empty() && expected_runs == 0) throw EmptyResults("no result rows in " + path);
    return out;
}

// ---- report renderings ----

namespace {

json table_to_json(const ReportTable& t) {
    json j;
    j["total"] = t.total;
    json cats;
    for (auto k : kRealCategories) {
        const auto& stat = t.categories.at(k);
        cats[outcome_name(k)] = {{"count", stat.count}, {"percent", stat.percent}};
    }
    j["categories"] = cats;
    json due;
    for (const auto& [trap, count] : t.due_by_trap) due[simt::trap_kind_name(trap)] = count;
    j["due_by_trap"] = due;
    return j;
}

}  // namespace

std::string report_to_json(const CampaignReport& report) {
    json j;
    if (!report.metadata_json.empty()) j["metadata"] = json::parse(report.metadata_json);
    j["per_run"] = table_to_json(report.per_run);
    j["per_fault"] = table_to_json(report.per_fault);
    j["tool_errors"] = {{"runs", report.tool_error_runs}, {"faults", report.tool_error_faults}};
    return j.dump(2) + "\n";
}

std::string report_to_csv(const CampaignReport& report) {
    std::ostringstream out;
    out << "granularity,category,count,percent\n";
    auto emit = [&](const char* gran, const ReportTable& t) {
        for (auto k : kRealCategories) {
            const auto& stat = t.categories.at(k);
            char pct[32];
            std::snprintf(pct, sizeof pct, "%.17g", stat.percent);
            out << gran << "," << outcome_name(k) << "," << stat.count << "," << pct << "\n";
        }
        for (const auto& [trap, count] : t.due_by_trap)
            out << gran << "_due," << simt::trap_kind_name(trap) << "," << count << ",\n";
    };
    emit("per_run", report.per_run);
    emit("per_fault", report.per_fault);
    out << "tool_errors,runs," << report.tool_error_runs << ",\n";
    out << "tool_errors,faults," << report.tool_error_faults << ",\n";
    return out.str();
}

std::string report_to_table(const CampaignReport& report) {
    std::ostringstream out;
    auto emit = [&](const char* title, const ReportTable& t, uint64_t tool_errors) {
        out << title << "  (total " << t.total << ", tool errors excluded: " << tool_errors
            << ")\n";
        out << "  DUE (%)    SDC safe (%)    SDC Critical (%)    Masked (%)\n";
        char line[128];
        std::snprintf(line, sizeof line, "  %-10.2f %-15.2f %-19.2f %-10.2f\n",
                      t.categories.at(OutcomeKind::DUE).percent,
                      t.categories.at(OutcomeKind::SDC_SAFE).percent,
                      t.categories.at(OutcomeKind::SDC_CRITICAL).percent,
                      t.categories.at(OutcomeKind::MASKED).percent);
        out << line;
        if (!t.due_by_trap.empty()) {
            out << "  DUE breakdown:";
            for (const auto& [trap, count] : t.due_by_trap)
                out << " " << simt::trap_kind_name(trap) << "=" << count;
            out << "\n";
        }
    };
    emit("per (fault,image) runs", report.per_run, report.tool_error_runs);
    emit("per fault (severity-collapsed)", report.per_fault, report.tool_error_faults);
    return out.str();
}

uint64_t fnv1a_file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    uint64_t h = 1469598103934665603ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// ---- campaign runner ----

namespace {

RunRecord run_one(const LoadedCampaign& lc, const faults::FaultSpec& spec, uint32_t image_index) {
    RunRecord rec;
    rec.fault_id = spec.id;
    rec.image_index = image_index;
    rec.golden_top1 = static_cast<uint32_t>(argmax(lc.golden.vectors[image_index]));

    auto hook = faults::make_hook(spec);
    try {
        auto outcome =
            cnn::infer(lc.compiled, lc.dataset.images[image_index], lc.faulty_device, hook.get());
        rec.outcome = classify(lc.golden.vectors[image_index], outcome);
        if (const auto* vec = std::get_if<cnn::Tensor>(&outcome))
            rec.faulty_top1 = static_cast<uint32_t>(argmax(*vec));
    } catch (const std::exception&) {
        // DivergenceError and any other per-run failure: never let simulator
        // limitations contaminate the four real categories
        rec.outcome = {OutcomeKind::TOOL_ERROR, std::nullopt};
    }
    rec.corrupted_writes = hook->corrupted_writes();
    return rec;
}

void save_fault_vectors(const std::string& dir, const LoadedCampaign& lc,
                        const faults::FaultSpec& spec) {
    json j;
    j["fault_id"] = spec.id;
    json per_image = json::array();
    for (uint32_t i = 0; i < lc.golden.vectors.size(); ++i) {
        auto hook = faults::make_hook(spec);
        auto outcome = cnn::infer(lc.compiled, lc.dataset.images[i], lc.faulty_device, hook.get());
        json e;
        e["image_index"] = i;
        if (const auto* vec = std::get_if<cnn::Tensor>(&outcome))
            e["bits"] = tensor_hex(*vec);
        else
            e["trap"] = simt::trap_kind_name(std::get<simt::Trap>(outcome).kind);
        per_image.push_back(e);
    }
    j["vectors"] = per_image;
    std::ofstream out(dir + "/" + spec.id + ".json");
    out << j.dump(2) << "\n";
}

}  // namespace

CampaignReport run_campaign(const CampaignConfig& config, bool resume, ProgressFn progress) {
    LoadedCampaign lc = load_and_golden(config);

    auto fault_list = faults::read_fault_list(config.fault_list_path);
    if (fault_list.empty()) throw EmptyResults("fault list is empty: " + config.fault_list_path);
    for (const auto& spec : fault_list) faults::validate_spec(spec, lc.faulty_device);

    fs::create_directories(config.out_dir);
    const std::string csv_path = config.out_dir + "/results.csv";
    const std::string report_path = config.out_dir + "/report.json";
    const std::string golden_path = config.out_dir + "/golden.json";

    {
        std::ofstream gout(golden_path);
        if (!gout) throw Error("cannot open for write: " + golden_path);
        gout << golden_to_json(lc.golden).dump(2) << "\n";
    }

    // carry over complete faults when resuming
    std::map<std::string, FaultResult> done;
    if (resume && fs::exists(csv_path)) {
        for (auto& fr : read_results_csv(csv_path, config.image_count)) {
            done.emplace(fr.fault_id, std::move(fr));
        }
        // drop stale ids that are no longer in the fault list
        std::set<std::string> wanted;
        for (const auto& s : fault_list) wanted.insert(s.id);
        for (auto it = done.begin(); it != done.end();)
            it = wanted.count(it->first) ? std::next(it) : done.erase(it);
    }

    std::vector<const faults::FaultSpec*> todo;
    for (const auto& spec : fault_list)
        if (!done.count(spec.id)) todo.push_back(&spec);

    // incremental append keeps interrupted campaigns resumable
    std::ofstream incr(csv_path, std::ios::trunc);
    if (!incr) throw Error("cannot open for write: " + csv_path);
    incr << kResultsCsvHeader << "\n";
    for (const auto& [id, fr] : done)
        for (const auto& r : fr.runs) incr << run_to_csv_row(r);
    incr.flush();

    std::mutex mu;
    std::atomic<size_t> next{0};
    std::atomic<size_t> completed{0};
    std::vector<FaultResult> fresh(todo.size());
    uint32_t jobs = std::max(1u, config.parallelism);

    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            const faults::FaultSpec& spec = *todo[i];
            std::vector<RunRecord> runs;
            for (uint32_t img = 0; img < config.image_count; ++img)
                runs.push_back(run_one(lc, spec, img));
            FaultResult fr = make_fault_result(spec.id, std::move(runs));
            {
                std::lock_guard<std::mutex> lock(mu);
                for (const auto& r : fr.runs) incr << run_to_csv_row(r);
                incr.flush();
            }
            fresh[i] = std::move(fr);
            size_t done = completed.fetch_add(1) + 1;
            if (progress) progress(done, todo.size());
        }
    };
    std::vector<std::thread> pool;
    for (uint32_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    incr.close();

    // final artifacts in fault-list order, byte-identical for any job count
    std::vector<FaultResult> results;
    size_t fresh_idx = 0;
    for (const auto& spec : fault_list) {
        auto it = done.find(spec.id);
        if (it != done.end())
            results.push_back(std::move(it->second));
        else
            results.push_back(std::move(fresh[fresh_idx++]));
    }
    write_results_csv(csv_path, results);

    if (config.save_vectors) {
        fs::create_directories(config.out_dir + "/vectors");
        for (const auto& spec : fault_list) save_fault_vectors(config.out_dir + "/vectors", lc, spec);
    }

    CampaignReport report = aggregate(results);
    json meta;
    meta["model"] = lc.model.name;
    meta["seed"] = config.seed;
    meta["image_count"] = config.image_count;
    meta["faults"] = fault_list.size();
    meta["device"] = device_to_json(lc.faulty_device);
    meta["instr_budget"] = lc.faulty_device.instr_budget;
    char digest[24];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(fnv1a_file_digest(config.fault_list_path)));
    meta["fault_list_digest"] = digest;
    report.metadata_json = meta.dump();

    std::ofstream rout(report_path);
    if (!rout) throw Error("cannot open for write: " + report_path);
    rout << report_to_json(report);
    return report;
}

}  // namespace faultsim::campaign
