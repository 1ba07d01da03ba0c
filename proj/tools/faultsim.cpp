// faultsim: batch front end for the SIMT fault-injection pipeline:
//   profile    register write frequencies over a fault-free run
//   golden     fault-free probability vectors + stats
//   gen-faults seeded fault-list sampling
//   campaign   full injection campaign (results.csv + report.json)
//   report     aggregate a results CSV as table / json / csv
//
// Exit codes: 0 success, 1 campaign-level failure (golden run failed),
// 2 usage or input errors. FAULTSIM_LOG={error|info|debug} controls stderr
// diagnostics; data outputs go to files (report's table mode prints to stdout).

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "faultsim/campaign.hpp"
#include "faultsim/cnn.hpp"
#include "faultsim/errors.hpp"
#include "faultsim/faults.hpp"
#include "faultsim/fixture.hpp"
#include "json.hpp"

namespace {

using namespace faultsim;

int g_log_level = 0;  // 0 error, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::fprintf(stderr, "[faultsim] %s\n", msg.c_str());
}

void init_log_level() {
    const char* env = std::getenv("FAULTSIM_LOG");
    if (!env) return;
    std::string v(env);
    if (v == "info") g_log_level = 1;
    if (v == "debug") g_log_level = 2;
}

simt::DeviceConfig load_device(const std::string& path) {
    if (path.empty()) return simt::DeviceConfig{};
    return campaign::device_config_from_json_file(path);
}

cnn::Dataset load_dataset(const std::string& images, const std::string& labels) {
    return labels.empty() ? cnn::load_idx_images(images) : cnn::load_idx(images, labels);
}

// "0..9" or "4"
std::pair<uint32_t, uint32_t> parse_range(const std::string& s) {
    auto pos = s.find("..");
    if (pos == std::string::npos) {
        uint32_t v = static_cast<uint32_t>(std::stoul(s));
        return {v, v};
    }
    return {static_cast<uint32_t>(std::stoul(s.substr(0, pos))),
            static_cast<uint32_t>(std::stoul(s.substr(pos + 2)))};
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct ProfileArgs {
    std::string model, images, labels, device, out;
    uint32_t count = 1;
};

int cmd_profile(const ProfileArgs& a) {
    auto model = cnn::load_model(a.model);
    auto ds = load_dataset(a.images, a.labels);
    if (a.count < 1 || a.count > ds.images.size())
        throw ConfigError("--count must be in [1, " + std::to_string(ds.images.size()) + "]");
    auto device = load_device(a.device);
    std::vector<cnn::Tensor> images(ds.images.begin(), ds.images.begin() + a.count);
    auto table = campaign::profile_registers(model, images, device);

    nlohmann::json j;
    uint64_t total = 0;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [reg, count] : table) {
        rows.push_back({{"register", "R" + std::to_string(reg.index)}, {"count", count}});
        total += count;
    }
    j["model"] = model.name;
    j["images"] = a.count;
    j["total_register_writes"] = total;
    j["table"] = rows;
    std::ofstream out(a.out);
    if (!out) throw Error("cannot open for write: " + a.out);
    out << j.dump(2) << "\n";
    log_info("profile written to " + a.out);
    return 0;
}

struct GoldenArgs {
    std::string model, images, labels, device, out;
    uint32_t count = 1;
};

int cmd_golden(const GoldenArgs& a) {
    campaign::CampaignConfig cfg;
    cfg.model_path = a.model;
    cfg.images_path = a.images;
    cfg.labels_path = a.labels;
    cfg.image_count = a.count;
    cfg.device = load_device(a.device);
    auto golden = campaign::run_golden(cfg);

    nlohmann::json j;
    j["model"] = a.model;
    j["image_count"] = golden.vectors.size();
    j["max_kernel_instrs"] = golden.max_kernel_instrs;
    nlohmann::json vecs = nlohmann::json::array();
    for (const auto& v : golden.vectors) {
        nlohmann::json e;
        char buf[12];
        std::string bits;
        for (size_t i = 0; i < v.data.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%08x",
                          std::bit_cast<uint32_t>(v.data[i]));
            if (i) bits += " ";
            bits += buf;
        }
        e["bits"] = bits;
        e["values"] = v.data;
        vecs.push_back(e);
    }
    j["vectors"] = vecs;
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : golden.stats) {
        nlohmann::json e;
        e["instructions_executed"] = s.exec.instructions_executed;
        e["reg_write_counts"] = s.exec.reg_write_counts;
        e["per_kernel_instrs"] = s.per_kernel_instrs;
        stats.push_back(e);
    }
    j["stats"] = stats;
    std::ofstream out(a.out);
    if (!out) throw Error("cannot open for write: " + a.out);
    out << j.dump(2) << "\n";
    log_info("golden vectors written to " + a.out);
    return 0;
}

struct GenFaultsArgs {
    std::string kind, registers = "0..9", units = "FP_CORE", sm = "0", lane = "all";
    std::string bits = "0..31", modes = "flip", device, out;
    uint64_t n = 0, seed = 0;
};

int cmd_gen_faults(const GenFaultsArgs& a) {
    auto device = load_device(a.device);
    faults::FaultListConstraints c;
    c.sm_ids.clear();
    for (const auto& s : split_list(a.sm)) c.sm_ids.push_back(static_cast<uint32_t>(std::stoul(s)));
    std::tie(c.reg_lo, c.reg_hi) = parse_range(a.registers);
    std::tie(c.bit_lo, c.bit_hi) = parse_range(a.bits);
    c.units.clear();
    for (const auto& s : split_list(a.units)) {
        auto u = isa::unit_class_from_name(s);
        if (!u) throw ConstraintError("unknown unit class '" + s + "'");
        c.units.push_back(*u);
    }
    c.lanes.clear();
    if (a.lane == "all")
        c.lanes.push_back(std::nullopt);
    else
        c.lanes.push_back(static_cast<uint32_t>(std::stoul(a.lane)));
    c.modes.clear();
    for (const auto& s : split_list(a.modes)) {
        auto m = faults::corrupt_mode_from_name(s);
        if (!m) throw ConstraintError("unknown corrupt mode '" + s + "'");
        c.modes.push_back(*m);
    }

    faults::FaultKind kind;
    if (a.kind == "register")
        kind = faults::FaultKind::REGISTER;
    else if (a.kind == "unit")
        kind = faults::FaultKind::UNIT;
    else
        throw ConstraintError("--kind must be register or unit");

    auto list = faults::generate_fault_list(a.seed, a.n, kind, c, device);
    faults::write_fault_list(a.out, list);
    log_info("wrote " + std::to_string(list.size()) + " faults to " + a.out);
    return 0;
}

struct CampaignArgs {
    std::string config;
    bool resume = false;
    uint32_t jobs = 0;
};

int cmd_campaign(const CampaignArgs& a) {
    auto cfg = campaign::load_campaign_config(a.config);
    if (a.jobs > 0) cfg.parallelism = a.jobs;
    log_info("campaign: " + cfg.fault_list_path + " on " + cfg.model_path +
             ", jobs=" + std::to_string(cfg.parallelism));
    campaign::ProgressFn progress;
    if (g_log_level >= 1)
        progress = [](size_t done, size_t total) {
            std::fprintf(stderr, "\r[faultsim] %zu/%zu faults", done, total);
            if (done == total) std::fprintf(stderr, "\n");
        };
    auto report = campaign::run_campaign(cfg, a.resume, progress);
    log_info("results in " + cfg.out_dir);
    std::fputs(campaign::report_to_table(report).c_str(), stderr);
    return 0;
}

struct ReportArgs {
    std::string results, format = "table", out;
};

int cmd_report(const ReportArgs& a) {
    auto results = campaign::read_results_csv(a.results);
    auto report = campaign::aggregate(results);
    std::string rendered;
    if (a.format == "table")
        rendered = campaign::report_to_table(report);
    else if (a.format == "json")
        rendered = campaign::report_to_json(report);
    else if (a.format == "csv")
        rendered = campaign::report_to_csv(report);
    else
        throw ConfigError("--format must be table, json or csv");

    if (a.format == "table" && a.out.empty()) {
        std::fputs(rendered.c_str(), stdout);
        return 0;
    }
    if (a.out.empty()) throw ConfigError("--out is required for json/csv output");
    std::ofstream out(a.out);
    if (!out) throw Error("cannot open for write: " + a.out);
    out << rendered;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_log_level();

    CLI::App app{"SIMT permanent-fault injection pipeline"};
    app.require_subcommand(1);

    ProfileArgs pa;
    auto* profile = app.add_subcommand("profile", "register usage frequencies (fault-free run)");
    profile->add_option("--model", pa.model, "model manifest JSON")->required();
    profile->add_option("--images", pa.images, "IDX image file")->required();
    profile->add_option("--labels", pa.labels, "IDX label file (optional)");
    profile->add_option("--count", pa.count, "images to run")->required();
    profile->add_option("--device", pa.device, "device config JSON (optional)");
    profile->add_option("--out", pa.out, "output JSON path")->required();

    GoldenArgs ga;
    auto* golden = app.add_subcommand("golden", "fault-free vectors and stats");
    golden->add_option("--model", ga.model)->required();
    golden->add_option("--images", ga.images)->required();
    golden->add_option("--labels", ga.labels);
    golden->add_option("--count", ga.count)->required();
    golden->add_option("--device", ga.device);
    golden->add_option("--out", ga.out)->required();

    GenFaultsArgs fa;
    auto* gen = app.add_subcommand("gen-faults", "sample a seeded fault list");
    gen->add_option("--kind", fa.kind, "register | unit")->required();
    gen->add_option("--n", fa.n, "number of faults")->required();
    gen->add_option("--seed", fa.seed, "RNG seed")->required();
    gen->add_option("--registers", fa.registers, "register range, e.g. 0..9");
    gen->add_option("--units", fa.units, "comma list: INT_CORE,FP_CORE,SFU");
    gen->add_option("--sm", fa.sm, "comma list of SM ids");
    gen->add_option("--lane", fa.lane, "all | lane index");
    gen->add_option("--bits", fa.bits, "bit range, e.g. 0..31");
    gen->add_option("--modes", fa.modes, "comma list: flip,stuck_at_0,stuck_at_1");
    gen->add_option("--device", fa.device);
    gen->add_option("--out", fa.out)->required();

    CampaignArgs ca;
    auto* camp = app.add_subcommand("campaign", "run a fault-injection campaign");
    camp->add_option("--config", ca.config, "campaign config JSON")->required();
    camp->add_flag("--resume", ca.resume, "keep completed faults from results.csv");
    camp->add_option("--jobs", ca.jobs, "override parallelism");

    ReportArgs ra;
    auto* rep = app.add_subcommand("report", "aggregate a results CSV");
    rep->add_option("--results", ra.results)->required();
    rep->add_option("--format", ra.format, "table | json | csv");
    rep->add_option("--out", ra.out, "output path (required for json/csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }

    try {
        if (profile->parsed()) return cmd_profile(pa);
        if (golden->parsed()) return cmd_golden(ga);
        if (gen->parsed()) return cmd_gen_faults(fa);
        if (camp->parsed()) return cmd_campaign(ca);
        if (rep->parsed()) return cmd_report(ra);
    } catch (const CampaignFailure& e) {
        std::fprintf(stderr, "campaign failure: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
