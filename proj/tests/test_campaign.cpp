#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "faultsim/campaign.hpp"
#include "faultsim/errors.hpp"
#include "faultsim/fixture.hpp"
#include "faultsim/fp_ops.hpp"
#include "json.hpp"

using namespace faultsim;
using namespace faultsim::campaign;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

cnn::Tensor vec(std::vector<float> v) {
    cnn::Tensor t;
    t.shape = {static_cast<uint32_t>(v.size())};
    t.data = std::move(v);
    return t;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

simt::DeviceConfig campaign_device() {
    simt::DeviceConfig d;
    d.global_mem_words = 1u << 16;
    return d;
}

// fixture model + dataset + a register fault list, ready to run
CampaignConfig make_config(const TempDir& dir, size_t n_faults, uint32_t images,
                           uint32_t jobs, uint64_t fault_seed = 5) {
    auto paths = fixture::write_fixtures(dir.path.string(), 42, 4);
    faults::FaultListConstraints c;
    auto list = faults::generate_fault_list(fault_seed, n_faults, faults::FaultKind::REGISTER, c,
                                            campaign_device());
    faults::write_fault_list(dir / "faults.jsonl", list);

    CampaignConfig cfg;
    cfg.model_path = paths.manifest;
    cfg.images_path = paths.images;
    cfg.labels_path = paths.labels;
    cfg.fault_list_path = dir / "faults.jsonl";
    cfg.out_dir = dir / "out";
    cfg.image_count = images;
    cfg.device = campaign_device();
    cfg.seed = fault_seed;
    cfg.parallelism = jobs;
    return cfg;
}

}  // namespace

TEST_CASE("classify: the four categories") {
    cnn::Tensor golden = vec({0.1f, 0.7f, 0.2f});

    cnn::InferOutcome same = golden;
    CHECK(classify(golden, same).kind == OutcomeKind::MASKED);

    cnn::InferOutcome safe = vec({0.2f, 0.6f, 0.2f});
    CHECK(classify(golden, safe).kind == OutcomeKind::SDC_SAFE);

    cnn::InferOutcome critical = vec({0.8f, 0.1f, 0.1f});
    CHECK(classify(golden, critical).kind == OutcomeKind::SDC_CRITICAL);

    for (auto kind : {simt::TrapKind::OutOfBoundsAccess, simt::TrapKind::MisalignedAccess,
                      simt::TrapKind::Timeout}) {
        cnn::InferOutcome trap = simt::Trap{kind, "k", 0, ""};
        Outcome o = classify(golden, trap);
        CHECK(o.kind == OutcomeKind::DUE);
        CHECK(o.trap == kind);
    }

    cnn::InferOutcome shorter = vec({0.5f, 0.5f});
    CHECK_THROWS_AS(classify(golden, shorter), LengthMismatch);
}

TEST_CASE("classify: MASKED needs identical bits, not close values") {
    cnn::Tensor golden = vec({0.25f, 0.75f});
    cnn::Tensor nudged = golden;
    nudged.data[0] = fp::from_bits(fp::bits(nudged.data[0]) + 1);  // one ulp
    cnn::InferOutcome f = nudged;
    CHECK(classify(golden, f).kind == OutcomeKind::SDC_SAFE);
}

TEST_CASE("argmax ties break to the lowest index") {
    CHECK(argmax(vec({0.4f, 0.4f, 0.2f})) == 0);
    CHECK(argmax(vec({0.1f, 0.4f, 0.4f})) == 1);
}

TEST_CASE("collapse: severity order and tool-error poisoning") {
    auto run = [](OutcomeKind k) {
        RunRecord r;
        r.outcome.kind = k;
        return r;
    };
    CHECK(collapse({run(OutcomeKind::MASKED), run(OutcomeKind::SDC_SAFE)}).kind ==
          OutcomeKind::SDC_SAFE);
    CHECK(collapse({run(OutcomeKind::SDC_CRITICAL), run(OutcomeKind::SDC_SAFE)}).kind ==
          OutcomeKind::SDC_CRITICAL);
    CHECK(collapse({run(OutcomeKind::MASKED), run(OutcomeKind::DUE)}).kind == OutcomeKind::DUE);
    CHECK(collapse({run(OutcomeKind::DUE), run(OutcomeKind::TOOL_ERROR)}).kind ==
          OutcomeKind::TOOL_ERROR);
    CHECK_THROWS_AS(collapse({}), EmptyResults);
}

TEST_CASE("property: collapse is monotone under added runs") {
    std::mt19937 rng(77);
    auto kinds = {OutcomeKind::MASKED, OutcomeKind::SDC_SAFE, OutcomeKind::SDC_CRITICAL,
                  OutcomeKind::DUE};
    std::vector<OutcomeKind> pool(kinds);
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<RunRecord> runs;
        uint32_t n = 1 + rng() % 6;
        for (uint32_t i = 0; i < n; ++i) {
            RunRecord r;
            r.image_index = i;
            r.outcome.kind = pool[rng() % pool.size()];
            runs.push_back(r);
        }
        Outcome before = collapse(runs);
        RunRecord extra;
        extra.image_index = n;
        extra.outcome.kind = pool[rng() % pool.size()];
        runs.push_back(extra);
        Outcome after = collapse(runs);
        CHECK(severity_rank(after.kind) >= severity_rank(before.kind));
    }
}

TEST_CASE("aggregate: one run per category gives 25% each") {
    std::vector<FaultResult> results;
    int idx = 0;
    for (auto kind : {OutcomeKind::MASKED, OutcomeKind::SDC_SAFE, OutcomeKind::SDC_CRITICAL,
                      OutcomeKind::DUE}) {
        RunRecord r;
        r.fault_id = "F" + std::to_string(++idx);
        r.outcome.kind = kind;
        if (kind == OutcomeKind::DUE) r.outcome.trap = simt::TrapKind::Timeout;
        results.push_back(make_fault_result(r.fault_id, {r}));
    }
    auto rep = aggregate(results);
    for (auto kind : {OutcomeKind::MASKED, OutcomeKind::SDC_SAFE, OutcomeKind::SDC_CRITICAL,
                      OutcomeKind::DUE}) {
        CHECK(rep.per_run.categories.at(kind).percent == doctest::Approx(25.0));
        CHECK(rep.per_fault.categories.at(kind).percent == doctest::Approx(25.0));
    }
    CHECK(rep.per_run.due_by_trap.at(simt::TrapKind::Timeout) == 1);
}

TEST_CASE("aggregate: all masked and empty input") {
    std::vector<FaultResult> results;
    for (int i = 0; i < 5; ++i) {
        RunRecord r;
        r.fault_id = "F" + std::to_string(i);
        r.outcome.kind = OutcomeKind::MASKED;
        results.push_back(make_fault_result(r.fault_id, {r}));
    }
    auto rep = aggregate(results);
    CHECK(rep.per_run.categories.at(OutcomeKind::MASKED).percent == doctest::Approx(100.0));
    CHECK(rep.per_run.categories.at(OutcomeKind::DUE).count == 0);
    CHECK_THROWS_AS(aggregate({}), EmptyResults);
}

TEST_CASE("aggregate: tool errors are excluded from both granularities") {
    std::vector<FaultResult> results;
    RunRecord ok;
    ok.fault_id = "F1";
    ok.outcome.kind = OutcomeKind::SDC_SAFE;
    results.push_back(make_fault_result("F1", {ok}));
    RunRecord bad;
    bad.fault_id = "F2";
    bad.outcome.kind = OutcomeKind::TOOL_ERROR;
    results.push_back(make_fault_result("F2", {bad}));
    auto rep = aggregate(results);
    CHECK(rep.per_run.total == 1);
    CHECK(rep.per_fault.total == 1);
    CHECK(rep.tool_error_runs == 1);
    CHECK(rep.tool_error_faults == 1);
    CHECK(rep.per_run.categories.at(OutcomeKind::SDC_SAFE).percent == doctest::Approx(100.0));
}

TEST_CASE("property: percentages sum to 100 at both granularities") {
    std::mt19937 rng(909);
    std::vector<OutcomeKind> pool = {OutcomeKind::MASKED, OutcomeKind::SDC_SAFE,
                                     OutcomeKind::SDC_CRITICAL, OutcomeKind::DUE,
                                     OutcomeKind::TOOL_ERROR};
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<FaultResult> results;
        uint32_t faults = 1 + rng() % 40;
        bool any_real = false;
        for (uint32_t f = 0; f < faults; ++f) {
            std::vector<RunRecord> runs;
            uint32_t n = 1 + rng() % 4;
            for (uint32_t i = 0; i < n; ++i) {
                RunRecord r;
                r.fault_id = "F" + std::to_string(f);
                r.image_index = i;
                r.outcome.kind = pool[rng() % pool.size()];
                if (r.outcome.kind == OutcomeKind::DUE)
                    r.outcome.trap = simt::TrapKind::OutOfBoundsAccess;
                if (r.outcome.kind != OutcomeKind::TOOL_ERROR) any_real = true;
                runs.push_back(r);
            }
            results.push_back(make_fault_result("F" + std::to_string(f), std::move(runs)));
        }
        if (!any_real) continue;
        auto rep = aggregate(results);
        for (const auto* table : {&rep.per_run, &rep.per_fault}) {
            if (table->total == 0) continue;
            double sum = 0;
            for (const auto& [k, stat] : table->categories) sum += stat.percent;
            CHECK(sum == doctest::Approx(100.0).epsilon(1e-4));
        }
    }
}

TEST_CASE("results CSV round-trips") {
    TempDir dir("faultsim_campaign_csv");
    std::vector<FaultResult> results;
    RunRecord a;
    a.fault_id = "F000001";
    a.image_index = 0;
    a.outcome = {OutcomeKind::DUE, simt::TrapKind::OutOfBoundsAccess};
    a.corrupted_writes = 17;
    a.golden_top1 = 3;
    RunRecord b = a;
    b.image_index = 1;
    b.outcome = {OutcomeKind::SDC_SAFE, std::nullopt};
    b.faulty_top1 = 3;
    results.push_back(make_fault_result("F000001", {a, b}));
    write_results_csv(dir / "r.csv", results);
    auto back = read_results_csv(dir / "r.csv");
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].runs.size() == 2);
    CHECK(back[0].runs[0].outcome.trap == simt::TrapKind::OutOfBoundsAccess);
    CHECK(back[0].runs[1].faulty_top1 == 3);
    CHECK(back[0].collapsed.kind == OutcomeKind::DUE);
    CHECK(back[0].corrupted_writes_total == 34);
}

TEST_CASE("golden run: softmax sums, determinism, reference agreement") {
    TempDir dir("faultsim_campaign_golden");
    CampaignConfig cfg = make_config(dir, 1, 4, 1);
    auto g1 = run_golden(cfg);  // internally cross-checks against the reference
    REQUIRE(g1.vectors.size() == 4);
    for (const auto& v : g1.vectors) {
        double sum = 0;
        for (float x : v.data) sum += x;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
    auto g2 = run_golden(cfg);
    for (size_t i = 0; i < g1.vectors.size(); ++i) {
        REQUIRE(g1.vectors[i].data.size() == g2.vectors[i].data.size());
        for (size_t k = 0; k < g1.vectors[i].data.size(); ++k)
            CHECK(fp::bits(g1.vectors[i].data[k]) == fp::bits(g2.vectors[i].data[k]));
    }
    CHECK(g1.max_kernel_instrs == g2.max_kernel_instrs);
    CHECK(g1.max_kernel_instrs > 0);
}

TEST_CASE("campaign: a fault on a never-written register is fully masked") {
    TempDir dir("faultsim_campaign_masked");
    auto paths = fixture::write_fixtures(dir.path.string(), 42, 4);
    // lenet-small kernels use R0..R9 only; R12 is never written
    std::vector<faults::FaultSpec> list{
        {"F000001", faults::RegisterFault{0, 3, isa::RegisterId{12}, 5, 1}}};
    faults::write_fault_list(dir / "faults.jsonl", list);

    CampaignConfig cfg;
    cfg.model_path = paths.manifest;
    cfg.images_path = paths.images;
    cfg.labels_path = paths.labels;
    cfg.fault_list_path = dir / "faults.jsonl";
    cfg.out_dir = dir / "out";
    cfg.image_count = 3;
    cfg.device = campaign_device();
    auto rep = run_campaign(cfg);
    CHECK(rep.per_run.total == 3);
    CHECK(rep.per_run.categories.at(OutcomeKind::MASKED).percent == doctest::Approx(100.0));
    CHECK(rep.per_fault.categories.at(OutcomeKind::MASKED).count == 1);

    auto rows = read_results_csv(dir / "out/results.csv");
    for (const auto& r : rows[0].runs) {
        CHECK(r.outcome.kind == OutcomeKind::MASKED);
        CHECK(r.corrupted_writes == 0);
    }
}

TEST_CASE("campaign: parallelism and reruns leave the artifacts byte-identical") {
    TempDir dir1("faultsim_campaign_par1");
    TempDir dir8("faultsim_campaign_par8");
    CampaignConfig c1 = make_config(dir1, 16, 2, 1);
    CampaignConfig c8 = make_config(dir8, 16, 2, 8);
    run_campaign(c1);
    run_campaign(c8);
    CHECK(slurp(dir1 / "out/results.csv") == slurp(dir8 / "out/results.csv"));
    CHECK(slurp(dir1 / "out/golden.json") == slurp(dir8 / "out/golden.json"));
    CHECK(slurp(dir1 / "out/report.json") == slurp(dir8 / "out/report.json"));

    run_campaign(c1);  // rerun in place
    CHECK(slurp(dir1 / "out/results.csv") == slurp(dir8 / "out/results.csv"));

    // a run that corrupted nothing cannot be anything but MASKED
    for (const auto& fr : read_results_csv(dir1 / "out/results.csv"))
        for (const auto& r : fr.runs)
            if (r.corrupted_writes == 0) CHECK(r.outcome.kind == OutcomeKind::MASKED);
}

TEST_CASE("campaign: resume after interruption reproduces the full artifacts") {
    TempDir dir("faultsim_campaign_resume");
    CampaignConfig cfg = make_config(dir, 12, 2, 2);
    run_campaign(cfg);
    std::string full_csv = slurp(dir / "out/results.csv");
    std::string full_report = slurp(dir / "out/report.json");

    // simulate an interrupt: keep the header and the first 5 faults (10 rows)
    {
        std::istringstream in(full_csv);
        std::ostringstream keep;
        std::string line;
        int rows = 0;
        std::getline(in, line);
        keep << line << "\n";
        while (std::getline(in, line) && rows < 10) {
            keep << line << "\n";
            ++rows;
        }
        std::ofstream out(dir / "out/results.csv");
        out << keep.str();
        fs::remove(dir / "out/report.json");
    }

    run_campaign(cfg, /*resume=*/true);
    CHECK(slurp(dir / "out/results.csv") == full_csv);
    CHECK(slurp(dir / "out/report.json") == full_report);
}

TEST_CASE("profile: lenet-small concentrates writes in R0..R9") {
    auto model = fixture::make_lenet_small(42);
    TempDir dir("faultsim_campaign_profile");
    auto paths = fixture::write_fixtures(dir.path.string(), 42, 2);
    auto ds = cnn::load_idx(paths.images, paths.labels);
    auto table = profile_registers(model, ds.images, campaign_device());
    REQUIRE(!table.empty());
    uint64_t total = 0;
    for (size_t i = 0; i < table.size(); ++i) {
        CHECK(table[i].first.index <= 9);
        CHECK(table[i].second > 0);
        if (i) CHECK(table[i - 1].second >= table[i].second);
        total += table[i].second;
    }
    // conservation against the executor's own stats
    cnn::InferStats stats;
    auto cm = cnn::compile_model(model, campaign_device());
    for (const auto& img : ds.images) {
        cnn::InferStats s;
        auto out = cnn::infer(cm, img, campaign_device(), nullptr, &s);
        REQUIRE(std::holds_alternative<cnn::Tensor>(out));
        stats.exec.accumulate(s.exec);
    }
    uint64_t stat_total = 0;
    for (uint64_t c : stats.exec.reg_write_counts) stat_total += c;
    CHECK(total == stat_total);
}

TEST_CASE("report renderings: json and csv carry identical numbers") {
    std::vector<FaultResult> results;
    std::mt19937 rng(4242);
    std::vector<OutcomeKind> pool = {OutcomeKind::MASKED, OutcomeKind::SDC_SAFE,
                                     OutcomeKind::SDC_CRITICAL, OutcomeKind::DUE};
    for (int f = 0; f < 23; ++f) {
        std::vector<RunRecord> runs;
        for (int i = 0; i < 3; ++i) {
            RunRecord r;
            r.fault_id = "F" + std::to_string(f);
            r.image_index = i;
            r.outcome.kind = pool[rng() % pool.size()];
            if (r.outcome.kind == OutcomeKind::DUE) r.outcome.trap = simt::TrapKind::Timeout;
            runs.push_back(r);
        }
        results.push_back(make_fault_result("F" + std::to_string(f), std::move(runs)));
    }
    auto rep = aggregate(results);
    auto j = nlohmann::json::parse(report_to_json(rep));

    std::istringstream csv(report_to_csv(rep));
    std::string line;
    std::getline(csv, line);  // header
    int checked = 0;
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else
                cur += ch;
        }
        f.push_back(cur);
        if (f[0] == "per_run" || f[0] == "per_fault") {
            auto& cat = j[f[0]]["categories"][f[1]];
            CHECK(cat["count"].get<uint64_t>() == std::stoull(f[2]));
            CHECK(cat["percent"].get<double>() == doctest::Approx(std::stod(f[3])).epsilon(1e-12));
            ++checked;
        }
    }
    CHECK(checked == 8);
}
