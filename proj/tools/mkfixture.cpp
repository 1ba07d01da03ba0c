// faultsim-mkfix: writes the lenet-small fixture model, a synthetic IDX image
// set, a default device config and a ready-to-edit campaign config.

#include <cstdio>
#include <fstream>

#include "CLI11.hpp"
#include "faultsim/errors.hpp"
#include "faultsim/fixture.hpp"
#include "json.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fixture generator"};
    std::string out_dir = "fixtures";
    uint64_t seed = 42;
    uint32_t images = 16;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "weight/image seed");
    app.add_option("--images", images, "image count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        auto paths = faultsim::fixture::write_fixtures(out_dir, seed, images);

        nlohmann::json dev;
        dev["num_sms"] = 1;
        dev["max_resident_warps_per_sm"] = 16;
        dev["warp_size"] = 32;
        dev["regs_per_thread"] = 16;
        dev["global_mem_words"] = 1u << 20;
        dev["instr_budget"] = 1ull << 40;
        std::ofstream devf(out_dir + "/device.json");
        devf << dev.dump(2) << "\n";

        nlohmann::json camp;
        camp["model"] = "lenet-small.json";
        camp["images"] = "images.idx";
        camp["labels"] = "labels.idx";
        camp["fault_list"] = "faults.jsonl";
        camp["out_dir"] = "out";
        camp["image_count"] = 3;
        camp["device"] = dev;
        camp["instr_budget"] = 0;  // 0 = 20x the worst golden kernel
        camp["seed"] = seed;
        camp["jobs"] = 2;
        std::ofstream campf(out_dir + "/campaign.json");
        campf << camp.dump(2) << "\n";

        std::printf("fixtures written under %s\n", out_dir.c_str());
        std::printf("  model:    %s\n", paths.manifest.c_str());
        std::printf("  images:   %s\n", paths.images.c_str());
        std::printf("  device:   %s/device.json\n", out_dir.c_str());
        std::printf("  campaign: %s/campaign.json (needs faults.jsonl from gen-faults)\n",
                    out_dir.c_str());
        return 0;
    } catch (const faultsim::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
