#include <doctest.h>

#include <fstream>

#include "voxseg/cli.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

int run_cli(std::initializer_list<std::string> args) {
    std::vector<std::string> strings{"voxseg"};
    strings.insert(strings.end(), args);
    std::vector<const char*> argv;
    for (const auto& s : strings) argv.push_back(s.c_str());
    return cli_main(int(argv.size()), argv.data());
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

struct cli_sandbox {
    fs::path root;
    std::string config;

    cli_sandbox() {
        root = fs::temp_directory_path() / "voxseg_cli_tests";
        fs::remove_all(root);
        fs::create_directories(root);
        config = (root / "run.cfg").string();
        std::ofstream cfg(config);
        cfg << "seed = 91\n"
               "threads = 1\n"
               "phantom.dims = 48,48,48\n"
               "phantom.seed = 91\n"
               "phantom.cases_train = 2\n"
               "phantom.cases_val = 1\n"
               "net.levels = 2\n"
               "net.base_channels = 4\n"
               "net.classes = 4\n"
               "net.tile = 20,20,20\n"
               "stage1.iterations = 40\n"
               "stage1.val_interval = 40\n"
               "stage1.grid_spacing = 8\n"
               "stage1.sigma = 1.5\n"
               "stage2.iterations = 30\n"
               "stage2.val_interval = 30\n"
               "stage2.grid_spacing = 8\n"
               "stage2.sigma = 1.5\n"
               "stage2.r = 2\n";
    }
};

} // namespace

TEST_CASE("the full command-line workflow produces the declared artifacts") {
    cli_sandbox sb;
    const std::string data_dir = (sb.root / "data").string();
    const std::string manifest = data_dir + "/manifest.json";

    SUBCASE("") {} // single ordered walkthrough below

    // phantom generation
    REQUIRE(run_cli({"phantom", "--config", sb.config, "--out", data_dir}) == 0);
    CHECK(fs::exists(fs::path(data_dir) / "case0_vol.vvf"));
    CHECK(fs::exists(fs::path(data_dir) / "case2_lab.vvf"));
    CHECK(fs::exists(manifest));
    CHECK(fs::exists(fs::path(data_dir) / "run.json"));

    // body mask of one volume
    const std::string mask_path = (sb.root / "mask.vvf").string();
    REQUIRE(run_cli({"mask", "--in", data_dir + "/case0_vol.vvf", "--out", mask_path}) == 0);
    label_map m = read_vvf_labels(mask_path);
    CHECK(m.num_classes == 2);

    // stage 2 without a stage-1 checkpoint: config error, exit 2
    const std::string run_dir = (sb.root / "run").string();
    CHECK(run_cli({"train", "--config", sb.config, "--data", manifest, "--run", run_dir, "--stage",
                   "2"}) == 2);

    // stage 1, then stage 2 fine-tuned from it (one run directory per stage)
    const std::string run2_dir = (sb.root / "run_stage2").string();
    REQUIRE(run_cli({"train", "--config", sb.config, "--data", manifest, "--run", run_dir,
                     "--stage", "1"}) == 0);
    const std::string ckpt1 = run_dir + "/checkpoints/stage1_final.ckpt";
    CHECK(fs::exists(ckpt1));
    CHECK(fs::exists(fs::path(run_dir) / "logs" / "loss.csv"));
    CHECK(fs::exists(fs::path(run_dir) / "logs" / "val_dice.csv"));

    REQUIRE(run_cli({"train", "--config", sb.config, "--data", manifest, "--run", run2_dir,
                     "--stage", "2", "--init", ckpt1}) == 0);
    const std::string ckpt2 = run2_dir + "/checkpoints/stage2_final.ckpt";
    CHECK(fs::exists(ckpt2));

    // single-volume prediction in both tile modes
    const std::string pred_dir = (sb.root / "pred").string();
    REQUIRE(run_cli({"predict", "--config", sb.config, "--in", data_dir + "/case2_vol.vvf",
                     "--ckpt", ckpt1, "--out", pred_dir, "--tiles", "overlap", "--r-overlap",
                     "4"}) == 0);
    label_map pred = read_vvf_labels(pred_dir + "/labels.vvf");
    CHECK(pred.dim() == dims3{48, 48, 48});
    probability_map probs = read_vvf_probmap(pred_dir + "/probs.vvf");
    CHECK(probs.num_classes() == 4);

    // cascade over the validation split with metrics
    const std::string casc_dir = (sb.root / "cascade").string();
    REQUIRE(run_cli({"cascade", "--config", sb.config, "--data", manifest, "--ckpt1", ckpt1,
                     "--ckpt2", ckpt2, "--out", casc_dir}) == 0);
    CHECK(fs::exists(fs::path(casc_dir) / "predictions" / "case2_labels.vvf"));
    CHECK(fs::exists(fs::path(casc_dir) / "per_case.csv"));
    CHECK(fs::exists(fs::path(casc_dir) / "summary.csv"));
    {
        std::ifstream in(fs::path(casc_dir) / "per_case.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "case_id,class,dice,recall,fpr");
    }

    // dilation sweep: monotone recall, r,recall,fpr schema
    const std::string sweep_dir = (sb.root / "sweep").string();
    REQUIRE(run_cli({"sweep", "--config", sb.config, "--data", manifest, "--ckpt1", ckpt1, "--out",
                     sweep_dir, "--r", "0..4"}) == 0);
    {
        std::ifstream in(fs::path(sweep_dir) / "sweep.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "r,recall,fpr");
        double prev_recall = -1;
        int rows = 0;
        while (std::getline(in, line)) {
            auto c1 = line.find(','), c2 = line.rfind(',');
            double recall = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
            CHECK(recall >= prev_recall);
            prev_recall = recall;
            ++rows;
        }
        CHECK(rows == 5);
    }

    // eval scores existing predictions and reruns are byte-identical
    const std::string eval_dir = (sb.root / "eval").string();
    REQUIRE(run_cli({"eval", "--data", manifest, "--pred", casc_dir + "/predictions", "--out",
                     eval_dir}) == 0);
    const std::string eval_dir2 = (sb.root / "eval2").string();
    REQUIRE(run_cli({"eval", "--data", manifest, "--pred", casc_dir + "/predictions", "--out",
                     eval_dir2}) == 0);
    CHECK(slurp(fs::path(eval_dir) / "per_case.csv") == slurp(fs::path(eval_dir2) / "per_case.csv"));
    CHECK(slurp(fs::path(eval_dir) / "summary.csv") == slurp(fs::path(eval_dir2) / "summary.csv"));

    // run records carry the config hash and seed
    {
        std::string rec = slurp(fs::path(run_dir) / "run.json");
        CHECK(rec.find("\"config_hash\"") != std::string::npos);
        CHECK(rec.find("\"seed\": 91") != std::string::npos);
    }
}

TEST_CASE("config and data errors map to the documented exit codes") {
    cli_sandbox sb;
    // unknown config key -> 2
    const std::string bad_cfg = (sb.root / "bad.cfg").string();
    std::ofstream(bad_cfg) << "bogus = 1\n";
    CHECK(run_cli({"phantom", "--config", bad_cfg, "--out", (sb.root / "x").string()}) == 2);
    // missing manifest -> 3
    CHECK(run_cli({"train", "--config", sb.config, "--data", (sb.root / "none.json").string(),
                   "--run", (sb.root / "r").string(), "--stage", "1"}) == 3);
    // missing required option -> 2
    CHECK(run_cli({"train", "--config", sb.config}) == 2);
    // unreadable volume -> 3
    CHECK(run_cli({"mask", "--in", (sb.root / "none.vvf").string(), "--out",
                   (sb.root / "m.vvf").string()}) == 3);
}

TEST_SUITE_END();
