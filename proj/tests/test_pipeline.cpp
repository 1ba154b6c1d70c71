#include <doctest.h>

#include <fstream>

#include "testutil.hpp"
#include "voxseg/config.hpp"
#include "voxseg/pipeline.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("pipeline");

namespace {

// small phantoms and a tiny two-level net keep these runs in seconds
dataset tiny_dataset(uint64_t seed, int n_train = 2, int n_val = 1, int dims = 48) {
    phantom_spec spec;
    spec.dims = {dims, dims, dims};
    spec.seed = seed;
    dataset ds;
    auto cases = generate_phantoms(spec, n_train + n_val);
    for (int i = 0; i < n_train; ++i) ds.train.push_back(std::move(cases[size_t(i)]));
    for (int i = n_train; i < n_train + n_val; ++i) ds.val.push_back(std::move(cases[size_t(i)]));
    return ds;
}

unet_spec tiny_net() { return unet_spec{2, 4, 1, 4, {20, 20, 20}}; } // output 4^3

stage_config tiny_stage(int stage, int64_t iterations) {
    stage_config c;
    c.stage = stage;
    c.iterations = iterations;
    c.learning_rate = 0.01;
    c.deform_grid_spacing = 8; // the working grid is only 24^3
    c.deform_sigma = 1.5;
    c.val_interval = iterations; // validate once at the end
    return c;
}

std::string tmp_run_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / "voxseg_pipeline_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

} // namespace

TEST_CASE("stage 2 without a stage-1 checkpoint is a configuration error") {
    dataset ds = tiny_dataset(1);
    stage_config cfg = tiny_stage(2, 5);
    CHECK_THROWS_WITH_AS(
        train_stage<float>(ds, tiny_net(), cfg, 2, 1234, tmp_run_dir("s2_noinit"), nullptr),
        doctest::Contains("stage-1 checkpoint"), error);
}

TEST_CASE("training runs, logs losses, and the masking counters stay clean") {
    dataset ds = tiny_dataset(2);
    stage_config cfg = tiny_stage(1, 30);
    std::string run = tmp_run_dir("smoke1");
    train_result res = train_stage<float>(ds, tiny_net(), cfg, 2, 77, run, nullptr);
    CHECK(res.counters.loss_voxels_outside_region == 0);
    CHECK(res.counters.windows_without_region_voxel == 0);
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(res.best_val_dice >= 0.0);

    std::ifstream loss(fs::path(run) / "logs" / "loss.csv");
    std::string line;
    std::getline(loss, line);
    CHECK(line == "iteration,case,loss");
    int rows = 0;
    while (std::getline(loss, line)) ++rows;
    CHECK(rows == 30);
}

TEST_CASE("stage-2 training fine-tunes from stage 1 and stays inside C2") {
    dataset ds = tiny_dataset(3);
    std::string run = tmp_run_dir("s2");
    stage_config c1 = tiny_stage(1, 25);
    train_result r1 = train_stage<float>(ds, tiny_net(), c1, 2, 99, run, nullptr);
    auto st1 = net::read_checkpoint<float>(r1.final_checkpoint);

    stage_config c2 = tiny_stage(2, 25);
    c2.dilation_radius = 2;
    train_result r2 = train_stage<float>(ds, tiny_net(), c2, 2, 99, run, &st1.net);
    CHECK(r2.counters.loss_voxels_outside_region == 0);
    CHECK(r2.counters.windows_without_region_voxel == 0);
    CHECK(fs::exists(fs::path(run) / "checkpoints" / "stage2_final.ckpt"));
}

TEST_CASE("identical seed and config reproduce checkpoints and logs byte for byte") {
    dataset ds = tiny_dataset(4);
    stage_config cfg = tiny_stage(1, 20);
    std::string run_a = tmp_run_dir("det_a"), run_b = tmp_run_dir("det_b");
    train_stage<float>(ds, tiny_net(), cfg, 2, 4242, run_a, nullptr);
    train_stage<float>(ds, tiny_net(), cfg, 2, 4242, run_b, nullptr);
    CHECK(slurp(run_a + "/checkpoints/stage1_final.ckpt") ==
          slurp(run_b + "/checkpoints/stage1_final.ckpt"));
    CHECK(slurp(run_a + "/logs/loss.csv") == slurp(run_b + "/logs/loss.csv"));
    CHECK(slurp(run_a + "/logs/val_dice.csv") == slurp(run_b + "/logs/val_dice.csv"));

    // a different seed diverges
    std::string run_c = tmp_run_dir("det_c");
    train_stage<float>(ds, tiny_net(), cfg, 2, 4243, run_c, nullptr);
    CHECK(slurp(run_a + "/checkpoints/stage1_final.ckpt") !=
          slurp(run_c + "/checkpoints/stage1_final.ckpt"));
}

TEST_CASE("checkpoint-resume training equals straight-through training bit-exactly") {
    dataset ds = tiny_dataset(5);
    std::string run_full = tmp_run_dir("resume_full"), run_split = tmp_run_dir("resume_split");

    stage_config cfg = tiny_stage(1, 40);
    train_stage<float>(ds, tiny_net(), cfg, 2, 555, run_full, nullptr);

    stage_config half = cfg;
    half.iterations = 20;
    train_stage<float>(ds, tiny_net(), half, 2, 555, run_split, nullptr);
    auto mid = net::read_checkpoint<float>(run_split + "/checkpoints/stage1_final.ckpt");
    CHECK(mid.iteration == 20);
    train_stage<float>(ds, tiny_net(), cfg, 2, 555, run_split, nullptr, &mid);

    CHECK(slurp(run_full + "/checkpoints/stage1_final.ckpt") ==
          slurp(run_split + "/checkpoints/stage1_final.ckpt"));
}

TEST_CASE("divergent training raises a divergence error") {
    dataset ds = tiny_dataset(6);
    stage_config cfg = tiny_stage(1, 50);
    cfg.learning_rate = 1e6; // blows up within a few steps
    CHECK_THROWS_AS(
        train_stage<float>(ds, tiny_net(), cfg, 2, 7, tmp_run_dir("diverge"), nullptr), error);
}

TEST_CASE("cascade on an all-air volume reports an empty body mask") {
    volume air({48, 48, 48}, {1, 1, 1}, -1000.f);
    net::unet3d<float> n1(tiny_net()), n2(tiny_net());
    n1.init_params(1);
    n2.init_params(2);
    CHECK_THROWS_WITH_AS(cascade_predict(air, n1, n2, 3, tile_mode::nonoverlap, 1, 2, -300.f),
                         doctest::Contains("threshold"), error);
}

TEST_CASE("an all-background stage-1 net yields an empty C2 and a background cascade") {
    dataset ds = tiny_dataset(7, 1, 0);
    net::unet3d<float> zero_net(tiny_net()); // all-zero params: argmax ties to class 0
    net::unet3d<float> n2(tiny_net());
    n2.init_params(3);
    cascade_result res =
        cascade_predict(ds.train[0].vol, zero_net, n2, 3, tile_mode::overlap, 4, 2, -300.f);
    CHECK(res.empty_c2);
    CHECK(count_set(res.c2.mask) == 0);
    for (uint8_t l : res.labels.raw()) CHECK(l == 0);
    CHECK(res.labels.dim() == ds.train[0].vol.dim());
}

TEST_CASE("cascade output geometry matches the input and respects C2") {
    dataset ds = tiny_dataset(8, 1, 0);
    std::string run = tmp_run_dir("cascade_geom");
    stage_config c1 = tiny_stage(1, 40);
    train_result r1 = train_stage<float>(ds, tiny_net(), c1, 2, 11, run, nullptr);
    auto st1 = net::read_checkpoint<float>(r1.final_checkpoint);

    cascade_result res =
        cascade_predict(ds.train[0].vol, st1.net, st1.net, 3, tile_mode::overlap, 4, 2, -300.f);
    CHECK(res.labels.dim() == ds.train[0].vol.dim());
    CHECK(res.labels.spacing() == ds.train[0].vol.spacing());
    // no foreground outside the upsampled C2
    label_map c2_up = upsample_nearest(mask_to_labels(res.c2.mask), res.labels.dim());
    for (size_t i = 0; i < res.labels.size(); ++i)
        if (res.labels.raw()[i] != 0) CHECK(c2_up.raw()[i] == 1);
    // probabilities stay normalized at the original resolution
    rng rr(12);
    for (int t = 0; t < 200; ++t) {
        size_t i = rr.uniform_index(res.labels.size());
        double s = 0;
        for (int k = 0; k < 4; ++k) s += res.probs.channel(k)[i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("dataset validation rejects duplicate ids and mismatched pairs") {
    dataset ds = tiny_dataset(9, 2, 0, 32);
    ds.train[1].id = ds.train[0].id;
    CHECK_THROWS_WITH_AS(ds.check(), doctest::Contains("duplicate"), error);

    dataset ds2 = tiny_dataset(10, 1, 0, 32);
    ds2.train[0].labels = label_map({16, 16, 16}, {1, 1, 1}, 4);
    CHECK_THROWS_AS(ds2.check(), error);
}

TEST_CASE("inference never constructs deformation fields") {
    dataset ds = tiny_dataset(11, 1, 0);
    net::unet3d<float> network(tiny_net());
    network.init_params(21);
    volume vol_ds = downsample(ds.train[0].vol, 2);
    candidate_region c1 = body_mask(vol_ds, -300.f);
    const uint64_t before = deformation_fields_constructed().load();
    predict_region(vol_ds, c1, network, tile_mode::overlap, 4);
    cascade_predict(ds.train[0].vol, network, network, 3, tile_mode::nonoverlap, 1, 2, -300.f);
    CHECK(deformation_fields_constructed().load() == before);
}

TEST_CASE("2000-iteration desk smoke run: late loss is below early loss") {
    // seed-fixed overfit oracle on a small working grid
    dataset ds = tiny_dataset(12, 8, 0);
    unet_spec desk{2, 8, 1, 4, {20, 20, 20}};
    stage_config cfg = tiny_stage(1, 2000);
    cfg.learning_rate = 0.02;
    std::string run = tmp_run_dir("smoke2000");
    train_stage<float>(ds, desk, cfg, 2, 2026, run, nullptr);

    std::ifstream loss(fs::path(run) / "logs" / "loss.csv");
    std::string line;
    std::getline(loss, line);
    std::vector<double> values;
    while (std::getline(loss, line)) {
        auto last = line.rfind(',');
        values.push_back(std::stod(line.substr(last + 1)));
    }
    REQUIRE(values.size() == 2000);
    double first = 0, final = 0;
    for (int i = 0; i < 500; ++i) {
        first += values[size_t(i)];
        final += values[size_t(1500 + i)];
    }
    CHECK(final / 500 < first / 500);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults parse and validate") {
    run_config cfg = parse_config_text("");
    CHECK_NOTHROW(validate_config(cfg));
    CHECK(cfg.net.levels == 2);
    CHECK(cfg.stage2.dilation_radius == 3);
}

TEST_CASE("keys override defaults and comments are ignored") {
    run_config cfg = parse_config_text(
        "# comment\n"
        "seed = 99\n"
        "net.levels=2\n"
        "net.base_channels = 4\n"
        "net.tile = 20,20,20\n"
        "net.classes=4\n"
        "stage1.iterations = 123 # trailing comment\n"
        "stage2.r = 5\n"
        "tiles.mode = nonoverlap\n"
        "phantom.dims = 64,64,64\n");
    validate_config(cfg);
    CHECK(cfg.seed == 99);
    CHECK(cfg.net.base_channels == 4);
    CHECK(cfg.stage1.iterations == 123);
    CHECK(cfg.stage2.dilation_radius == 5);
    CHECK(cfg.tiles == tile_mode::nonoverlap);
    CHECK(cfg.phantom.dims == dims3{64, 64, 64});
}

TEST_CASE("unknown keys, malformed values and invalid combinations are rejected") {
    CHECK_THROWS_WITH_AS(parse_config_text("no_such_key=1\n"), doctest::Contains("unknown config key"),
                         error);
    CHECK_THROWS_AS(parse_config_text("seed\n"), error);
    CHECK_THROWS_AS(parse_config_text("net.tile=20,20\n"), error);
    CHECK_THROWS_AS(parse_config_text("stage1.iterations=abc\n"), error);

    run_config bad_tile = parse_config_text("net.tile = 21,20,20\n");
    CHECK_THROWS_AS(validate_config(bad_tile), error); // fails shape arithmetic before any compute

    run_config bad_classes = parse_config_text("net.classes = 5\n");
    CHECK_THROWS_AS(validate_config(bad_classes), error); // phantom/net class mismatch

    run_config bad_dtype = parse_config_text("dtype = f16\n");
    CHECK_THROWS_AS(validate_config(bad_dtype), error);
}

TEST_CASE("config hash is stable and content-sensitive") {
    CHECK(fnv1a64("seed=1\n") == fnv1a64("seed=1\n"));
    CHECK(fnv1a64("seed=1\n") != fnv1a64("seed=2\n"));
}

TEST_SUITE_END();
