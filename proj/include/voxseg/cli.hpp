#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include "voxseg/config.hpp"

namespace voxseg {

namespace cli_detail {

using nlohmann::json;
namespace fs = std::filesystem;

inline void write_run_record(const std::string& dir, const std::string& command, uint64_t config_hash,
                             uint64_t seed, int threads) {
    json j;
    j["tool"] = "voxseg";
    j["version"] = version_string;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["threads"] = threads;
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "run.json");
    if (!out) fail_data("cannot write run record under " + dir);
    out << j.dump(2) << "\n";
}

inline void write_manifest(const std::string& dir, const phantom_spec& spec, int n_train, int n_val) {
    json j;
    j["spec"] = {{"dims", {spec.dims.x, spec.dims.y, spec.dims.z}},
                 {"spacing", {spec.spacing.x, spec.spacing.y, spec.spacing.z}},
                 {"seed", spec.seed},
                 {"classes", spec.num_classes},
                 {"noise_sigma", spec.noise_sigma},
                 {"tube_radius", spec.tube_radius}};
    j["cases"] = json::array();
    for (int i = 0; i < n_train + n_val; ++i) {
        std::string id = "case" + std::to_string(i);
        j["cases"].push_back({{"id", id},
                              {"volume", id + "_vol.vvf"},
                              {"labels", id + "_lab.vvf"},
                              {"split", i < n_train ? "train" : "val"}});
    }
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) fail_data("cannot write manifest under " + dir);
    out << j.dump(2) << "\n";
}

inline dataset load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) fail_data("cannot open manifest " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail_data("malformed manifest " + manifest_path + ": " + e.what());
    }
    if (!j.contains("cases") || !j["cases"].is_array()) fail_data("manifest has no cases array");
    const fs::path base = fs::path(manifest_path).parent_path();
    dataset ds;
    for (const auto& c : j["cases"]) {
        seg_case sc;
        sc.id = c.at("id").get<std::string>();
        sc.vol = read_vvf_volume((base / c.at("volume").get<std::string>()).string());
        sc.labels = read_vvf_labels((base / c.at("labels").get<std::string>()).string());
        const std::string split = c.value("split", "train");
        if (split == "train") ds.train.push_back(std::move(sc));
        else if (split == "val") ds.val.push_back(std::move(sc));
        else fail_data("manifest split must be train or val, got '" + split + "'");
    }
    ds.check();
    return ds;
}

inline std::string checkpoint_dtype_of(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open checkpoint " + path);
    std::string line;
    if (!std::getline(in, line) || line != "VCKP1") fail_data(path + ": bad checkpoint magic");
    while (std::getline(in, line) && !line.empty())
        if (line.rfind("dtype=", 0) == 0) return line.substr(6);
    fail_data(path + ": checkpoint has no dtype");
}

inline std::vector<int> parse_radius_range(const std::string& text) {
    // "0..6" or a single value
    auto dots = text.find("..");
    std::vector<int> rs;
    if (dots == std::string::npos) {
        rs.push_back(int(detail::parse_num(text, "--r")));
    } else {
        int lo = int(detail::parse_num(text.substr(0, dots), "--r"));
        int hi = int(detail::parse_num(text.substr(dots + 2), "--r"));
        if (lo > hi || lo < 0) fail_config("bad radius range: " + text);
        for (int r = lo; r <= hi; ++r) rs.push_back(r);
    }
    return rs;
}

// recall/fpr rows per foreground class at the original resolution, with the
// body mask as the false-positive universe
inline void score_case(const std::string& id, const label_map& pred, const seg_case& truth,
                       const mask3& universe, std::vector<case_metrics>& rows) {
    auto d = dice_per_class(pred, truth.labels);
    for (int k = 1; k < truth.labels.num_classes; ++k) {
        case_metrics m;
        m.case_id = id;
        m.class_index = k;
        m.dice = d[size_t(k)];
        auto rf = recall_fpr(class_mask(pred, k), class_mask(truth.labels, k), universe);
        m.recall = rf.recall;
        m.fpr = rf.fpr;
        rows.push_back(m);
    }
}

inline mask3 full_universe(const seg_case& c, float body_threshold) {
    // the FPR universe is the thresholded body at original resolution
    return body_mask(c.vol, body_threshold).mask;
}

template <typename T>
int run_train(const run_config& cfg, const std::string& data, const std::string& run_dir, int stage,
              const std::string& init_ckpt, const std::string& resume_ckpt) {
    dataset ds = load_manifest(data);
    const stage_config& scfg = stage == 1 ? cfg.stage1 : cfg.stage2;

    std::optional<net::train_state<T>> stage1_state;
    const net::unet3d<T>* stage1_net = nullptr;
    if (stage == 2) {
        if (init_ckpt.empty() && resume_ckpt.empty())
            fail_config("train --stage 2 requires --init with the stage-1 checkpoint");
        if (!init_ckpt.empty()) {
            stage1_state.emplace(net::read_checkpoint<T>(init_ckpt));
            stage1_net = &stage1_state->net;
        }
    }

    std::optional<net::train_state<T>> resume_state;
    if (!resume_ckpt.empty()) {
        resume_state.emplace(net::read_checkpoint<T>(resume_ckpt));
        if (stage == 2 && stage1_net == nullptr)
            fail_config("train --stage 2 --resume also needs --init for the C2 regions");
    }

    train_result res = train_stage<T>(ds, cfg.net, scfg, cfg.downsample_factor, cfg.seed, run_dir,
                                      stage1_net, resume_state ? &*resume_state : nullptr);
    std::printf("stage %d done: best val dice %.6f at iteration %lld\n", stage, res.best_val_dice,
                (long long)res.best_iteration);
    std::printf("checkpoints: %s\n", res.final_checkpoint.c_str());
    if (res.counters.loss_voxels_outside_region || res.counters.windows_without_region_voxel)
        fail_data("masking invariant violated during training");
    return 0;
}

template <typename T>
int run_cascade(const run_config& cfg, const std::string& data, const std::string& ckpt1,
                const std::string& ckpt2, const std::string& out_dir, tile_mode mode, int r_overlap,
                const std::string& split) {
    dataset ds = load_manifest(data);
    auto st1 = net::read_checkpoint<T>(ckpt1);
    auto st2 = net::read_checkpoint<T>(ckpt2);
    std::vector<const seg_case*> cases;
    if (split == "train" || split == "all")
        for (const auto& c : ds.train) cases.push_back(&c);
    if (split == "val" || split == "all")
        for (const auto& c : ds.val) cases.push_back(&c);
    if (cases.empty()) fail_data("no cases in the requested split");

    fs::create_directories(fs::path(out_dir) / "predictions");
    std::vector<case_metrics> rows;
    for (const seg_case* c : cases) {
        cascade_result res = cascade_predict(c->vol, st1.net, st2.net, cfg.stage2.dilation_radius,
                                             mode, r_overlap, cfg.downsample_factor,
                                             cfg.stage1.body_threshold);
        if (res.empty_c2) std::printf("warning: %s has an empty C2, all background\n", c->id.c_str());
        write_vvf(res.labels, (fs::path(out_dir) / "predictions" / (c->id + "_labels.vvf")).string());
        write_vvf(res.probs, (fs::path(out_dir) / "predictions" / (c->id + "_probs.vvf")).string());
        score_case(c->id, res.labels, *c, full_universe(*c, cfg.stage1.body_threshold), rows);
    }
    segmentation_report report;
    report.stage = 2;
    report.mode = mode;
    report.per_case = rows;
    report.finalize();
    write_per_case_csv(report.per_case, (fs::path(out_dir) / "per_case.csv").string());
    write_summary_csv(report.summaries, (fs::path(out_dir) / "summary.csv").string());
    std::printf("cascade: %zu cases, mean foreground dice %.6f\n", cases.size(),
                report.mean_foreground_dice());
    return 0;
}

template <typename T>
int run_sweep(const run_config& cfg, const std::string& data, const std::string& ckpt1,
              const std::string& out_dir, const std::vector<int>& radii, const std::string& split) {
    dataset ds = load_manifest(data);
    auto st1 = net::read_checkpoint<T>(ckpt1);
    std::vector<const seg_case*> cases;
    if (split == "train" || split == "all")
        for (const auto& c : ds.train) cases.push_back(&c);
    if (split == "val" || split == "all")
        for (const auto& c : ds.val) cases.push_back(&c);
    if (cases.empty()) fail_data("no cases in the requested split");

    // per-case sweeps on the downsampled working grid, averaged per radius
    std::vector<double> recall_sum(radii.size(), 0.0), fpr_sum(radii.size(), 0.0);
    for (const seg_case* c : cases) {
        volume vol_ds = cfg.downsample_factor == 1 ? c->vol : downsample(c->vol, cfg.downsample_factor);
        label_map lab_ds =
            cfg.downsample_factor == 1 ? c->labels : downsample(c->labels, cfg.downsample_factor);
        candidate_region c1 = body_mask(vol_ds, cfg.stage1.body_threshold);
        prediction p1 = predict_region(vol_ds, c1, st1.net, tile_mode::nonoverlap, 1);
        mask3 truth_fg(lab_ds.dim(), lab_ds.spacing());
        for (size_t i = 0; i < lab_ds.size(); ++i) truth_fg.raw()[i] = lab_ds.raw()[i] >= 1;
        // keep the truth inside the universe; body_mask recovers the body so
        // this only trims stray noise voxels
        for (size_t i = 0; i < truth_fg.size(); ++i) truth_fg.raw()[i] &= c1.mask.raw()[i];
        sweep_result sw = dilation_sweep(p1.labels, truth_fg, c1.mask, radii);
        for (size_t i = 0; i < radii.size(); ++i) {
            recall_sum[i] += sw.rows[i].recall;
            fpr_sum[i] += sw.rows[i].fpr;
        }
    }
    sweep_result mean_sweep;
    for (size_t i = 0; i < radii.size(); ++i) {
        sweep_row row{radii[i], recall_sum[i] / double(cases.size()), fpr_sum[i] / double(cases.size())};
        mean_sweep.rows.push_back(row);
        if (mean_sweep.r_star < 0 && row.recall >= 0.99) mean_sweep.r_star = row.r;
    }
    write_sweep_csv(mean_sweep, (fs::path(out_dir) / "sweep.csv").string());
    std::printf("sweep: r* = %d (smallest radius with recall >= 0.99)\n", mean_sweep.r_star);
    return 0;
}

template <typename T>
int run_predict(const run_config& cfg, const std::string& in_path, const std::string& ckpt,
                const std::string& out_dir, tile_mode mode, int r_overlap,
                const std::string& region_path) {
    volume vol = read_vvf_volume(in_path);
    auto st = net::read_checkpoint<T>(ckpt);
    volume vol_ds = cfg.downsample_factor == 1 ? vol : downsample(vol, cfg.downsample_factor);
    candidate_region region;
    if (region_path.empty()) {
        region = body_mask(vol_ds, cfg.stage1.body_threshold);
    } else {
        label_map rl = read_vvf_labels(region_path);
        if (!(rl.dim() == vol_ds.dim()))
            fail_data("--region mask dims must match the downsampled volume");
        region.mask = labels_to_mask(rl);
        region.voxel_fraction = mask_fraction(region.mask);
    }
    prediction p = predict_region(vol_ds, region, st.net, mode, r_overlap);
    label_map labels = upsample_nearest(p.labels, vol.dim());
    labels.set_spacing(vol.spacing());
    probability_map probs = upsample_nearest(p.probs, vol.dim());
    probs.set_spacing(vol.spacing());
    fs::create_directories(out_dir);
    write_vvf(labels, (fs::path(out_dir) / "labels.vvf").string());
    write_vvf(probs, (fs::path(out_dir) / "probs.vvf").string());
    std::printf("predict: wrote labels.vvf and probs.vvf under %s\n", out_dir.c_str());
    return 0;
}

} // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
    using namespace cli_detail;
    CLI::App app{"hierarchical coarse-to-fine 3D FCN segmentation"};
    app.require_subcommand(1);

    std::string config_path, data, run_dir, out_dir, in_path, ckpt, ckpt1, ckpt2;
    std::string init_ckpt, resume_ckpt, region_path, tiles_str, radius_str = "0..6", split = "val";
    int stage = 1, threads = -1, r_overlap_cli = 0;
    float mask_threshold = -300.f;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config) cmd->add_option("--config", config_path, "run configuration file");
        cmd->add_option("--threads", threads, "worker thread cap (default: config or hardware)");
    };

    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic dataset with ground truth");
    add_common(cmd_phantom, true);
    cmd_phantom->add_option("--out", out_dir, "output directory")->required();

    auto* cmd_mask = app.add_subcommand("mask", "compute the thresholded body mask of a volume");
    add_common(cmd_mask, false);
    cmd_mask->add_option("--in", in_path, "input volume (VVF)")->required();
    cmd_mask->add_option("--out", out_dir, "output mask file (VVF labels)")->required();
    cmd_mask->add_option("--threshold", mask_threshold, "intensity threshold (default -300)");

    auto* cmd_train = app.add_subcommand("train", "train one stage");
    add_common(cmd_train, true);
    cmd_train->add_option("--data", data, "dataset manifest")->required();
    cmd_train->add_option("--run", run_dir, "run directory")->required();
    cmd_train->add_option("--stage", stage, "1 or 2")->required();
    cmd_train->add_option("--init", init_ckpt, "stage-1 checkpoint (required for stage 2)");
    cmd_train->add_option("--resume", resume_ckpt, "checkpoint to resume from");

    auto* cmd_predict = app.add_subcommand("predict", "single-stage tiled prediction of one volume");
    add_common(cmd_predict, true);
    cmd_predict->add_option("--in", in_path, "input volume (VVF)")->required();
    cmd_predict->add_option("--ckpt", ckpt, "checkpoint")->required();
    cmd_predict->add_option("--out", out_dir, "output directory")->required();
    cmd_predict->add_option("--tiles", tiles_str, "nonoverlap|overlap (default: config)");
    cmd_predict->add_option("--r,--r-overlap", r_overlap_cli, "overlap sampling rate R");
    cmd_predict->add_option("--region", region_path, "candidate region mask on the working grid");

    auto* cmd_cascade = app.add_subcommand("cascade", "two-stage prediction plus evaluation");
    add_common(cmd_cascade, true);
    cmd_cascade->add_option("--data", data, "dataset manifest")->required();
    cmd_cascade->add_option("--ckpt1", ckpt1, "stage-1 checkpoint")->required();
    cmd_cascade->add_option("--ckpt2", ckpt2, "stage-2 checkpoint")->required();
    cmd_cascade->add_option("--out", out_dir, "output directory")->required();
    cmd_cascade->add_option("--tiles", tiles_str, "nonoverlap|overlap (default: config)");
    cmd_cascade->add_option("--r,--r-overlap", r_overlap_cli, "overlap sampling rate R");
    cmd_cascade->add_option("--split", split, "train|val|all (default val)");

    auto* cmd_sweep = app.add_subcommand("sweep", "stage-1 dilation radius sweep (recall/FPR)");
    add_common(cmd_sweep, true);
    cmd_sweep->add_option("--data", data, "dataset manifest")->required();
    cmd_sweep->add_option("--ckpt1", ckpt1, "stage-1 checkpoint")->required();
    cmd_sweep->add_option("--out", out_dir, "output directory")->required();
    cmd_sweep->add_option("--r", radius_str, "radius range, e.g. 0..6");
    cmd_sweep->add_option("--split", split, "train|val|all (default val)");

    auto* cmd_eval = app.add_subcommand("eval", "score existing predictions against ground truth");
    add_common(cmd_eval, false);
    cmd_eval->add_option("--data", data, "dataset manifest")->required();
    cmd_eval->add_option("--pred", in_path, "directory with <id>_labels.vvf predictions")->required();
    cmd_eval->add_option("--out", out_dir, "output directory")->required();
    cmd_eval->add_option("--threshold", mask_threshold, "body threshold for the FPR universe");
    cmd_eval->add_option("--split", split, "train|val|all (default val)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::fprintf(stderr, "error [config]: %s\n", e.what());
        return int(errc::config);
    }

    try {
        uint64_t config_hash = 0;
        run_config cfg;
        if (!config_path.empty()) cfg = load_config(config_path, &config_hash);
        else validate_config(cfg);
        if (threads >= 0) set_max_threads(threads == 0 ? 1 : threads);
        else if (cfg.threads > 0) set_max_threads(cfg.threads);
        const int active_threads = max_threads();

        tile_mode mode = cfg.tiles;
        if (!tiles_str.empty()) {
            if (tiles_str == "nonoverlap") mode = tile_mode::nonoverlap;
            else if (tiles_str == "overlap") mode = tile_mode::overlap;
            else fail_config("--tiles must be nonoverlap or overlap");
        }
        const int r_overlap = r_overlap_cli > 0 ? r_overlap_cli : cfg.r_overlap;
        if (r_overlap != 1 && r_overlap != 2 && r_overlap != 4 && r_overlap != 8)
            fail_config("--r-overlap must be 1, 2, 4 or 8");

        if (app.got_subcommand(cmd_phantom)) {
            write_run_record(out_dir, "phantom", config_hash, cfg.phantom.seed, active_threads);
            auto cases = generate_phantoms(cfg.phantom, cfg.cases_train + cfg.cases_val);
            for (const auto& c : cases) {
                write_vvf(c.vol, (fs::path(out_dir) / (c.id + "_vol.vvf")).string());
                write_vvf(c.labels, (fs::path(out_dir) / (c.id + "_lab.vvf")).string());
            }
            write_manifest(out_dir, cfg.phantom, cfg.cases_train, cfg.cases_val);
            std::printf("phantom: wrote %d train + %d val cases under %s\n", cfg.cases_train,
                        cfg.cases_val, out_dir.c_str());
            return 0;
        }
        if (app.got_subcommand(cmd_mask)) {
            volume v = read_vvf_volume(in_path);
            candidate_region c = body_mask(v, mask_threshold);
            write_vvf(mask_to_labels(c.mask), out_dir);
            std::printf("mask: voxel fraction %.6f\n", c.voxel_fraction);
            return 0;
        }

        // remaining commands dispatch on the checkpoint / configured dtype
        if (app.got_subcommand(cmd_train)) {
            if (stage != 1 && stage != 2) fail_config("--stage must be 1 or 2");
            write_run_record(run_dir, "train", config_hash, cfg.seed, active_threads);
            if (cfg.dtype == "f64")
                return run_train<double>(cfg, data, run_dir, stage, init_ckpt, resume_ckpt);
            return run_train<float>(cfg, data, run_dir, stage, init_ckpt, resume_ckpt);
        }
        if (app.got_subcommand(cmd_predict)) {
            write_run_record(out_dir, "predict", config_hash, cfg.seed, active_threads);
            if (checkpoint_dtype_of(ckpt) == "f64")
                return run_predict<double>(cfg, in_path, ckpt, out_dir, mode, r_overlap, region_path);
            return run_predict<float>(cfg, in_path, ckpt, out_dir, mode, r_overlap, region_path);
        }
        if (app.got_subcommand(cmd_cascade)) {
            write_run_record(out_dir, "cascade", config_hash, cfg.seed, active_threads);
            if (checkpoint_dtype_of(ckpt1) == "f64")
                return run_cascade<double>(cfg, data, ckpt1, ckpt2, out_dir, mode, r_overlap, split);
            return run_cascade<float>(cfg, data, ckpt1, ckpt2, out_dir, mode, r_overlap, split);
        }
        if (app.got_subcommand(cmd_sweep)) {
            write_run_record(out_dir, "sweep", config_hash, cfg.seed, active_threads);
            auto radii = parse_radius_range(radius_str);
            if (checkpoint_dtype_of(ckpt1) == "f64")
                return run_sweep<double>(cfg, data, ckpt1, out_dir, radii, split);
            return run_sweep<float>(cfg, data, ckpt1, out_dir, radii, split);
        }
        if (app.got_subcommand(cmd_eval)) {
            write_run_record(out_dir, "eval", config_hash, 0, active_threads);
            dataset ds = load_manifest(data);
            std::vector<const seg_case*> cases;
            if (split == "train" || split == "all")
                for (const auto& c : ds.train) cases.push_back(&c);
            if (split == "val" || split == "all")
                for (const auto& c : ds.val) cases.push_back(&c);
            if (cases.empty()) fail_data("no cases in the requested split");
            std::vector<case_metrics> rows;
            for (const seg_case* c : cases) {
                label_map pred =
                    read_vvf_labels((fs::path(in_path) / (c->id + "_labels.vvf")).string());
                score_case(c->id, pred, *c, full_universe(*c, mask_threshold), rows);
            }
            segmentation_report report;
            report.per_case = rows;
            report.finalize();
            write_per_case_csv(report.per_case, (fs::path(out_dir) / "per_case.csv").string());
            write_summary_csv(report.summaries, (fs::path(out_dir) / "summary.csv").string());
            std::printf("eval: %zu cases, mean foreground dice %.6f\n", cases.size(),
                        report.mean_foreground_dice());
            return 0;
        }
        fail_config("no subcommand");
    } catch (const error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", e.category_name(), e.what());
        return int(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error [data]: %s\n", e.what());
        return int(errc::data);
    }
}

} // namespace voxseg
