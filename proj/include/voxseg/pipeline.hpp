#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include "voxseg/inference.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/net/checkpoint.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/vvf.hpp"

namespace voxseg {

struct stage_config {
    int stage = 1;
    int64_t iterations = 5000;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int64_t lr_step_iterations = 0; // 0: constant lr; else multiply by lr_step_factor every step
    double lr_step_factor = 0.1;
    float body_threshold = -300.f; // stage-1 candidate source
    int dilation_radius = 3;       // stage-2 candidate source
    bool augment = true;
    double deform_sigma = 4.0;      // voxels of the downsampled grid
    int deform_grid_spacing = 32;   // voxels of the downsampled grid
    double rotation_bound_deg = 5.0;
    int64_t val_interval = 1000;       // evaluated at exact multiples only
    int64_t checkpoint_interval = 0;   // 0: only best + final

    // pure function of the iteration number, so resume cannot drift
    double lr_at(int64_t iteration) const {
        if (lr_step_iterations <= 0) return learning_rate;
        double lr = learning_rate;
        for (int64_t k = lr_step_iterations; k <= iteration; k += lr_step_iterations)
            lr *= lr_step_factor;
        return lr;
    }
};

inline void check_stage_config(const stage_config& c) {
    if (c.stage != 1 && c.stage != 2) fail_config("stage must be 1 or 2");
    if (c.iterations < 1) fail_config("iterations must be >= 1");
    if (c.dilation_radius < 0) fail_config("dilation radius must be >= 0");
    if (c.deform_grid_spacing < 2) fail_config("deformation grid spacing must be >= 2");
    if (c.deform_sigma < 0) fail_config("deformation sigma must be >= 0");
    if (c.val_interval < 1) fail_config("validation interval must be >= 1");
    if (c.lr_step_iterations < 0) fail_config("lr_step_iterations must be >= 0");
    if (!(c.lr_step_factor > 0)) fail_config("lr_step_factor must be > 0");
}

// Training/validation splits are disjoint by construction: cases are distinct
// objects and ids are checked unique across both splits.
struct dataset {
    std::vector<seg_case> train;
    std::vector<seg_case> val;

    void check() const {
        std::vector<std::string> ids;
        for (const auto& c : train) ids.push_back(c.id);
        for (const auto& c : val) ids.push_back(c.id);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            fail_data("dataset: duplicate case id across splits");
        for (const auto& c : train) {
            if (!(c.vol.dim() == c.labels.dim())) fail_data("dataset: volume/label dims differ");
            if (!(c.vol.spacing() == c.labels.spacing())) fail_data("dataset: volume/label spacing differs");
        }
        for (const auto& c : val) {
            if (!(c.vol.dim() == c.labels.dim())) fail_data("dataset: volume/label dims differ");
            if (!(c.vol.spacing() == c.labels.spacing())) fail_data("dataset: volume/label spacing differs");
        }
    }
};

// Instrumentation for the masking invariants: stage-2 training must never pay
// loss on voxels outside C2 nor sample windows that miss it.
struct pipeline_counters {
    uint64_t loss_voxels_outside_region = 0;
    uint64_t windows_without_region_voxel = 0;
    uint64_t augment_fallbacks = 0;
    uint64_t empty_region_cases = 0;
};

// Per-volume z-score of the intensities. The network always sees normalized
// inputs; thresholding and the body mask work on the raw values. Idempotent
// in effect, so normalizing an already normalized volume is harmless.
inline volume normalize_intensity(const volume& v) {
    double mean = 0;
    for (float x : v.raw()) mean += x;
    mean /= double(v.size());
    double var = 0;
    for (float x : v.raw()) var += (x - mean) * (x - mean);
    const double inv_std = 1.0 / std::max(std::sqrt(var / double(v.size())), 1e-6);
    volume out(v.dim(), v.spacing());
    for (size_t i = 0; i < v.size(); ++i) out.raw()[i] = float((v.raw()[i] - mean) * inv_std);
    return out;
}

// One case on the working (downsampled) grid plus its original-resolution
// ground truth for validation scoring. vol_ds holds the normalized
// intensities; candidate regions are computed from the raw values first.
struct case_context {
    std::string id;
    volume vol_ds;
    label_map labels_ds;
    candidate_region region;
    const seg_case* original = nullptr;
};

template <typename T>
prediction predict_region(const volume& vol_ds, const candidate_region& region,
                          const net::unet3d<T>& network, tile_mode mode, int r_overlap) {
    tiling_plan plan = plan_tiles(region, network.spec(), mode, r_overlap);
    return predict_tiles(normalize_intensity(vol_ds), region, network, plan);
}

// Builds the per-case working contexts for one stage. Stage 1 masks by the
// thresholded body; stage 2 dilates the stage-1 network's prediction. A
// stage-2 case whose prediction is all background keeps an empty region and
// is skipped by the sampler (flagged in the counters).
template <typename T>
std::vector<case_context> build_stage_contexts(const std::vector<seg_case>& cases, int factor,
                                               const stage_config& cfg,
                                               const net::unet3d<T>* stage1_net,
                                               pipeline_counters* counters = nullptr) {
    if (cfg.stage == 2 && stage1_net == nullptr)
        fail_config("stage 2 requires a stage-1 checkpoint");
    std::vector<case_context> out(cases.size());
    for (size_t i = 0; i < cases.size(); ++i) {
        case_context& ctx = out[i];
        ctx.id = cases[i].id;
        ctx.original = &cases[i];
        ctx.vol_ds = factor == 1 ? cases[i].vol : downsample(cases[i].vol, factor);
        ctx.labels_ds = factor == 1 ? cases[i].labels : downsample(cases[i].labels, factor);
        if (cfg.stage == 1) {
            ctx.region = body_mask(ctx.vol_ds, cfg.body_threshold);
        } else {
            candidate_region c1 = body_mask(ctx.vol_ds, cfg.body_threshold);
            prediction p1 = predict_region(ctx.vol_ds, c1, *stage1_net, tile_mode::nonoverlap, 1);
            ctx.region = candidate_from_prediction(p1.labels, cfg.dilation_radius);
            if (count_set(ctx.region.mask) == 0 && counters) ++counters->empty_region_cases;
        }
        ctx.vol_ds = normalize_intensity(ctx.vol_ds);
    }
    return out;
}

inline class_weights stage_class_weights(const std::vector<case_context>& contexts, int num_classes) {
    std::vector<size_t> counts(size_t(num_classes), 0);
    size_t total = 0;
    for (const auto& ctx : contexts) accumulate_class_counts(ctx.labels_ds, ctx.region.mask, counts, total);
    return class_weights::from_counts(counts, total);
}

// Mean foreground Dice of a prediction scored at the original resolution.
inline double case_val_dice(const prediction& pred_ds, const seg_case& original) {
    label_map up = upsample_nearest(pred_ds.labels, original.labels.dim());
    up.set_spacing(original.labels.spacing());
    auto per_class = dice_per_class(up, original.labels);
    double sum = 0;
    int n = 0;
    for (size_t k = 1; k < per_class.size(); ++k) {
        sum += per_class[k];
        ++n;
    }
    return n ? sum / n : 0.0;
}

struct train_result {
    int64_t best_iteration = -1;
    double best_val_dice = -1.0;
    std::string best_checkpoint;
    std::string final_checkpoint;
    pipeline_counters counters;
};

namespace detail {

inline uint64_t stage_stream_salt(int stage) { return stage == 1 ? 0x51a6e001ull : 0x51a6e002ull; }

template <typename T>
double validation_dice(const std::vector<case_context>& val_ctx, const net::unet3d<T>& network) {
    if (val_ctx.empty()) return -1.0;
    double sum = 0;
    int n = 0;
    for (const auto& ctx : val_ctx) {
        if (count_set(ctx.region.mask) == 0) continue; // empty C2: skipped, background everywhere
        prediction p = predict_region(ctx.vol_ds, ctx.region, network, tile_mode::nonoverlap, 1);
        sum += case_val_dice(p, *ctx.original);
        ++n;
    }
    return n ? sum / n : -1.0;
}

} // namespace detail

// The training loop of one stage: sample a case, augment it, cut a window
// from the stage's candidate region, run forward/loss/backward/step. All
// randomness of iteration i comes from a stream derived from (seed, stage, i),
// which is what makes checkpoint resume bit-exact.
template <typename T>
train_result train_stage(const dataset& ds, const unet_spec& spec, const stage_config& cfg,
                         int downsample_factor, uint64_t seed, const std::string& run_dir,
                         const net::unet3d<T>* stage1_net, net::train_state<T>* resume_state = nullptr) {
    check_stage_config(cfg);
    check_spec(spec);
    ds.check();
    if (ds.train.empty()) fail_data("training split is empty");

    pipeline_counters counters;
    std::vector<case_context> train_ctx =
        build_stage_contexts(ds.train, downsample_factor, cfg, stage1_net, &counters);
    std::vector<case_context> val_ctx =
        build_stage_contexts(ds.val, downsample_factor, cfg, stage1_net, &counters);

    std::vector<size_t> sampleable;
    for (size_t i = 0; i < train_ctx.size(); ++i)
        if (count_set(train_ctx[i].region.mask) > 0) sampleable.push_back(i);
    if (sampleable.empty()) fail_data("no training case has a non-empty candidate region");

    class_weights weights = stage_class_weights(train_ctx, spec.num_classes);

    // fresh state, fine-tune from the stage-1 network, or resume
    std::optional<net::train_state<T>> owned;
    net::train_state<T>* st;
    if (resume_state) {
        st = resume_state;
        if (!(st->net.spec().input_tile == spec.input_tile)) fail_config("resume: spec mismatch");
    } else {
        owned.emplace(spec);
        st = &*owned;
        st->seed = seed;
        st->learning_rate = T(cfg.learning_rate);
        st->momentum_coeff = T(cfg.momentum);
        if (cfg.stage == 2) {
            if (stage1_net->spec().levels != spec.levels ||
                stage1_net->spec().base_channels != spec.base_channels ||
                stage1_net->spec().num_classes != spec.num_classes)
                fail_config("stage-2 fine-tuning needs the stage-1 layer inventory");
            st->net.params() = stage1_net->params();
        } else {
            st->net.init_params(seed);
        }
    }

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(run_dir) / "checkpoints");
    fs::create_directories(fs::path(run_dir) / "logs");
    const std::string stage_tag = "stage" + std::to_string(cfg.stage);
    const std::string loss_path = (fs::path(run_dir) / "logs" / "loss.csv").string();
    const std::string val_path = (fs::path(run_dir) / "logs" / "val_dice.csv").string();
    const bool resuming = resume_state != nullptr && st->iteration > 0;
    std::ofstream loss_log(loss_path, resuming ? std::ios::app : std::ios::trunc);
    std::ofstream val_log(val_path, resuming ? std::ios::app : std::ios::trunc);
    if (!loss_log || !val_log) fail_data("cannot write training logs under " + run_dir);
    if (!resuming) {
        loss_log << "iteration,case,loss\n";
        val_log << "iteration,mean_dice\n";
    }
    {
        std::ofstream wlog((fs::path(run_dir) / "logs" / "class_weights.csv").string(),
                           std::ios::trunc);
        wlog << "class,lambda,region_voxels\n";
        for (size_t k = 0; k < weights.lambda.size(); ++k)
            wlog << k << ',' << detail::fmt6(weights.lambda[k]) << ',' << weights.class_voxels[k]
                 << '\n';
    }

    train_result result;
    result.best_val_dice = st->best_val_dice;
    result.best_iteration = st->best_val_iteration;
    const std::string best_path = (fs::path(run_dir) / "checkpoints" / (stage_tag + "_best.ckpt")).string();
    const std::string final_path = (fs::path(run_dir) / "checkpoints" / (stage_tag + "_final.ckpt")).string();

    const dims3 out_dims = output_tile(spec);
    std::vector<T> grads(st->net.params().count());
    std::vector<uint8_t> win_labels(out_dims.voxels()), win_mask(out_dims.voxels());
    const uint64_t stream_seed = resume_state ? st->seed : seed;

    auto run_validation = [&](int64_t iter) {
        const double v = detail::validation_dice(val_ctx, st->net);
        if (v < 0) return;
        val_log << iter << ',' << detail::fmt6(v) << '\n';
        if (v > st->best_val_dice) {
            st->best_val_dice = v;
            st->best_val_iteration = iter;
            net::write_checkpoint(*st, best_path);
        }
    };

    for (int64_t iter = st->iteration; iter < cfg.iterations; ++iter) {
        rng r = stream_rng(stream_seed ^ detail::stage_stream_salt(cfg.stage), uint64_t(iter));
        const case_context& ctx = train_ctx[sampleable[r.uniform_index(sampleable.size())]];

        // deform, then rotate, then crop the sample window; image, labels and
        // region mask all see the same transform
        const volume* vol = &ctx.vol_ds;
        const label_map* labels = &ctx.labels_ds;
        const mask3* region = &ctx.region.mask;
        volume aug_vol;
        label_map aug_labels;
        mask3 aug_region;
        if (cfg.augment) {
            deformation_field field = deformation_field::random(
                ctx.vol_ds.dim(), cfg.deform_grid_spacing, cfg.deform_sigma, r);
            const int axis = int(r.uniform_index(3));
            const double angle = r.uniform(-cfg.rotation_bound_deg, cfg.rotation_bound_deg);
            aug_vol = rotate_checked(deform(ctx.vol_ds, field), angle, axis, cfg.rotation_bound_deg);
            aug_labels = rotate_checked(deform(ctx.labels_ds, field), angle, axis, cfg.rotation_bound_deg);
            aug_region = rotate_checked(deform(ctx.region.mask, field), angle, axis, cfg.rotation_bound_deg);
            if (count_set(aug_region) == 0) {
                ++counters.augment_fallbacks; // degenerate warp, train on the raw case
            } else {
                vol = &aug_vol;
                labels = &aug_labels;
                region = &aug_region;
            }
        }

        sample_window win = sample_window_from_region(*region, spec, r);

        net::fmap<T> input;
        extract_input_window(*vol, win, input);
        size_t in_mask = 0;
        size_t wi = 0;
        for (int z = 0; z < out_dims.z; ++z)
            for (int y = 0; y < out_dims.y; ++y)
                for (int x = 0; x < out_dims.x; ++x, ++wi) {
                    const int sx = win.out_origin.x + x, sy = win.out_origin.y + y,
                              sz = win.out_origin.z + z;
                    win_labels[wi] = labels->at(sx, sy, sz);
                    win_mask[wi] = region->at(sx, sy, sz);
                    in_mask += win_mask[wi];
                }
        if (in_mask == 0) ++counters.windows_without_region_voxel; // contract: cannot happen

        st->learning_rate = T(cfg.lr_at(iter));
        net::fmap<T> logits = st->net.forward_train(input);
        ce_result<T> ce = weighted_ce(logits, win_labels.data(), win_mask.data(), weights);
        if (!std::isfinite(ce.loss))
            fail_divergence("non-finite loss at iteration " + std::to_string(iter));
        // masking invariant: no gradient may reach out-of-region voxels
        for (size_t v = 0; v < out_dims.voxels(); ++v)
            if (!win_mask[v])
                for (int k = 0; k < logits.channels; ++k)
                    if (ce.dlogits.slab(k)[v] != T(0)) ++counters.loss_voxels_outside_region;
        std::fill(grads.begin(), grads.end(), T(0));
        st->net.backward(ce.dlogits, grads);
        net::sgd_step(*st, grads);

        loss_log << iter << ',' << ctx.id << ',' << detail::fmt6(ce.loss) << '\n';

        // validation points are a pure function of the iteration number, so a
        // resumed run sees exactly the validations a straight run would
        const int64_t done = iter + 1;
        if (done % cfg.val_interval == 0) run_validation(done);
        if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done != cfg.iterations)
            net::write_checkpoint(*st, (fs::path(run_dir) / "checkpoints" /
                                        (stage_tag + "_iter" + std::to_string(done) + ".ckpt"))
                                           .string());
    }
    net::write_checkpoint(*st, final_path);

    result.best_iteration = st->best_val_iteration;
    result.best_val_dice = st->best_val_dice;
    result.best_checkpoint = fs::exists(best_path) ? best_path : final_path;
    result.final_checkpoint = final_path;
    result.counters = counters;
    return result;
}

// Full coarse-to-fine prediction: downsample, body mask, stage-1 prediction
// with non-overlapping tiles, dilate into C2, stage-2 prediction, upsample
// back to the original grid. Voxels outside C2 stay background.
struct cascade_result {
    label_map labels;        // original resolution
    probability_map probs;   // original resolution
    candidate_region c1, c2; // downsampled grid
    bool empty_c2 = false;
};

template <typename T>
cascade_result cascade_predict(const volume& vol, const net::unet3d<T>& net1,
                               const net::unet3d<T>& net2, int dilation_radius, tile_mode mode,
                               int r_overlap, int downsample_factor, float body_threshold) {
    cascade_result res;
    volume vol_ds = downsample_factor == 1 ? vol : downsample(vol, downsample_factor);
    res.c1 = body_mask(vol_ds, body_threshold); // errors when nothing clears the threshold
    prediction p1 = predict_region(vol_ds, res.c1, net1, tile_mode::nonoverlap, 1);
    res.c2 = candidate_from_prediction(p1.labels, dilation_radius);
    if (count_set(res.c2.mask) == 0) {
        res.empty_c2 = true;
        res.labels = label_map(vol.dim(), vol.spacing(), net2.spec().num_classes);
        res.probs = probability_map(vol.dim(), vol.spacing(), net2.spec().num_classes);
        for (size_t i = 0; i < vol.dim().voxels(); ++i) res.probs.channel(0)[i] = 1.f;
        return res;
    }
    prediction p2 = predict_region(vol_ds, res.c2, net2, mode, r_overlap);
    res.labels = upsample_nearest(p2.labels, vol.dim());
    res.labels.set_spacing(vol.spacing());
    res.probs = upsample_nearest(p2.probs, vol.dim());
    res.probs.set_spacing(vol.spacing());
    return res;
}

} // namespace voxseg
