#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "voxseg/phantom.hpp"
#include "voxseg/pipeline.hpp"

namespace voxseg {

// Merged run configuration: phantom generator, network, both stages, tiling.
// Parsed from flat key=value text; every key is validated before any compute.
struct run_config {
    uint64_t seed = 1234;
    int threads = 0; // 0: hardware concurrency
    std::string dtype = "f32";
    int downsample_factor = 2;

    phantom_spec phantom;
    int cases_train = 20;
    int cases_val = 5;

    unet_spec net{2, 8, 1, 4, {28, 28, 28}};

    stage_config stage1;
    stage_config stage2;

    tile_mode tiles = tile_mode::overlap;
    int r_overlap = 4;

    run_config() {
        stage1.stage = 1;
        stage2.stage = 2;
    }
};

inline uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline dims3 parse_dims(const std::string& v, const std::string& key) {
    dims3 d;
    char c1, c2;
    std::istringstream is(v);
    if (!(is >> d.x >> c1 >> d.y >> c2 >> d.z) || c1 != ',' || c2 != ',')
        fail_config("malformed triple for " + key + ": '" + v + "'");
    std::string rest;
    if (is >> rest) fail_config("malformed triple for " + key + ": '" + v + "'");
    return d;
}

inline spacing3 parse_spacing(const std::string& v, const std::string& key) {
    spacing3 s;
    char c1, c2;
    std::istringstream is(v);
    if (!(is >> s.x >> c1 >> s.y >> c2 >> s.z) || c1 != ',' || c2 != ',')
        fail_config("malformed triple for " + key + ": '" + v + "'");
    return s;
}

inline double parse_num(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) fail_config("malformed number for " + key + ": '" + v + "'");
        return d;
    } catch (const error&) {
        throw;
    } catch (...) {
        fail_config("malformed number for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    fail_config("malformed boolean for " + key + ": '" + v + "'");
}

inline void apply_stage_key(stage_config& s, const std::string& sub, const std::string& value,
                            const std::string& key) {
    if (sub == "iterations") s.iterations = int64_t(parse_num(value, key));
    else if (sub == "lr") s.learning_rate = parse_num(value, key);
    else if (sub == "lr_step_iterations") s.lr_step_iterations = int64_t(parse_num(value, key));
    else if (sub == "lr_step_factor") s.lr_step_factor = parse_num(value, key);
    else if (sub == "momentum") s.momentum = parse_num(value, key);
    else if (sub == "body_threshold") s.body_threshold = float(parse_num(value, key));
    else if (sub == "r") s.dilation_radius = int(parse_num(value, key));
    else if (sub == "augment") s.augment = parse_bool(value, key);
    else if (sub == "sigma") s.deform_sigma = parse_num(value, key);
    else if (sub == "grid_spacing") s.deform_grid_spacing = int(parse_num(value, key));
    else if (sub == "angle") s.rotation_bound_deg = parse_num(value, key);
    else if (sub == "val_interval") s.val_interval = int64_t(parse_num(value, key));
    else if (sub == "checkpoint_interval") s.checkpoint_interval = int64_t(parse_num(value, key));
    else fail_config("unknown config key: " + key);
}

} // namespace detail

inline run_config parse_config_text(const std::string& text) {
    run_config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments and surrounding whitespace
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto notspace = [](unsigned char c) { return !std::isspace(c); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            fail_config("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        auto trim = [&](std::string& s) {
            s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
            s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
        };
        trim(key);
        trim(value);

        using detail::parse_bool;
        using detail::parse_dims;
        using detail::parse_num;
        using detail::parse_spacing;
        if (key == "seed") cfg.seed = uint64_t(parse_num(value, key));
        else if (key == "threads") cfg.threads = int(parse_num(value, key));
        else if (key == "dtype") cfg.dtype = value;
        else if (key == "downsample_factor") cfg.downsample_factor = int(parse_num(value, key));
        else if (key == "phantom.dims") cfg.phantom.dims = parse_dims(value, key);
        else if (key == "phantom.spacing") cfg.phantom.spacing = parse_spacing(value, key);
        else if (key == "phantom.seed") cfg.phantom.seed = uint64_t(parse_num(value, key));
        else if (key == "phantom.noise_sigma") cfg.phantom.noise_sigma = parse_num(value, key);
        else if (key == "phantom.tube_radius") cfg.phantom.tube_radius = parse_num(value, key);
        else if (key == "phantom.cases_train") cfg.cases_train = int(parse_num(value, key));
        else if (key == "phantom.cases_val") cfg.cases_val = int(parse_num(value, key));
        else if (key == "net.levels") cfg.net.levels = int(parse_num(value, key));
        else if (key == "net.base_channels") cfg.net.base_channels = int(parse_num(value, key));
        else if (key == "net.classes") cfg.net.num_classes = int(parse_num(value, key));
        else if (key == "net.tile") cfg.net.input_tile = parse_dims(value, key);
        else if (key.rfind("stage1.", 0) == 0)
            detail::apply_stage_key(cfg.stage1, key.substr(7), value, key);
        else if (key.rfind("stage2.", 0) == 0)
            detail::apply_stage_key(cfg.stage2, key.substr(7), value, key);
        else if (key == "tiles.mode") {
            if (value == "nonoverlap") cfg.tiles = tile_mode::nonoverlap;
            else if (value == "overlap") cfg.tiles = tile_mode::overlap;
            else fail_config("tiles.mode must be nonoverlap or overlap");
        } else if (key == "tiles.r") {
            cfg.r_overlap = int(parse_num(value, key));
        } else {
            fail_config("unknown config key: " + key);
        }
    }
    return cfg;
}

inline void validate_config(const run_config& cfg) {
    if (cfg.dtype != "f32" && cfg.dtype != "f64") fail_config("dtype must be f32 or f64");
    if (cfg.downsample_factor < 1) fail_config("downsample_factor must be >= 1");
    if (cfg.threads < 0) fail_config("threads must be >= 0");
    if (cfg.cases_train < 1 || cfg.cases_val < 0) fail_config("phantom case counts invalid");
    if (cfg.r_overlap != 1 && cfg.r_overlap != 2 && cfg.r_overlap != 4 && cfg.r_overlap != 8)
        fail_config("tiles.r must be 1, 2, 4 or 8");
    check_phantom_spec(cfg.phantom);
    check_spec(cfg.net); // rejects tiles that fail the shape arithmetic
    if (cfg.phantom.num_classes != cfg.net.num_classes)
        fail_config("phantom classes and network classes must match");
    check_stage_config(cfg.stage1);
    check_stage_config(cfg.stage2);
    if (cfg.stage1.stage != 1 || cfg.stage2.stage != 2) fail_config("stage blocks mislabeled");
}

inline run_config load_config(const std::string& path, uint64_t* hash_out = nullptr) {
    std::ifstream in(path);
    if (!in) fail_config("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    if (hash_out) *hash_out = fnv1a64(ss.str());
    run_config cfg = parse_config_text(ss.str());
    validate_config(cfg);
    return cfg;
}

} // namespace voxseg
