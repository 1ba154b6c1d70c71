#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "voxseg/net/sgd.hpp"

// Checkpoint container, VVF-style: "VCKP1" magic, ASCII key=value header,
// blank line, raw little-endian payload. Payload order: parameters, momentum
// buffers, then per batch-norm layer the running mean and variance, all in
// the registry order. Write/read round-trips bit-exactly.

namespace voxseg::net {

template <typename T>
const char* checkpoint_dtype() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
}

template <typename T>
void write_checkpoint(const train_state<T>& st, const std::string& path) {
    const auto& spec = st.net.spec();
    std::ostringstream h;
    h << "VCKP1\n";
    h << "levels=" << spec.levels << "\n";
    h << "base_channels=" << spec.base_channels << "\n";
    h << "in_channels=" << spec.in_channels << "\n";
    h << "classes=" << spec.num_classes << "\n";
    h << "tile=" << spec.input_tile.x << "," << spec.input_tile.y << "," << spec.input_tile.z << "\n";
    h << "dtype=" << checkpoint_dtype<T>() << "\n";
    h << "iteration=" << st.iteration << "\n";
    h << "seed=" << st.seed << "\n";
    char buf[32];
    auto fmt = [&](double v) {
        auto r = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, r.ptr);
    };
    h << "lr=" << fmt(double(st.learning_rate)) << "\n";
    h << "momentum=" << fmt(double(st.momentum_coeff)) << "\n";
    h << "best_val=" << fmt(st.best_val_dice) << "\n";
    h << "best_val_iter=" << st.best_val_iteration << "\n";
    h << "\n";

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write checkpoint " + path);
    const std::string header = h.str();
    out.write(header.data(), std::streamsize(header.size()));
    auto put = [&](const std::vector<T>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
    };
    put(st.net.params().flat);
    put(st.momentum);
    for (size_t i = 0; i < st.net.params().running_mean.size(); ++i) {
        put(st.net.params().running_mean[i]);
        put(st.net.params().running_var[i]);
    }
    if (!out) fail_data("checkpoint write failed: " + path);
}

template <typename T>
train_state<T> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open checkpoint " + path);
    std::string line;
    if (!std::getline(in, line) || line != "VCKP1") fail_data(path + ": bad checkpoint magic");
    std::map<std::string, std::string> kv;
    while (std::getline(in, line)) {
        if (line.empty()) break;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail_data(path + ": malformed checkpoint header");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) fail_data(path + ": missing checkpoint key '" + std::string(key) + "'");
        return it->second;
    };
    if (need("dtype") != checkpoint_dtype<T>())
        fail_data(path + ": checkpoint dtype " + need("dtype") + " does not match requested scalar type");

    unet_spec spec;
    spec.levels = std::stoi(need("levels"));
    spec.base_channels = std::stoi(need("base_channels"));
    spec.in_channels = std::stoi(need("in_channels"));
    spec.num_classes = std::stoi(need("classes"));
    {
        std::istringstream ts(need("tile"));
        char c;
        ts >> spec.input_tile.x >> c >> spec.input_tile.y >> c >> spec.input_tile.z;
        if (!ts) fail_data(path + ": malformed tile");
    }

    train_state<T> st(spec);
    st.iteration = std::stoll(need("iteration"));
    st.seed = std::stoull(need("seed"));
    st.learning_rate = T(std::stod(need("lr")));
    st.momentum_coeff = T(std::stod(need("momentum")));
    st.best_val_dice = std::stod(need("best_val"));
    st.best_val_iteration = std::stoll(need("best_val_iter"));

    auto get = [&](std::vector<T>& v) {
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
    };
    get(st.net.params().flat);
    get(st.momentum);
    for (size_t i = 0; i < st.net.params().running_mean.size(); ++i) {
        get(st.net.params().running_mean[i]);
        get(st.net.params().running_var[i]);
    }
    if (!in) fail_data(path + ": checkpoint payload truncated");
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) fail_data(path + ": checkpoint payload longer than expected");
    return st;
}

} // namespace voxseg::net
