#pragma once

#include <string>
#include <vector>

#include "voxseg/net/shape.hpp"
#include "voxseg/rng.hpp"

namespace voxseg::net {

enum class tensor_role { conv_w, conv_b, bn_gamma, bn_beta };

struct tensor_desc {
    std::string name;
    tensor_role role;
    std::vector<int> shape;
    size_t offset = 0;
    size_t size = 0;
    int fan_in = 0; // cin * kernel volume, 0 for non-weight tensors
};

// Flat store of every learnable tensor in a fixed registration order plus the
// batch-norm running statistics. The layout is a pure function of the spec,
// which is what makes checkpoints and momentum buffers bit-exact to mirror.
template <typename T>
struct parameter_set {
    std::vector<tensor_desc> tensors;
    std::vector<T> flat;
    // one {mean, var} pair per batch-norm layer, registration order
    std::vector<std::vector<T>> running_mean;
    std::vector<std::vector<T>> running_var;

    size_t add(const std::string& name, tensor_role role, std::vector<int> shape, int fan_in) {
        tensor_desc d;
        d.name = name;
        d.role = role;
        d.shape = std::move(shape);
        d.fan_in = fan_in;
        d.offset = flat.size();
        d.size = 1;
        for (int s : d.shape) d.size *= size_t(s);
        flat.resize(d.offset + d.size, T(0));
        tensors.push_back(d);
        return tensors.size() - 1;
    }

    int add_bn(int channels) {
        running_mean.emplace_back(size_t(channels), T(0));
        running_var.emplace_back(size_t(channels), T(1));
        return int(running_mean.size()) - 1;
    }

    T* view(size_t tensor_index) { return flat.data() + tensors[tensor_index].offset; }
    const T* view(size_t tensor_index) const { return flat.data() + tensors[tensor_index].offset; }

    size_t count() const { return flat.size(); }

    // Zero-mean Gaussians scaled by fan-in for weights, identity batch-norm,
    // zero biases. Draw order follows the registry, one dedicated stream.
    void init(uint64_t seed) {
        rng r = stream_rng(seed, 0x1217'0000'0001ull);
        for (const auto& t : tensors) {
            T* p = flat.data() + t.offset;
            switch (t.role) {
                case tensor_role::conv_w: {
                    const double stddev = std::sqrt(2.0 / double(t.fan_in));
                    for (size_t i = 0; i < t.size; ++i) p[i] = T(r.normal(0.0, stddev));
                    break;
                }
                case tensor_role::conv_b:
                case tensor_role::bn_beta:
                    for (size_t i = 0; i < t.size; ++i) p[i] = T(0);
                    break;
                case tensor_role::bn_gamma:
                    for (size_t i = 0; i < t.size; ++i) p[i] = T(1);
                    break;
            }
        }
        for (auto& m : running_mean) std::fill(m.begin(), m.end(), T(0));
        for (auto& v : running_var) std::fill(v.begin(), v.end(), T(1));
    }

    bool finite() const {
        for (T v : flat)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

} // namespace voxseg::net
