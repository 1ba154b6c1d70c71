#pragma once

#include <vector>

#include "voxseg/net/unet.hpp"

namespace voxseg::net {

// Momentum SGD over the flat parameter store. One train_state owns its
// network exclusively; steps are serialized by contract.
template <typename T>
struct train_state {
    unet3d<T> net;
    std::vector<T> momentum;
    T learning_rate = T(0.01);
    T momentum_coeff = T(0.9);
    int64_t iteration = 0;
    uint64_t seed = 0;
    double best_val_dice = -1.0;
    int64_t best_val_iteration = -1;

    explicit train_state(const unet_spec& spec) : net(spec), momentum(net.params().count(), T(0)) {}
};

template <typename T>
void sgd_step(train_state<T>& st, const std::vector<T>& grads) {
    auto& p = st.net.params().flat;
    if (grads.size() != p.size() || st.momentum.size() != p.size())
        fail_config("sgd_step: gradient/momentum size mismatch");
    for (T g : grads)
        if (!std::isfinite(double(g)))
            fail_divergence("non-finite gradient at iteration " + std::to_string(st.iteration));
    const T mu = st.momentum_coeff, lr = st.learning_rate;
    T* pd = p.data();
    T* md = st.momentum.data();
    const T* gd = grads.data();
    const size_t n = p.size();
    const size_t chunk = 1 << 16;
    parallel_for((n + chunk - 1) / chunk, [&](size_t c) {
        const size_t end = std::min(n, (c + 1) * chunk);
        for (size_t i = c * chunk; i < end; ++i) {
            md[i] = mu * md[i] + gd[i];
            pd[i] -= lr * md[i];
        }
    });
    ++st.iteration;
}

} // namespace voxseg::net
