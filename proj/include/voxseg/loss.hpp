#pragma once

#include <cmath>
#include <vector>

#include "voxseg/morphology.hpp"
#include "voxseg/net/ops.hpp"

namespace voxseg {

// Class-balancing weights: lambda_i = (1 - N_i/N_C) / (K - 1), where the
// per-class counts N_i are taken over the candidate region with N_C voxels.
// When the counts partition the region the weights sum to 1.
struct class_weights {
    std::vector<double> lambda;
    size_t region_voxels = 0;          // N_C
    std::vector<size_t> class_voxels;  // N_i

    static class_weights from_counts(const std::vector<size_t>& counts, size_t region_voxels) {
        if (region_voxels == 0) fail_data("class weights over an empty candidate region");
        const size_t k = counts.size();
        if (k < 2) fail_data("class weights need at least 2 classes");
        class_weights w;
        w.region_voxels = region_voxels;
        w.class_voxels = counts;
        w.lambda.resize(k);
        for (size_t i = 0; i < k; ++i)
            w.lambda[i] = (1.0 - double(counts[i]) / double(region_voxels)) / double(k - 1);
        return w;
    }
};

inline void accumulate_class_counts(const label_map& labels, const mask3& region,
                                    std::vector<size_t>& counts, size_t& region_voxels) {
    if (counts.size() != size_t(labels.num_classes)) counts.resize(size_t(labels.num_classes), 0);
    if (labels.dim() != region.dim()) fail_data("class counts: label/region dims differ");
    for (size_t i = 0; i < labels.size(); ++i)
        if (region.raw()[i]) {
            ++counts[labels.raw()[i]];
            ++region_voxels;
        }
}

inline class_weights compute_class_weights(const label_map& labels, const candidate_region& region) {
    std::vector<size_t> counts(size_t(labels.num_classes), 0);
    size_t n = 0;
    accumulate_class_counts(labels, region.mask, counts, n);
    return class_weights::from_counts(counts, n);
}

// Numerically stable softmax over one voxel's K logits.
template <typename T>
void softmax(const T* logits, int k, T* probs) {
    T mx = logits[0];
    for (int i = 1; i < k; ++i)
        if (logits[i] > mx) mx = logits[i];
    if (!std::isfinite(double(mx))) fail_data("softmax: non-finite logits");
    T sum = T(0);
    for (int i = 0; i < k; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    const T inv = T(1) / sum;
    for (int i = 0; i < k; ++i) probs[i] *= inv;
}

template <typename T>
probability_map softmax_map(const net::fmap<T>& logits, const spacing3& sp) {
    probability_map out(logits.d, sp, logits.channels);
    const size_t n = logits.plane();
    std::vector<T> x(size_t(logits.channels)), p(size_t(logits.channels));
    for (size_t i = 0; i < n; ++i) {
        for (int k = 0; k < logits.channels; ++k) x[size_t(k)] = logits.slab(k)[i];
        softmax(x.data(), logits.channels, p.data());
        for (int k = 0; k < logits.channels; ++k) out.channel(k)[i] = float(p[size_t(k)]);
    }
    return out;
}

template <typename T>
struct ce_result {
    double loss = 0.0;
    net::fmap<T> dlogits;
};

// Masked weighted cross-entropy over an output window. Loss is averaged over
// the in-mask voxel count so its magnitude does not depend on the window
// size; out-of-mask voxels contribute exactly zero gradient.
template <typename T>
ce_result<T> weighted_ce(const net::fmap<T>& logits, const uint8_t* labels, const uint8_t* mask,
                         const class_weights& weights) {
    const int k = logits.channels;
    if (int(weights.lambda.size()) != k) fail_config("weighted_ce: weight/class count mismatch");
    ce_result<T> r;
    r.dlogits.resize(k, logits.d);
    const size_t n = logits.plane();

    size_t n_in = 0;
    for (size_t i = 0; i < n; ++i) n_in += mask[i] != 0;
    if (n_in == 0) fail_data("weighted_ce: empty mask window");
    const double inv_n = 1.0 / double(n_in);

    const size_t nk = size_t(k);
    std::vector<T> x(nk), p(nk);
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const int label = labels[i];
        if (label >= k) fail_data("weighted_ce: label out of range");
        T mx = logits.slab(0)[i];
        for (int c = 1; c < k; ++c)
            if (logits.slab(c)[i] > mx) mx = logits.slab(c)[i];
        if (!std::isfinite(double(mx))) fail_divergence("weighted_ce: non-finite logits");
        T sum = T(0);
        for (int c = 0; c < k; ++c) {
            x[size_t(c)] = std::exp(logits.slab(c)[i] - mx);
            sum += x[size_t(c)];
        }
        const double lam = weights.lambda[size_t(label)];
        loss += lam * -(double(logits.slab(label)[i] - mx) - std::log(double(sum)));
        const T scale = T(lam * inv_n);
        const T inv_sum = T(1) / sum;
        for (int c = 0; c < k; ++c) {
            T pc = x[size_t(c)] * inv_sum;
            r.dlogits.slab(c)[i] = scale * (pc - T(c == label ? 1 : 0));
        }
    }
    r.loss = loss * inv_n;
    return r;
}

} // namespace voxseg
