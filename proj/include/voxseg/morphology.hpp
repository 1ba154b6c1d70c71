#pragma once

#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

using mask3 = grid3<uint8_t>; // 0 = background, 1 = set

// Binary candidate region: C1 comes from body_mask (stage 1), C2 from
// dilating stage-1 foreground predictions (stage 2).
struct candidate_region {
    mask3 mask;
    int stage = 1;
    int dilation_radius = 0;
    double voxel_fraction = 0.0;
};

inline size_t count_set(const mask3& m) {
    size_t n = 0;
    for (uint8_t v : m.raw()) n += v != 0;
    return n;
}

inline double mask_fraction(const mask3& m) {
    return double(count_set(m)) / double(m.dim().voxels());
}

inline label_map mask_to_labels(const mask3& m) {
    label_map out(m.dim(), m.spacing(), 2);
    for (size_t i = 0; i < m.size(); ++i) out.raw()[i] = m.raw()[i] ? 1 : 0;
    return out;
}

inline mask3 labels_to_mask(const label_map& m) {
    mask3 out(m.dim(), m.spacing());
    for (size_t i = 0; i < m.size(); ++i) out.raw()[i] = m.raw()[i] != 0;
    return out;
}

// Largest 26-connected component. Errors on an empty input mask.
inline mask3 largest_component(const mask3& m) {
    const dims3 d = m.dim();
    std::vector<int32_t> comp(d.voxels(), -1);
    std::vector<size_t> stack, best_sizes;
    int32_t n_comp = 0;
    size_t best = 0, best_size = 0;
    std::vector<size_t> members, best_members;

    for (size_t seed = 0; seed < d.voxels(); ++seed) {
        if (!m.raw()[seed] || comp[seed] >= 0) continue;
        members.clear();
        stack.assign(1, seed);
        comp[seed] = n_comp;
        while (!stack.empty()) {
            size_t i = stack.back();
            stack.pop_back();
            members.push_back(i);
            int x = int(i % size_t(d.x));
            int y = int((i / size_t(d.x)) % size_t(d.y));
            int z = int(i / (size_t(d.x) * size_t(d.y)));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
                        size_t j = m.index(nx, ny, nz);
                        if (m.raw()[j] && comp[j] < 0) {
                            comp[j] = n_comp;
                            stack.push_back(j);
                        }
                    }
        }
        if (members.size() > best_size) {
            best_size = members.size();
            best = size_t(n_comp);
            best_members = members;
        }
        ++n_comp;
    }
    (void)best;
    if (n_comp == 0) fail_data("largest_component: empty mask");

    mask3 out(d, m.spacing());
    for (size_t i : best_members) out.raw()[i] = 1;
    return out;
}

// Slice-wise hole fill: per z slice, flood the background 4-connected from the
// slice border; background not reached from the border becomes foreground.
inline mask3 fill_holes_2d(const mask3& m) {
    const dims3 d = m.dim();
    mask3 out = m;
    std::vector<uint8_t> reached(size_t(d.x) * size_t(d.y));
    std::vector<int> stack;
    for (int z = 0; z < d.z; ++z) {
        std::fill(reached.begin(), reached.end(), 0);
        stack.clear();
        auto push = [&](int x, int y) {
            int i = x + d.x * y;
            if (!reached[i] && !m.at(x, y, z)) {
                reached[i] = 1;
                stack.push_back(i);
            }
        };
        for (int x = 0; x < d.x; ++x) {
            push(x, 0);
            push(x, d.y - 1);
        }
        for (int y = 0; y < d.y; ++y) {
            push(0, y);
            push(d.x - 1, y);
        }
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            int x = i % d.x, y = i / d.x;
            if (x > 0) push(x - 1, y);
            if (x + 1 < d.x) push(x + 1, y);
            if (y > 0) push(x, y - 1);
            if (y + 1 < d.y) push(x, y + 1);
        }
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                if (!m.at(x, y, z) && !reached[x + d.x * y]) out.at(x, y, z) = 1;
    }
    return out;
}

// Offsets of the discrete Euclidean ball {v : |v|_2 <= r}.
inline std::vector<dims3> ball_offsets(int r) {
    std::vector<dims3> offs;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
                if (dx * dx + dy * dy + dz * dz <= r * r) offs.push_back({dx, dy, dz});
    return offs;
}

inline mask3 dilate(const mask3& m, int r) {
    if (r < 0) fail_data("dilation radius must be >= 0");
    if (r == 0) return m;
    const dims3 d = m.dim();
    const auto offs = ball_offsets(r);
    mask3 out(d, m.spacing());
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!m.at(x, y, z)) continue;
                for (const auto& o : offs) {
                    int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
                    out.at(nx, ny, nz) = 1;
                }
            }
    return out;
}

// Threshold >= level, keep the largest 26-connected component, then close
// slice-wise holes. Produces C1.
inline candidate_region body_mask(const volume& v, float threshold) {
    mask3 m(v.dim(), v.spacing());
    size_t n = 0;
    for (size_t i = 0; i < v.size(); ++i) {
        uint8_t hit = v.raw()[i] >= threshold;
        m.raw()[i] = hit;
        n += hit;
    }
    if (n == 0) fail_data("body_mask: no voxel reaches the threshold");
    mask3 filled = fill_holes_2d(largest_component(m));
    candidate_region r;
    r.voxel_fraction = mask_fraction(filled);
    r.mask = std::move(filled);
    r.stage = 1;
    r.dilation_radius = 0;
    return r;
}

// Union of all foreground classes dilated by r. Produces C2; an all-background
// prediction yields a legal empty region.
inline candidate_region candidate_from_prediction(const label_map& pred, int r) {
    if (pred.num_classes < 2) fail_data("prediction needs at least 2 classes");
    mask3 fg(pred.dim(), pred.spacing());
    for (size_t i = 0; i < pred.size(); ++i) fg.raw()[i] = pred.raw()[i] >= 1;
    candidate_region c;
    c.mask = dilate(fg, r);
    c.stage = 2;
    c.dilation_radius = r;
    c.voxel_fraction = mask_fraction(c.mask);
    return c;
}

} // namespace voxseg
