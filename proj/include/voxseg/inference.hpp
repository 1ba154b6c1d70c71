#pragma once

#include <functional>
#include <vector>

#include "voxseg/augment.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/morphology.hpp"
#include "voxseg/net/unet.hpp"

namespace voxseg {

// Sliding-window coverage of a candidate region. The base grid is anchored at
// the region bounding box with stride equal to the output window; windows are
// clamped inward at the volume edge so every output voxel stays inside the
// volume. Overlapping mode adds grids shifted by half a stride: x, y for the
// default R=4, optionally z for R=8, giving every interior voxel R
// predictions to average.
struct tiling_plan {
    std::vector<sample_window> tiles;
    tile_mode mode = tile_mode::nonoverlap;
    int sampling_rate = 1; // R
    dims3 volume_dims;
    dims3 out_dims;
    std::vector<uint32_t> coverage; // per-voxel tile count
};

namespace detail {

// The base grid clamps its last window inward so the bounding box is always
// fully covered. Shifted oversampling grids instead drop windows that would
// need clamping: the base grid already covers that margin and stacking a
// clamped duplicate there would inflate the coverage count past R.
inline std::vector<int> axis_origins(int bmin, int bmax, int out, int dim, int shift) {
    std::vector<int> os;
    const bool base_grid = shift == 0;
    for (int o = bmin + shift; o <= bmax; o += out) {
        if (o > dim - out) {
            if (base_grid) os.push_back(dim - out);
            break;
        }
        os.push_back(o);
    }
    return os;
}

// summed-volume table for fast window/region intersection tests
struct box_counter {
    explicit box_counter(const mask3& m) : px(m.dim().x + 1), py(m.dim().y + 1), pz(m.dim().z + 1) {
        s.assign(size_t(px) * py * pz, 0);
        for (int z = 1; z < pz; ++z)
            for (int y = 1; y < py; ++y) {
                uint32_t row = 0;
                for (int x = 1; x < px; ++x) {
                    row += m.at(x - 1, y - 1, z - 1) ? 1u : 0u;
                    at(x, y, z) = row + at(x, y, z - 1) + at(x, y - 1, z) - at(x, y - 1, z - 1);
                }
            }
    }
    uint32_t& at(int x, int y, int z) {
        return s[size_t(x) + size_t(px) * (size_t(y) + size_t(py) * size_t(z))];
    }
    uint32_t at(int x, int y, int z) const {
        return s[size_t(x) + size_t(px) * (size_t(y) + size_t(py) * size_t(z))];
    }
    uint32_t count(int x0, int y0, int z0, int x1, int y1, int z1) const {
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) +
               at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
    }
    int px, py, pz;
    std::vector<uint32_t> s;
};

} // namespace detail

inline tiling_plan plan_tiles(const candidate_region& region, const unet_spec& spec, tile_mode mode,
                              int r_overlap = 4) {
    const mask3& m = region.mask;
    const dims3 d = m.dim();
    const dims3 out = output_tile(spec);
    if (d.x < out.x || d.y < out.y || d.z < out.z)
        fail_data("plan_tiles: volume smaller than the output window");
    if (count_set(m) == 0) fail_data("plan_tiles: empty candidate region");
    const int r = mode == tile_mode::nonoverlap ? 1 : r_overlap;
    if (r != 1 && r != 2 && r != 4 && r != 8)
        fail_config("overlap sampling rate must be 1, 2, 4 or 8");

    // region bounding box
    dims3 bmin = d, bmax{-1, -1, -1};
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                if (m.at(x, y, z)) {
                    bmin.x = std::min(bmin.x, x);
                    bmin.y = std::min(bmin.y, y);
                    bmin.z = std::min(bmin.z, z);
                    bmax.x = std::max(bmax.x, x);
                    bmax.y = std::max(bmax.y, y);
                    bmax.z = std::max(bmax.z, z);
                }

    std::vector<dims3> shifts{{0, 0, 0}};
    if (r >= 2) shifts.push_back({out.x / 2, 0, 0});
    if (r >= 4) {
        shifts.push_back({0, out.y / 2, 0});
        shifts.push_back({out.x / 2, out.y / 2, 0});
    }
    if (r == 8) {
        size_t base = shifts.size();
        for (size_t i = 0; i < base; ++i) shifts.push_back({shifts[i].x, shifts[i].y, out.z / 2});
    }

    detail::box_counter counter(m);
    tiling_plan plan;
    plan.mode = mode;
    plan.sampling_rate = r;
    plan.volume_dims = d;
    plan.out_dims = out;
    for (const auto& sh : shifts) {
        auto xs = detail::axis_origins(bmin.x, bmax.x, out.x, d.x, sh.x);
        auto ys = detail::axis_origins(bmin.y, bmax.y, out.y, d.y, sh.y);
        auto zs = detail::axis_origins(bmin.z, bmax.z, out.z, d.z, sh.z);
        for (int oz : zs)
            for (int oy : ys)
                for (int ox : xs)
                    if (counter.count(ox, oy, oz, ox + out.x, oy + out.y, oz + out.z) > 0)
                        plan.tiles.push_back(make_window({ox, oy, oz}, spec));
    }

    plan.coverage.assign(d.voxels(), 0);
    for (const auto& t : plan.tiles)
        for (int z = 0; z < out.z; ++z)
            for (int y = 0; y < out.y; ++y) {
                uint32_t* row = plan.coverage.data() +
                                m.index(t.out_origin.x, t.out_origin.y + y, t.out_origin.z + z);
                for (int x = 0; x < out.x; ++x) ++row[x];
            }
    return plan;
}

struct prediction {
    probability_map probs;
    label_map labels;
};

// Assembles per-tile class probabilities into a full map. Each covered
// in-region voxel gets the arithmetic mean over the tiles that predicted it
// (true per-voxel coverage count, so edge voxels average over fewer tiles);
// everything else is background with probability one. Accumulation runs in
// tile-index order, so the result is independent of how tiles were computed.
template <typename TileFn>
prediction assemble_tiles(const dims3& d, const spacing3& sp, const mask3& region, int num_classes,
                          const tiling_plan& plan, TileFn&& tile_probabilities) {
    const size_t n = d.voxels();
    std::vector<double> acc(n * size_t(num_classes), 0.0);
    std::vector<uint32_t> cover(n, 0);
    const dims3 out = plan.out_dims;

    for (const auto& t : plan.tiles) {
        // K x out_dims probabilities for this tile, channel-major
        const std::vector<double> p = tile_probabilities(t);
        if (p.size() != out.voxels() * size_t(num_classes))
            fail_data("assemble_tiles: tile probability size mismatch");
        for (int k = 0; k < num_classes; ++k) {
            const double* src = p.data() + size_t(k) * out.voxels();
            double* dstk = acc.data() + size_t(k) * n;
            size_t si = 0;
            for (int z = 0; z < out.z; ++z)
                for (int y = 0; y < out.y; ++y) {
                    const size_t base =
                        region.index(t.out_origin.x, t.out_origin.y + y, t.out_origin.z + z);
                    for (int x = 0; x < out.x; ++x, ++si) dstk[base + size_t(x)] += src[si];
                }
        }
        size_t ci = 0;
        for (int z = 0; z < out.z; ++z)
            for (int y = 0; y < out.y; ++y) {
                uint32_t* row =
                    cover.data() + region.index(t.out_origin.x, t.out_origin.y + y, t.out_origin.z + z);
                for (int x = 0; x < out.x; ++x, ++ci) ++row[x];
            }
    }

    prediction res;
    res.probs = probability_map(d, sp, num_classes);
    res.labels = label_map(d, sp, num_classes);
    for (size_t i = 0; i < n; ++i) {
        if (region.raw()[i] && cover[i] > 0) {
            const double inv = 1.0 / double(cover[i]);
            int best = 0;
            double best_p = acc[i] * inv;
            res.probs.channel(0)[i] = float(best_p);
            for (int k = 1; k < num_classes; ++k) {
                const double pk = acc[size_t(k) * n + i] * inv;
                res.probs.channel(k)[i] = float(pk);
                if (pk > best_p) {
                    best_p = pk;
                    best = k;
                }
            }
            res.labels.raw()[i] = uint8_t(best);
        } else {
            res.probs.channel(0)[i] = 1.f;
            for (int k = 1; k < num_classes; ++k) res.probs.channel(k)[i] = 0.f;
            res.labels.raw()[i] = 0;
        }
    }
    return res;
}

// Network-backed tile evaluation on the (downsampled) working grid.
template <typename T>
prediction predict_tiles(const volume& vol, const candidate_region& region,
                         const net::unet3d<T>& network, const tiling_plan& plan) {
    if (!network.params().finite()) fail_data("predict: non-finite network parameters");
    const int k = network.spec().num_classes;
    return assemble_tiles(vol.dim(), vol.spacing(), region.mask, k, plan,
                          [&](const sample_window& w) {
                              net::fmap<T> in;
                              extract_input_window(vol, w, in);
                              net::fmap<T> logits = network.forward_eval(in);
                              std::vector<double> p(logits.v.size());
                              const size_t nvox = logits.plane();
                              std::vector<T> x(static_cast<size_t>(k)), sm(static_cast<size_t>(k));
                              for (size_t i = 0; i < nvox; ++i) {
                                  for (int c = 0; c < k; ++c) x[size_t(c)] = logits.slab(c)[i];
                                  softmax(x.data(), k, sm.data());
                                  for (int c = 0; c < k; ++c)
                                      p[size_t(c) * nvox + i] = double(sm[size_t(c)]);
                              }
                              return p;
                          });
}

} // namespace voxseg
