#pragma once

#include <string>
#include <vector>

#include "voxseg/morphology.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/threading.hpp"

namespace voxseg {

// Synthetic abdomen stand-in: an ellipsoidal body of soft-tissue intensity in
// air, holding a large organ, a medium organ and a thin curved tube. Classes:
// 0 background (air and plain body tissue), 1 large organ, 2 medium organ,
// 3 tube. Geometry scales with the volume dims and jitters per case; the same
// seed always reproduces the same dataset bit for bit.
struct phantom_spec {
    dims3 dims{96, 96, 96};
    spacing3 spacing{1.0, 1.0, 1.0};
    uint64_t seed = 1;
    int num_classes = 4;
    double noise_sigma = 20.0;
    double air_intensity = -1000.0;
    double body_intensity = 0.0;
    double organ_offsets[3] = {70.0, 140.0, 220.0}; // large organ, medium organ, tube
    double body_semiaxes[3] = {45.0, 42.0, 45.0};   // at the reference 96^3 grid
    double placement_jitter = 2.0;
    double semiaxis_jitter = 1.0;
    double tube_radius = 2.2;
};

struct seg_case {
    std::string id;
    volume vol;
    label_map labels;
    mask3 body; // generator ground truth for the body ellipsoid
};

inline void check_phantom_spec(const phantom_spec& spec) {
    check_dims(spec.dims);
    check_spacing(spec.spacing);
    if (spec.num_classes != 4) fail_config("phantom generator produces exactly 4 classes");
    if (spec.noise_sigma < 0) fail_config("phantom noise sigma must be >= 0");
    if (spec.dims.x < 32 || spec.dims.y < 32 || spec.dims.z < 32)
        fail_config("phantom structures cannot fit: dims must be at least 32^3");
    if (spec.tube_radius <= 0) fail_config("phantom tube radius must be positive");
}

namespace detail {

struct ellipsoid {
    double cx, cy, cz, rx, ry, rz;
    bool contains(double x, double y, double z, double margin = 0.0) const {
        const double dx = (x - cx) / (rx - margin), dy = (y - cy) / (ry - margin),
                     dz = (z - cz) / (rz - margin);
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

} // namespace detail

inline seg_case generate_phantom_case(const phantom_spec& spec, int case_index) {
    check_phantom_spec(spec);
    rng r = stream_rng(spec.seed, uint64_t(case_index) + 1);
    const dims3 d = spec.dims;
    const double sx = d.x / 96.0, sy = d.y / 96.0, sz = d.z / 96.0;
    const double sm = (sx + sy + sz) / 3.0;
    auto jit = [&](double j) { return r.uniform(-j, j); };

    detail::ellipsoid body{d.x / 2.0 + jit(spec.placement_jitter) * sx,
                           d.y / 2.0 + jit(spec.placement_jitter) * sy,
                           d.z / 2.0 + jit(spec.placement_jitter) * sz,
                           (spec.body_semiaxes[0] + jit(spec.semiaxis_jitter)) * sx,
                           (spec.body_semiaxes[1] + jit(spec.semiaxis_jitter)) * sy,
                           (spec.body_semiaxes[2] + jit(spec.semiaxis_jitter)) * sz};
    detail::ellipsoid organ1{body.cx + (-10.0 + jit(2.0)) * sx,
                             body.cy + (-7.0 + jit(2.0)) * sy,
                             body.cz + (5.0 + jit(2.0)) * sz,
                             (20.0 + jit(1.5)) * sx,
                             (16.0 + jit(1.5)) * sy,
                             (22.0 + jit(1.5)) * sz};
    detail::ellipsoid organ2{body.cx + (15.0 + jit(2.0)) * sx,
                             body.cy + (11.0 + jit(2.0)) * sy,
                             body.cz + (-11.0 + jit(2.0)) * sz,
                             (9.0 + jit(1.0)) * sx,
                             (8.0 + jit(1.0)) * sy,
                             (10.0 + jit(1.0)) * sz};
    const double tube_phase = r.uniform(0.0, 3.14159);
    const double tube_wobble = 9.0 + jit(2.0);
    const double tube_radius = (spec.tube_radius + jit(0.2)) * sm;

    seg_case c;
    c.id = "case" + std::to_string(case_index);
    c.vol = volume(d, spec.spacing);
    c.labels = label_map(d, spec.spacing, spec.num_classes);
    c.body = mask3(d, spec.spacing);

    // tube center line, sampled densely and rasterized as a capsule
    std::vector<double> tube_pts;
    const int steps = int(80 * sm) + 40;
    for (int i = 0; i <= steps; ++i) {
        const double t = double(i) / steps;
        tube_pts.push_back(body.cx + (-26.0 + 52.0 * t) * sx);
        tube_pts.push_back(body.cy + (tube_wobble * std::sin(3.14159 * t + tube_phase) + 14.0) * sy);
        tube_pts.push_back(body.cz + (-13.0 + 26.0 * t) * sz);
    }

    const double r2 = tube_radius * tube_radius;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                uint8_t label = 0;
                const bool in_body = body.contains(x, y, z);
                if (in_body) {
                    if (organ1.contains(x, y, z)) label = 1;
                    if (organ2.contains(x, y, z)) label = 2;
                }
                c.body.at(x, y, z) = in_body;
                c.labels.at(x, y, z) = label;
            }
    // tube last: highest painting priority
    size_t tube_voxels = 0;
    for (size_t i = 0; i + 2 < tube_pts.size(); i += 3) {
        const double px = tube_pts[i], py = tube_pts[i + 1], pz = tube_pts[i + 2];
        const int x0 = std::max(0, int(px - tube_radius - 1)), x1 = std::min(d.x - 1, int(px + tube_radius + 1));
        const int y0 = std::max(0, int(py - tube_radius - 1)), y1 = std::min(d.y - 1, int(py + tube_radius + 1));
        const int z0 = std::max(0, int(pz - tube_radius - 1)), z1 = std::min(d.z - 1, int(pz + tube_radius + 1));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - px, dy = y - py, dz = z - pz;
                    if (dx * dx + dy * dy + dz * dz <= r2 && c.labels.at(x, y, z) != 3) {
                        if (!c.body.at(x, y, z))
                            fail_config("phantom structures cannot fit: tube leaves the body");
                        c.labels.at(x, y, z) = 3;
                        ++tube_voxels;
                    }
                }
    }
    if (tube_voxels == 0) fail_config("phantom structures cannot fit: tube rasterized to nothing");

    // every structure voxel must lie inside the body
    size_t counts[4] = {0, 0, 0, 0};
    for (size_t i = 0; i < c.labels.size(); ++i) {
        const uint8_t l = c.labels.raw()[i];
        ++counts[l];
        if (l >= 1 && !c.body.raw()[i]) fail_config("phantom structures cannot fit inside the body");
    }
    for (int k = 0; k < 4; ++k)
        if (counts[k] == 0) fail_config("phantom class " + std::to_string(k) + " is empty");

    // intensities: air / tissue plus per-class offsets, then noise
    for (size_t i = 0; i < c.vol.size(); ++i) {
        double v = c.body.raw()[i] ? spec.body_intensity : spec.air_intensity;
        const uint8_t l = c.labels.raw()[i];
        if (l >= 1) v += spec.organ_offsets[l - 1];
        c.vol.raw()[i] = float(v);
    }
    if (spec.noise_sigma > 0)
        for (auto& v : c.vol.raw()) v = float(v + r.normal(0.0, spec.noise_sigma));
    return c;
}

inline std::vector<seg_case> generate_phantoms(const phantom_spec& spec, int n_cases,
                                               int first_index = 0) {
    if (n_cases < 1) fail_config("phantom generation needs n_cases >= 1");
    std::vector<seg_case> cases(static_cast<size_t>(n_cases));
    parallel_for(size_t(n_cases), [&](size_t i) {
        cases[i] = generate_phantom_case(spec, first_index + int(i));
    });
    return cases;
}

} // namespace voxseg
