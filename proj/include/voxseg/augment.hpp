#pragma once

#include <atomic>
#include <cmath>
#include <vector>

#include "voxseg/morphology.hpp"
#include "voxseg/net/ops.hpp"
#include "voxseg/net/shape.hpp"
#include "voxseg/rng.hpp"

namespace voxseg {

// reflect-101 mirror fold: -1 -> 1, n -> n-2
inline int mirror_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = i % period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

inline float sample_trilinear_mirror(const volume& v, double x, double y, double z) {
    const dims3 d = v.dim();
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const double tx = x - fx, ty = y - fy, tz = z - fz;
    const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
                if (w == 0.0) continue;
                acc += w * v.at(mirror_index(x0 + dx, d.x), mirror_index(y0 + dy, d.y),
                                mirror_index(z0 + dz, d.z));
            }
    return float(acc);
}

inline uint8_t sample_nearest_mirror(const grid3<uint8_t>& m, double x, double y, double z) {
    const dims3 d = m.dim();
    return m.at(mirror_index(int(std::floor(x + 0.5)), d.x), mirror_index(int(std::floor(y + 0.5)), d.y),
                mirror_index(int(std::floor(z + 0.5)), d.z));
}

// Tracks construction so inference paths can be asserted augmentation-free.
inline std::atomic<uint64_t>& deformation_fields_constructed() {
    static std::atomic<uint64_t> n{0};
    return n;
}

// Smooth random displacement field: control grid with spacing g voxels whose
// per-component displacements are N(0, sigma^2), densified by cubic B-spline
// interpolation. A zero control grid is the identity mapping.
class deformation_field {
public:
    deformation_field(dims3 volume_dims, int grid_spacing)
        : dims_(volume_dims), g_(grid_spacing) {
        if (g_ < 2) fail_config("deformation grid spacing must be >= 2");
        check_dims(volume_dims);
        npx_ = (dims_.x - 1) / g_ + 4;
        npy_ = (dims_.y - 1) / g_ + 4;
        npz_ = (dims_.z - 1) / g_ + 4;
        for (auto& c : cp_) c.assign(size_t(npx_) * npy_ * npz_, 0.0);
        deformation_fields_constructed().fetch_add(1, std::memory_order_relaxed);
    }

    static deformation_field random(dims3 volume_dims, int grid_spacing, double sigma, rng& r) {
        if (sigma < 0) fail_config("deformation sigma must be >= 0");
        deformation_field f(volume_dims, grid_spacing);
        const size_t n = f.cp_[0].size();
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) f.cp_[size_t(c)][i] = r.normal(0.0, sigma);
        return f;
    }

    const dims3& volume_dims() const { return dims_; }
    int grid_spacing() const { return g_; }

    // control point (i,j,k) counted from -1 in each axis
    double& control(int c, int i, int j, int k) {
        return cp_[size_t(c)][size_t(i + 1) + size_t(npx_) * (size_t(j + 1) + size_t(npy_) * size_t(k + 1))];
    }

    void displacement(double x, double y, double z, double out[3]) const {
        double wx[4], wy[4], wz[4];
        int ix, iy, iz;
        basis(x, ix, wx);
        basis(y, iy, wy);
        basis(z, iz, wz);
        for (int c = 0; c < 3; ++c) out[c] = 0.0;
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 4; ++j) {
                const double wyz = wy[j] * wz[k];
                const size_t base =
                    size_t(ix + 1) + size_t(npx_) * (size_t(iy + j + 1) + size_t(npy_) * size_t(iz + k + 1));
                for (int i = 0; i < 4; ++i) {
                    const double w = wx[i] * wyz;
                    out[0] += w * cp_[0][base + size_t(i)];
                    out[1] += w * cp_[1][base + size_t(i)];
                    out[2] += w * cp_[2][base + size_t(i)];
                }
            }
    }

private:
    void basis(double p, int& i0, double w[4]) const {
        const double t = p / g_;
        const double f = std::floor(t);
        i0 = int(f) - 1; // leftmost of the 4 supporting control points
        const double u = t - f;
        const double u2 = u * u, u3 = u2 * u;
        w[0] = (1 - 3 * u + 3 * u2 - u3) / 6.0;
        w[1] = (4 - 6 * u2 + 3 * u3) / 6.0;
        w[2] = (1 + 3 * u + 3 * u2 - 3 * u3) / 6.0;
        w[3] = u3 / 6.0;
    }

    dims3 dims_;
    int g_;
    int npx_, npy_, npz_;
    std::vector<double> cp_[3];
};

// Pull-style warp: the output voxel at p takes the input value at p + d(p).
inline volume deform(const volume& v, const deformation_field& f) {
    if (!(f.volume_dims() == v.dim())) fail_config("deformation field does not cover the volume");
    volume out(v.dim(), v.spacing());
    const dims3 d = v.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double disp[3];
                f.displacement(x, y, z, disp);
                out.at(x, y, z) = sample_trilinear_mirror(v, x + disp[0], y + disp[1], z + disp[2]);
            }
    return out;
}

inline label_map deform(const label_map& m, const deformation_field& f) {
    if (!(f.volume_dims() == m.dim())) fail_config("deformation field does not cover the volume");
    label_map out(m.dim(), m.spacing(), m.num_classes);
    const dims3 d = m.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double disp[3];
                f.displacement(x, y, z, disp);
                out.at(x, y, z) = sample_nearest_mirror(m, x + disp[0], y + disp[1], z + disp[2]);
            }
    return out;
}

inline mask3 deform(const mask3& m, const deformation_field& f) {
    if (!(f.volume_dims() == m.dim())) fail_config("deformation field does not cover the volume");
    mask3 out(m.dim(), m.spacing());
    const dims3 d = m.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double disp[3];
                f.displacement(x, y, z, disp);
                out.at(x, y, z) = sample_nearest_mirror(m, x + disp[0], y + disp[1], z + disp[2]);
            }
    return out;
}

namespace detail {

// inverse rotation of the output coordinate about the volume center
struct rotator {
    int axis;
    double c, s;
    double cx, cy, cz;

    rotator(const dims3& d, double angle_deg, int ax) : axis(ax) {
        const double rad = -angle_deg * 3.14159265358979323846 / 180.0;
        c = std::cos(rad);
        s = std::sin(rad);
        cx = (d.x - 1) / 2.0;
        cy = (d.y - 1) / 2.0;
        cz = (d.z - 1) / 2.0;
    }

    void map(int x, int y, int z, double& sx, double& sy, double& sz) const {
        const double dx = x - cx, dy = y - cy, dz = z - cz;
        switch (axis) {
            case 0:
                sx = cx + dx;
                sy = cy + c * dy - s * dz;
                sz = cz + s * dy + c * dz;
                break;
            case 1:
                sx = cx + c * dx + s * dz;
                sy = cy + dy;
                sz = cz - s * dx + c * dz;
                break;
            default:
                sx = cx + c * dx - s * dy;
                sy = cy + s * dx + c * dy;
                sz = cz + dz;
                break;
        }
    }
};

} // namespace detail

inline volume rotate(const volume& v, double angle_deg, int axis) {
    detail::rotator rot(v.dim(), angle_deg, axis);
    volume out(v.dim(), v.spacing());
    const dims3 d = v.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double sx, sy, sz;
                rot.map(x, y, z, sx, sy, sz);
                out.at(x, y, z) = sample_trilinear_mirror(v, sx, sy, sz);
            }
    return out;
}

inline label_map rotate(const label_map& m, double angle_deg, int axis) {
    detail::rotator rot(m.dim(), angle_deg, axis);
    label_map out(m.dim(), m.spacing(), m.num_classes);
    const dims3 d = m.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double sx, sy, sz;
                rot.map(x, y, z, sx, sy, sz);
                out.at(x, y, z) = sample_nearest_mirror(m, sx, sy, sz);
            }
    return out;
}

inline mask3 rotate(const mask3& m, double angle_deg, int axis) {
    detail::rotator rot(m.dim(), angle_deg, axis);
    mask3 out(m.dim(), m.spacing());
    const dims3 d = m.dim();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double sx, sy, sz;
                rot.map(x, y, z, sx, sy, sz);
                out.at(x, y, z) = sample_nearest_mirror(m, sx, sy, sz);
            }
    return out;
}

template <typename V>
V rotate_checked(const V& v, double angle_deg, int axis, double bound_deg) {
    if (std::fabs(angle_deg) > bound_deg) fail_config("rotation angle outside the configured bound");
    return rotate(v, angle_deg, axis);
}

// Input/output window placement for one training sample or inference tile.
// The output window is centered in the input window; the input window may
// reach outside the volume, those voxels come from mirror padding.
struct sample_window {
    dims3 out_origin;
    dims3 out_dims;
    dims3 in_origin;
    dims3 in_dims;
    dims3 margin;
};

inline sample_window make_window(dims3 out_origin, const unet_spec& spec) {
    sample_window w;
    w.out_origin = out_origin;
    w.out_dims = output_tile(spec);
    w.margin = tile_margin(spec);
    w.in_dims = spec.input_tile;
    w.in_origin = {out_origin.x - w.margin.x, out_origin.y - w.margin.y, out_origin.z - w.margin.z};
    return w;
}

// Uniform over all output-window origins that contain at least one region
// voxel; exact enumeration, no rejection loop.
inline std::vector<dims3> qualifying_origins(const mask3& region, dims3 out_dims) {
    const dims3 d = region.dim();
    if (d.x < out_dims.x || d.y < out_dims.y || d.z < out_dims.z)
        fail_data("volume smaller than the output window");
    // summed-volume table, dims +1
    const int px = d.x + 1, py = d.y + 1, pz = d.z + 1;
    std::vector<uint32_t> s(size_t(px) * py * pz, 0);
    auto S = [&](int x, int y, int z) -> uint32_t& {
        return s[size_t(x) + size_t(px) * (size_t(y) + size_t(py) * size_t(z))];
    };
    for (int z = 1; z < pz; ++z)
        for (int y = 1; y < py; ++y) {
            uint32_t row = 0;
            for (int x = 1; x < px; ++x) {
                row += region.at(x - 1, y - 1, z - 1) ? 1u : 0u;
                S(x, y, z) = row + S(x, y, z - 1) + S(x, y - 1, z) - S(x, y - 1, z - 1);
            }
        }
    auto box_count = [&](int x0, int y0, int z0, int x1, int y1, int z1) {
        return S(x1, y1, z1) - S(x0, y1, z1) - S(x1, y0, z1) - S(x1, y1, z0) + S(x0, y0, z1) +
               S(x0, y1, z0) + S(x1, y0, z0) - S(x0, y0, z0);
    };
    std::vector<dims3> origins;
    for (int z = 0; z + out_dims.z <= d.z; ++z)
        for (int y = 0; y + out_dims.y <= d.y; ++y)
            for (int x = 0; x + out_dims.x <= d.x; ++x)
                if (box_count(x, y, z, x + out_dims.x, y + out_dims.y, z + out_dims.z) > 0)
                    origins.push_back({x, y, z});
    return origins;
}

inline sample_window sample_window_from_region(const mask3& region, const unet_spec& spec, rng& r) {
    auto origins = qualifying_origins(region, output_tile(spec));
    if (origins.empty()) fail_data("sample_window: empty candidate region");
    return make_window(origins[r.uniform_index(origins.size())], spec);
}

// Extract the input window with mirror padding for out-of-volume reads.
template <typename T>
void extract_input_window(const volume& v, const sample_window& w, net::fmap<T>& out) {
    out.resize(1, w.in_dims);
    T* dst = out.slab(0);
    const dims3 d = v.dim();
    size_t o = 0;
    for (int z = 0; z < w.in_dims.z; ++z) {
        const int sz = mirror_index(w.in_origin.z + z, d.z);
        for (int y = 0; y < w.in_dims.y; ++y) {
            const int sy = mirror_index(w.in_origin.y + y, d.y);
            for (int x = 0; x < w.in_dims.x; ++x, ++o)
                dst[o] = T(v.at(mirror_index(w.in_origin.x + x, d.x), sy, sz));
        }
    }
}

} // namespace voxseg
