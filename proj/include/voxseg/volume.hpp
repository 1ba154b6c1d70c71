#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voxseg/common.hpp"

namespace voxseg {

struct dims3 {
    int x = 0, y = 0, z = 0;

    size_t voxels() const { return size_t(x) * size_t(y) * size_t(z); }
    bool operator==(const dims3&) const = default;
    int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
};

struct spacing3 {
    double x = 1.0, y = 1.0, z = 1.0;
    bool operator==(const spacing3&) const = default;
};

inline void check_dims(const dims3& d) {
    if (d.x <= 0 || d.y <= 0 || d.z <= 0) fail_data("non-positive volume dims");
}

inline void check_spacing(const spacing3& s) {
    if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0) ||
        !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.z))
        fail_data("voxel spacing must be finite and > 0");
}

// Dense 3D grid, x fastest then y then z: index = x + nx*(y + ny*z).
template <typename T>
class grid3 {
public:
    grid3() = default;
    grid3(dims3 d, spacing3 s, T fill = T{}) : dim_(d), sp_(s) {
        check_dims(d);
        check_spacing(s);
        v_.assign(d.voxels(), fill);
    }

    const dims3& dim() const { return dim_; }
    const spacing3& spacing() const { return sp_; }
    void set_spacing(const spacing3& s) {
        check_spacing(s);
        sp_ = s;
    }

    size_t index(int x, int y, int z) const {
        return size_t(x) + size_t(dim_.x) * (size_t(y) + size_t(dim_.y) * size_t(z));
    }
    T& at(int x, int y, int z) { return v_[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return v_[index(x, y, z)]; }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    size_t size() const { return v_.size(); }
    std::vector<T>& raw() { return v_; }
    const std::vector<T>& raw() const { return v_; }

    bool operator==(const grid3&) const = default;

private:
    dims3 dim_;
    spacing3 sp_;
    std::vector<T> v_;
};

struct volume : grid3<float> {
    volume() = default;
    volume(dims3 d, spacing3 s, float fill = 0.f) : grid3<float>(d, s, fill) {}
};

struct label_map : grid3<uint8_t> {
    int num_classes = 2;

    label_map() = default;
    label_map(dims3 d, spacing3 s, int classes, uint8_t fill = 0)
        : grid3<uint8_t>(d, s, fill), num_classes(classes) {
        if (classes < 2) fail_data("label map needs at least 2 classes");
    }
};

// K contiguous scalar grids, channel-major.
class probability_map {
public:
    probability_map() = default;
    probability_map(dims3 d, spacing3 s, int classes) : dim_(d), sp_(s), num_classes_(classes) {
        check_dims(d);
        check_spacing(s);
        if (classes < 2) fail_data("probability map needs at least 2 classes");
        v_.assign(d.voxels() * size_t(classes), 0.f);
    }

    const dims3& dim() const { return dim_; }
    const spacing3& spacing() const { return sp_; }
    void set_spacing(const spacing3& s) {
        check_spacing(s);
        sp_ = s;
    }
    int num_classes() const { return num_classes_; }

    float* channel(int k) { return v_.data() + size_t(k) * dim_.voxels(); }
    const float* channel(int k) const { return v_.data() + size_t(k) * dim_.voxels(); }
    float& at(int k, size_t voxel) { return v_[size_t(k) * dim_.voxels() + voxel]; }
    float at(int k, size_t voxel) const { return v_[size_t(k) * dim_.voxels() + voxel]; }

    std::vector<float>& raw() { return v_; }
    const std::vector<float>& raw() const { return v_; }

private:
    dims3 dim_;
    spacing3 sp_;
    int num_classes_ = 0;
    std::vector<float> v_;
};

inline void check_finite(const volume& v) {
    for (float f : v.raw())
        if (!std::isfinite(f)) fail_data("volume contains non-finite values");
}

inline void check_labels(const label_map& m) {
    for (uint8_t l : m.raw())
        if (int(l) >= m.num_classes) fail_data("label index out of range");
}

inline dims3 downsampled_dims(const dims3& d, int factor) {
    if (factor <= 0) fail_data("downsample factor must be positive");
    if (d.x < factor || d.y < factor || d.z < factor)
        fail_data("volume smaller than downsample factor");
    return {d.x / factor, d.y / factor, d.z / factor};
}

// Mean over each factor^3 block; trailing voxels that do not fill a block are dropped.
inline volume downsample(const volume& v, int factor) {
    dims3 od = downsampled_dims(v.dim(), factor);
    spacing3 os{v.spacing().x * factor, v.spacing().y * factor, v.spacing().z * factor};
    volume out(od, os);
    const double inv = 1.0 / (double(factor) * factor * factor);
    for (int z = 0; z < od.z; ++z)
        for (int y = 0; y < od.y; ++y)
            for (int x = 0; x < od.x; ++x) {
                double acc = 0.0;
                for (int dz = 0; dz < factor; ++dz)
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            acc += v.at(x * factor + dx, y * factor + dy, z * factor + dz);
                out.at(x, y, z) = float(acc * inv);
            }
    return out;
}

// Majority label per block, ties broken by the lowest class index.
inline label_map downsample(const label_map& m, int factor) {
    dims3 od = downsampled_dims(m.dim(), factor);
    spacing3 os{m.spacing().x * factor, m.spacing().y * factor, m.spacing().z * factor};
    label_map out(od, os, m.num_classes);
    std::vector<int> count(size_t(m.num_classes));
    for (int z = 0; z < od.z; ++z)
        for (int y = 0; y < od.y; ++y)
            for (int x = 0; x < od.x; ++x) {
                std::fill(count.begin(), count.end(), 0);
                for (int dz = 0; dz < factor; ++dz)
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            ++count[m.at(x * factor + dx, y * factor + dy, z * factor + dz)];
                int best = 0;
                for (int k = 1; k < m.num_classes; ++k)
                    if (count[k] > count[best]) best = k;
                out.at(x, y, z) = uint8_t(best);
            }
    return out;
}

// Nearest source voxel under the voxel-center physical mapping. With target
// dims td and source dims sd the center of target voxel i lands in source
// voxel floor((2i+1)*sd / (2*td)); integer arithmetic keeps this exact.
inline int nearest_source_index(int i, int sd, int td) {
    return int((int64_t(2 * i + 1) * sd) / (2 * int64_t(td)));
}

inline void check_upsample_target(const dims3& src, const dims3& target) {
    check_dims(target);
    if (target.x < src.x || target.y < src.y || target.z < src.z)
        fail_data("upsample target smaller than source");
}

inline spacing3 rescaled_spacing(const spacing3& s, const dims3& src, const dims3& target) {
    return {s.x * double(src.x) / target.x, s.y * double(src.y) / target.y,
            s.z * double(src.z) / target.z};
}

inline label_map upsample_nearest(const label_map& m, const dims3& target) {
    check_upsample_target(m.dim(), target);
    label_map out(target, rescaled_spacing(m.spacing(), m.dim(), target), m.num_classes);
    for (int z = 0; z < target.z; ++z) {
        int sz = nearest_source_index(z, m.dim().z, target.z);
        for (int y = 0; y < target.y; ++y) {
            int sy = nearest_source_index(y, m.dim().y, target.y);
            for (int x = 0; x < target.x; ++x)
                out.at(x, y, z) = m.at(nearest_source_index(x, m.dim().x, target.x), sy, sz);
        }
    }
    return out;
}

inline probability_map upsample_nearest(const probability_map& p, const dims3& target) {
    check_upsample_target(p.dim(), target);
    probability_map out(target, rescaled_spacing(p.spacing(), p.dim(), target), p.num_classes());
    for (int k = 0; k < p.num_classes(); ++k) {
        const float* src = p.channel(k);
        float* dst = out.channel(k);
        size_t o = 0;
        for (int z = 0; z < target.z; ++z) {
            size_t szb = size_t(nearest_source_index(z, p.dim().z, target.z)) * p.dim().y;
            for (int y = 0; y < target.y; ++y) {
                size_t syb = (szb + nearest_source_index(y, p.dim().y, target.y)) * p.dim().x;
                for (int x = 0; x < target.x; ++x, ++o)
                    dst[o] = src[syb + nearest_source_index(x, p.dim().x, target.x)];
            }
        }
    }
    return out;
}

} // namespace voxseg
