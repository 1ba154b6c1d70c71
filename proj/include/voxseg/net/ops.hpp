#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxseg/threading.hpp"
#include "voxseg/volume.hpp"

namespace voxseg::net {

// Feature map: channel-major, spatial layout identical to grid3.
template <typename T>
struct fmap {
    int channels = 0;
    dims3 d;
    std::vector<T> v;

    fmap() = default;
    fmap(int c, dims3 dm) { resize(c, dm); }

    void resize(int c, dims3 dm) {
        channels = c;
        d = dm;
        v.assign(size_t(c) * dm.voxels(), T(0));
    }
    size_t plane() const { return d.voxels(); }
    size_t index(int x, int y, int z) const {
        return size_t(x) + size_t(d.x) * (size_t(y) + size_t(d.y) * size_t(z));
    }
    T* slab(int c) { return v.data() + size_t(c) * plane(); }
    const T* slab(int c) const { return v.data() + size_t(c) * plane(); }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

inline dims3 conv3_out_dims(const dims3& in) { return {in.x - 2, in.y - 2, in.z - 2}; }

// ---- 3x3x3 valid convolution ------------------------------------------------
// Weights: [cout][cin][kz][ky][kx], kx fastest. One worker per output channel;
// per-element accumulation order is fixed, so results do not depend on the
// thread count.
//
// The output rows of a valid conv are too short to keep SIMD units busy, so
// each tap runs as one long axpy over the whole input-stride slab into a
// padded accumulator; the invalid tail columns accumulate garbage that the
// final extraction step never reads. The gradient kernels use the mirrored
// trick with the upstream gradient scattered into a zero-padded input-stride
// slab, where the zeros mask every invalid position.

template <typename T>
void scatter_to_input_strides(const fmap<T>& dout, fmap<T>& dpad) {
    const dims3 od = dout.d;
    const dims3 id{od.x + 2, od.y + 2, od.z + 2};
    dpad.resize(dout.channels, id);
    parallel_for(size_t(dout.channels), [&](size_t co) {
        const T* g = dout.slab(int(co));
        T* p = dpad.slab(int(co));
        size_t gi = 0;
        for (int z = 0; z < od.z; ++z)
            for (int y = 0; y < od.y; ++y) {
                T* row = p + dpad.index(0, y, z);
                for (int x = 0; x < od.x; ++x, ++gi) row[x] = g[gi];
            }
    });
}

template <typename T>
void conv3_forward(const fmap<T>& in, const T* w, const T* b, int cout, fmap<T>& out) {
    const dims3 id = in.d, od = conv3_out_dims(id);
    const size_t n = in.plane();
    out.resize(cout, od);
    parallel_for(size_t(out.channels), [&](size_t co) {
        std::vector<T> obuf(n, T(0));
        const T* wks = w + size_t(co) * in.channels * 27;
        for (int ci = 0; ci < in.channels; ++ci) {
            const T* islab = in.slab(ci);
            const T* wk = wks + size_t(ci) * 27;
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = wk[(kz * 3 + ky) * 3 + kx];
                        const size_t off = in.index(kx, ky, kz);
                        const T* src = islab + off;
                        T* dst = obuf.data();
                        const size_t m = n - off;
                        for (size_t i = 0; i < m; ++i) dst[i] += wv * src[i];
                    }
        }
        T* oslab = out.slab(int(co));
        const T bv = b[co];
        size_t oi = 0;
        for (int z = 0; z < od.z; ++z)
            for (int y = 0; y < od.y; ++y) {
                const T* row = obuf.data() + in.index(0, y, z);
                for (int x = 0; x < od.x; ++x, ++oi) oslab[oi] = row[x] + bv;
            }
    });
}

template <typename T>
void conv3_backward_input(const fmap<T>& dout, const T* w, int cin, fmap<T>& din) {
    const dims3 od = dout.d;
    const dims3 id{od.x + 2, od.y + 2, od.z + 2};
    const size_t n = size_t(id.x) * size_t(id.y) * size_t(id.z);
    fmap<T> dpad;
    scatter_to_input_strides(dout, dpad);
    din.resize(cin, id);
    parallel_for(size_t(cin), [&](size_t ci) {
        T* dslab = din.slab(int(ci));
        for (int co = 0; co < dout.channels; ++co) {
            const T* pslab = dpad.slab(co);
            const T* wk = w + (size_t(co) * cin + ci) * 27;
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = wk[(kz * 3 + ky) * 3 + kx];
                        const size_t off = din.index(kx, ky, kz);
                        T* dst = dslab + off;
                        const size_t m = n - off;
                        for (size_t i = 0; i < m; ++i) dst[i] += wv * pslab[i];
                    }
        }
    });
}

// dw/db accumulate into the given buffers.
template <typename T>
void conv3_backward_params(const fmap<T>& in, const fmap<T>& dout, T* dw, T* db) {
    const size_t n = in.plane();
    fmap<T> dpad;
    scatter_to_input_strides(dout, dpad);
    parallel_for(size_t(dout.channels), [&](size_t co) {
        const T* gslab = dout.slab(int(co));
        T bacc = T(0);
        const size_t gn = dout.plane();
#pragma omp simd reduction(+ : bacc)
        for (size_t i = 0; i < gn; ++i) bacc += gslab[i];
        db[co] += bacc;
        const T* pslab = dpad.slab(int(co));
        T* dwk = dw + size_t(co) * in.channels * 27;
        for (int ci = 0; ci < in.channels; ++ci) {
            const T* islab = in.slab(ci);
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const size_t off = in.index(kx, ky, kz);
                        const T* src = islab + off;
                        const size_t m = n - off;
                        T acc = T(0);
#pragma omp simd reduction(+ : acc)
                        for (size_t i = 0; i < m; ++i) acc += pslab[i] * src[i];
                        dwk[size_t(ci) * 27 + (kz * 3 + ky) * 3 + kx] += acc;
                    }
        }
    });
}

// ---- 1x1x1 convolution --------------------------------------------------------

template <typename T>
void conv1_forward(const fmap<T>& in, const T* w, const T* b, int cout, fmap<T>& out) {
    out.resize(cout, in.d);
    parallel_for(size_t(out.channels), [&](size_t co) {
        T* oslab = out.slab(int(co));
        std::fill(oslab, oslab + out.plane(), b[co]);
        for (int ci = 0; ci < in.channels; ++ci) {
            const T wv = w[co * size_t(in.channels) + ci];
            const T* islab = in.slab(ci);
            for (size_t i = 0; i < in.plane(); ++i) oslab[i] += wv * islab[i];
        }
    });
}

template <typename T>
void conv1_backward_input(const fmap<T>& dout, const T* w, int cin, fmap<T>& din) {
    din.resize(cin, dout.d);
    parallel_for(size_t(cin), [&](size_t ci) {
        T* dslab = din.slab(int(ci));
        for (int co = 0; co < dout.channels; ++co) {
            const T wv = w[size_t(co) * cin + ci];
            const T* gslab = dout.slab(co);
            for (size_t i = 0; i < dout.plane(); ++i) dslab[i] += wv * gslab[i];
        }
    });
}

template <typename T>
void conv1_backward_params(const fmap<T>& in, const fmap<T>& dout, T* dw, T* db) {
    parallel_for(size_t(dout.channels), [&](size_t co) {
        const T* gslab = dout.slab(int(co));
        T bacc = T(0);
        const size_t gn = dout.plane();
#pragma omp simd reduction(+ : bacc)
        for (size_t i = 0; i < gn; ++i) bacc += gslab[i];
        db[co] += bacc;
        for (int ci = 0; ci < in.channels; ++ci) {
            const T* islab = in.slab(ci);
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (size_t i = 0; i < gn; ++i) acc += islab[i] * gslab[i];
            dw[co * size_t(in.channels) + ci] += acc;
        }
    });
}

// ---- 2x2x2 up-convolution, stride 2 ------------------------------------------
// Stride equals kernel size, so each output voxel receives exactly one
// contribution per input channel. Weights: [cout][cin][kz][ky][kx].

template <typename T>
void upconv2_forward(const fmap<T>& in, const T* w, const T* b, int cout, fmap<T>& out) {
    const dims3 id = in.d;
    const dims3 od{id.x * 2, id.y * 2, id.z * 2};
    out.resize(cout, od);
    parallel_for(size_t(out.channels), [&](size_t co) {
        T* oslab = out.slab(int(co));
        std::fill(oslab, oslab + out.plane(), b[co]);
        const T* wks = w + size_t(co) * in.channels * 8;
        for (int ci = 0; ci < in.channels; ++ci) {
            const T* islab = in.slab(ci);
            const T* wk = wks + size_t(ci) * 8;
            for (int z = 0; z < id.z; ++z)
                for (int y = 0; y < id.y; ++y)
                    for (int x = 0; x < id.x; ++x) {
                        const T iv = islab[in.index(x, y, z)];
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky) {
                                T* orow = oslab + out.index(2 * x, 2 * y + ky, 2 * z + kz);
                                const T* wr = wk + (kz * 2 + ky) * 2;
                                orow[0] += wr[0] * iv;
                                orow[1] += wr[1] * iv;
                            }
                    }
        }
    });
}

template <typename T>
void upconv2_backward_input(const fmap<T>& dout, const T* w, int cin, fmap<T>& din) {
    const dims3 id{dout.d.x / 2, dout.d.y / 2, dout.d.z / 2};
    din.resize(cin, id);
    parallel_for(size_t(cin), [&](size_t ci) {
        T* dslab = din.slab(int(ci));
        for (int co = 0; co < dout.channels; ++co) {
            const T* gslab = dout.slab(co);
            const T* wk = w + (size_t(co) * cin + ci) * 8;
            for (int z = 0; z < id.z; ++z)
                for (int y = 0; y < id.y; ++y)
                    for (int x = 0; x < id.x; ++x) {
                        T acc = T(0);
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky) {
                                const T* grow = gslab + dout.index(2 * x, 2 * y + ky, 2 * z + kz);
                                const T* wr = wk + (kz * 2 + ky) * 2;
                                acc += wr[0] * grow[0] + wr[1] * grow[1];
                            }
                        dslab[din.index(x, y, z)] += acc;
                    }
        }
    });
}

template <typename T>
void upconv2_backward_params(const fmap<T>& in, const fmap<T>& dout, T* dw, T* db) {
    const dims3 id = in.d;
    parallel_for(size_t(dout.channels), [&](size_t co) {
        const T* gslab = dout.slab(int(co));
        T bacc = T(0);
        const size_t gn = dout.plane();
#pragma omp simd reduction(+ : bacc)
        for (size_t i = 0; i < gn; ++i) bacc += gslab[i];
        db[co] += bacc;
        for (int ci = 0; ci < in.channels; ++ci) {
            const T* islab = in.slab(ci);
            T* dwk = dw + (size_t(co) * in.channels + ci) * 8;
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        T acc = T(0);
                        for (int z = 0; z < id.z; ++z)
                            for (int y = 0; y < id.y; ++y) {
                                const T* grow = gslab + dout.index(kx, 2 * y + ky, 2 * z + kz);
                                const T* irow = islab + in.index(0, y, z);
                                for (int x = 0; x < id.x; ++x) acc += irow[x] * grow[2 * x];
                            }
                        dwk[(kz * 2 + ky) * 2 + kx] += acc;
                    }
        }
    });
}

// ---- 2x2x2 max pooling, stride 2 ----------------------------------------------

template <typename T>
void maxpool2_forward(const fmap<T>& in, fmap<T>& out, std::vector<int64_t>& argmax) {
    const dims3 id = in.d;
    const dims3 od{id.x / 2, id.y / 2, id.z / 2};
    out.resize(in.channels, od);
    argmax.assign(out.v.size(), 0);
    parallel_for(size_t(in.channels), [&](size_t c) {
        const T* islab = in.slab(int(c));
        T* oslab = out.slab(int(c));
        int64_t* am = argmax.data() + c * out.plane();
        size_t o = 0;
        for (int z = 0; z < od.z; ++z)
            for (int y = 0; y < od.y; ++y)
                for (int x = 0; x < od.x; ++x, ++o) {
                    T best{};
                    int64_t besti = -1;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                int64_t i = int64_t(in.index(2 * x + dx, 2 * y + dy, 2 * z + dz));
                                T v = islab[i];
                                if (besti < 0 || v > best) {
                                    best = v;
                                    besti = i;
                                }
                            }
                    oslab[o] = best;
                    am[o] = besti;
                }
    });
}

template <typename T>
void maxpool2_backward(const fmap<T>& dout, const std::vector<int64_t>& argmax, fmap<T>& din) {
    din.resize(dout.channels, {dout.d.x * 2, dout.d.y * 2, dout.d.z * 2});
    parallel_for(size_t(dout.channels), [&](size_t c) {
        const T* gslab = dout.slab(int(c));
        T* dslab = din.slab(int(c));
        const int64_t* am = argmax.data() + c * dout.plane();
        for (size_t o = 0; o < dout.plane(); ++o) dslab[am[o]] += gslab[o];
    });
}

// ---- ReLU ----------------------------------------------------------------------

template <typename T>
void relu_forward(const fmap<T>& in, fmap<T>& out) {
    out.resize(in.channels, in.d);
    parallel_for(size_t(in.channels), [&](size_t c) {
        const T* i = in.slab(int(c));
        T* o = out.slab(int(c));
        for (size_t k = 0; k < in.plane(); ++k) o[k] = i[k] > T(0) ? i[k] : T(0);
    });
}

template <typename T>
void relu_backward(const fmap<T>& pre, const fmap<T>& dout, fmap<T>& din) {
    din.resize(pre.channels, pre.d);
    parallel_for(size_t(pre.channels), [&](size_t c) {
        const T* x = pre.slab(int(c));
        const T* g = dout.slab(int(c));
        T* d = din.slab(int(c));
        for (size_t k = 0; k < pre.plane(); ++k) d[k] = x[k] > T(0) ? g[k] : T(0);
    });
}

// ---- batch normalization --------------------------------------------------------
// Statistics are per-channel over the spatial voxels of the single tile
// (batch size 1). Train mode caches xhat and the inverse stddev for backward
// and updates running stats with biased variance.

inline constexpr double bn_epsilon = 1e-5;

template <typename T>
struct bn_cache {
    std::vector<T> xhat;    // normalized activations, fmap layout
    std::vector<T> inv_std; // per channel
};

template <typename T>
void batchnorm_forward_train(const fmap<T>& in, const T* gamma, const T* beta, T* running_mean,
                             T* running_var, T momentum, fmap<T>& out, bn_cache<T>& cache) {
    out.resize(in.channels, in.d);
    cache.xhat.assign(in.v.size(), T(0));
    cache.inv_std.assign(size_t(in.channels), T(0));
    const size_t n = in.plane();
    parallel_for(size_t(in.channels), [&](size_t c) {
        const T* x = in.slab(int(c));
        T* y = out.slab(int(c));
        T* xh = cache.xhat.data() + c * n;
        T mean = T(0);
#pragma omp simd reduction(+ : mean)
        for (size_t k = 0; k < n; ++k) mean += x[k];
        mean /= T(n);
        T var = T(0);
#pragma omp simd reduction(+ : var)
        for (size_t k = 0; k < n; ++k) {
            T d = x[k] - mean;
            var += d * d;
        }
        var /= T(n);
        const T inv = T(1) / std::sqrt(var + T(bn_epsilon));
        cache.inv_std[c] = inv;
        for (size_t k = 0; k < n; ++k) {
            xh[k] = (x[k] - mean) * inv;
            y[k] = gamma[c] * xh[k] + beta[c];
        }
        running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * mean;
        running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
    });
}

template <typename T>
void batchnorm_forward_eval(const fmap<T>& in, const T* gamma, const T* beta, const T* running_mean,
                            const T* running_var, fmap<T>& out) {
    out.resize(in.channels, in.d);
    parallel_for(size_t(in.channels), [&](size_t c) {
        const T scale = gamma[c] / std::sqrt(running_var[c] + T(bn_epsilon));
        const T shift = beta[c] - scale * running_mean[c];
        const T* x = in.slab(int(c));
        T* y = out.slab(int(c));
        for (size_t k = 0; k < in.plane(); ++k) y[k] = scale * x[k] + shift;
    });
}

template <typename T>
void batchnorm_backward(const fmap<T>& dout, const bn_cache<T>& cache, const T* gamma, T* dgamma,
                        T* dbeta, fmap<T>& din) {
    din.resize(dout.channels, dout.d);
    const size_t n = dout.plane();
    parallel_for(size_t(dout.channels), [&](size_t c) {
        const T* g = dout.slab(int(c));
        const T* xh = cache.xhat.data() + c * n;
        T* d = din.slab(int(c));
        T sum_g = T(0), sum_gx = T(0);
#pragma omp simd reduction(+ : sum_g, sum_gx)
        for (size_t k = 0; k < n; ++k) {
            sum_g += g[k];
            sum_gx += g[k] * xh[k];
        }
        dgamma[c] += sum_gx;
        dbeta[c] += sum_g;
        const T mg = sum_g / T(n);
        const T mgx = sum_gx / T(n);
        const T s = gamma[c] * cache.inv_std[c];
        for (size_t k = 0; k < n; ++k) d[k] = s * (g[k] - mg - xh[k] * mgx);
    });
}

// ---- center crop + channel concatenation ----------------------------------------
// Skip features are cropped to the synthesis dims and placed before the
// up-sampled features in the channel order.

template <typename T>
void crop_concat_forward(const fmap<T>& skip, const fmap<T>& up, fmap<T>& out) {
    const dims3 sd = skip.d, ud = up.d;
    const int ox = (sd.x - ud.x) / 2, oy = (sd.y - ud.y) / 2, oz = (sd.z - ud.z) / 2;
    out.resize(skip.channels + up.channels, ud);
    parallel_for(size_t(skip.channels + up.channels), [&](size_t c) {
        T* o = out.slab(int(c));
        if (int(c) < skip.channels) {
            const T* s = skip.slab(int(c));
            size_t k = 0;
            for (int z = 0; z < ud.z; ++z)
                for (int y = 0; y < ud.y; ++y) {
                    const T* row = s + skip.index(ox, y + oy, z + oz);
                    for (int x = 0; x < ud.x; ++x, ++k) o[k] = row[x];
                }
        } else {
            const T* u = up.slab(int(c) - skip.channels);
            std::copy(u, u + up.plane(), o);
        }
    });
}

template <typename T>
void crop_concat_backward(const fmap<T>& dout, int skip_channels, dims3 skip_dims, fmap<T>& dskip,
                          fmap<T>& dup) {
    const dims3 ud = dout.d;
    const int ox = (skip_dims.x - ud.x) / 2, oy = (skip_dims.y - ud.y) / 2,
              oz = (skip_dims.z - ud.z) / 2;
    dskip.resize(skip_channels, skip_dims);
    dskip.zero();
    dup.resize(dout.channels - skip_channels, ud);
    parallel_for(size_t(dout.channels), [&](size_t c) {
        const T* g = dout.slab(int(c));
        if (int(c) < skip_channels) {
            T* d = dskip.slab(int(c));
            size_t k = 0;
            for (int z = 0; z < ud.z; ++z)
                for (int y = 0; y < ud.y; ++y) {
                    T* row = d + dskip.index(ox, y + oy, z + oz);
                    for (int x = 0; x < ud.x; ++x, ++k) row[x] = g[k];
                }
        } else {
            T* d = dup.slab(int(c) - skip_channels);
            std::copy(g, g + dout.plane(), d);
        }
    });
}

} // namespace voxseg::net
