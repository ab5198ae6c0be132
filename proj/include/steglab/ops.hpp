#pragma once

// Forward and gradient kernels for the fixed op set the network needs.
// Sums are accumulated in double regardless of the storage type T.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "steglab/parallel.hpp"
#include "steglab/tensor.hpp"

namespace steglab {

struct Padding {
    int top = 0, left = 0, bottom = 0, right = 0;
    static Padding same(int p) { return {p, p, p, p}; }
};

template <typename T>
struct ConvParams {
    Tensor4<T> kernels;   // (out_c, in_c, kh, kw)
    std::vector<T> bias;  // empty for bias-free layers
    int stride = 1;
    Padding pad;
};

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.9);  // running = momentum*running + (1-momentum)*batch
};

// Per-channel batch statistics captured by a training-mode forward pass.
struct BnCache {
    std::vector<double> mean, inv_std;
};

inline int conv_out_dim(int in, int k, int pad_total, int stride) {
    return (in + pad_total - k) / stride + 1;
}

namespace detail {
inline std::vector<double>& scratch_plane(std::size_t n) {
    thread_local std::vector<double> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

template <typename T>
inline std::vector<T>& scratch_slices(std::size_t n) {
    thread_local std::vector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

// The row and block primitives below use a fixed lane decomposition so the
// accumulation order never depends on compiler whims or thread count, while
// still giving the vectorizer independent chains to work with.
#if defined(__GNUC__) || defined(__clang__)
#define STEGLAB_VEC8 1
using vec8d = double __attribute__((vector_size(64)));
inline vec8d load8(const double* p) {
    vec8d t;
    __builtin_memcpy(&t, p, 64);
    return t;
}
#endif

// Dot product over a 2D block whose rows sit at independent pitches. The
// accumulators are carried across rows (four independent 8-wide chains keep
// the FMA pipeline full); when both pitches equal the width the block
// collapses into one contiguous run.
inline double block_dot(const double* __restrict a, std::size_t ap, const double* __restrict b,
                        std::size_t bp, int rows, int cols) {
    if (ap == static_cast<std::size_t>(cols) && bp == static_cast<std::size_t>(cols)) {
        cols *= rows;
        rows = 1;
    }
    double tail = 0.0;
    double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
#if STEGLAB_VEC8
    vec8d a0 = {0, 0, 0, 0, 0, 0, 0, 0}, a1 = a0, a2 = a0, a3 = a0;
    for (int r = 0; r < rows; ++r) {
        const double* ar = a + ap * r;
        const double* br = b + bp * r;
        int i = 0;
        for (; i + 32 <= cols; i += 32) {
            a0 += load8(ar + i) * load8(br + i);
            a1 += load8(ar + i + 8) * load8(br + i + 8);
            a2 += load8(ar + i + 16) * load8(br + i + 16);
            a3 += load8(ar + i + 24) * load8(br + i + 24);
        }
        for (; i + 8 <= cols; i += 8) a0 += load8(ar + i) * load8(br + i);
        for (; i < cols; ++i) tail += ar[i] * br[i];
    }
    a0 = (a0 + a1) + (a2 + a3);
    __builtin_memcpy(lane, &a0, sizeof lane);
#else
    for (int r = 0; r < rows; ++r) {
        const double* ar = a + ap * r;
        const double* br = b + bp * r;
        int i = 0;
        for (; i + 8 <= cols; i += 8)
            for (int l = 0; l < 8; ++l) lane[l] += ar[i + l] * br[i + l];
        for (; i < cols; ++i) tail += ar[i] * br[i];
    }
#endif
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
           ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
}

template <typename T>
inline double row_sum(const T* __restrict a, std::size_t n) {
    double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) lane[l] += static_cast<double>(a[i + l]);
    for (; i < n; ++i) lane[0] += static_cast<double>(a[i]);
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

template <typename T>
inline void row_axpy(double* __restrict y, double w, const T* __restrict x, int n) {
    for (int j = 0; j < n; ++j) y[j] += w * static_cast<double>(x[j]);
}

// y += w * x over a 2D block whose rows sit at independent pitches; collapses
// into one contiguous run when both pitches equal the width.
template <typename T>
inline void block_axpy(double* __restrict y, std::size_t yp, const T* __restrict x,
                       std::size_t xpp, int rows, int cols, double w) {
    if (yp == static_cast<std::size_t>(cols) && xpp == static_cast<std::size_t>(cols)) {
        cols *= rows;
        rows = 1;
    }
    for (int r = 0; r < rows; ++r) row_axpy(y + yp * r, w, x + xpp * r, cols);
}

// Zero-padded, parity-decimated copy of one plane: subplane (rr, rc) holds
// the padded samples at (padded row % s == rr, padded col % s == rc), each of
// size (shp x swp). Every kernel tap of a stride-s convolution then reads one
// dense in-bounds 2D block: output (oi, oj) for tap (ki, kj) maps to subplane
// (ki % s, kj % s) at row oi + ki/s, column oj + kj/s. Stride 1 degenerates
// to a single padded copy.
template <typename T, typename U>
inline void build_tap_planes(const T* xp, int h, int w, Padding pad, int s, U* out, int shp,
                             int swp) {
    std::fill(out, out + static_cast<std::size_t>(s) * s * shp * swp, U(0));
    for (int i = 0; i < h; ++i) {
        const int ip = i + pad.top;
        const int rr = ip % s, si = ip / s;
        const T* src = xp + static_cast<std::size_t>(i) * w;
        int rc = pad.left % s, c = pad.left / s;
        for (int j = 0; j < w; ++j) {
            out[((static_cast<std::size_t>(rr) * s + rc) * shp + si) * swp + c] =
                static_cast<U>(src[j]);
            if (++rc == s) {
                rc = 0;
                ++c;
            }
        }
    }
}

// Inverse of build_tap_planes for accumulator planes: read the interior back
// out into an (h x w) plane, discarding the padding cells.
template <typename T>
inline void gather_tap_planes(const double* acc, int h, int w, Padding pad, int s, int shp,
                              int swp, T* out) {
    for (int i = 0; i < h; ++i) {
        const int ip = i + pad.top;
        const int rr = ip % s, si = ip / s;
        T* dst = out + static_cast<std::size_t>(i) * w;
        int rc = pad.left % s, c = pad.left / s;
        for (int j = 0; j < w; ++j) {
            dst[j] = static_cast<T>(
                acc[((static_cast<std::size_t>(rr) * s + rc) * shp + si) * swp + c]);
            if (++rc == s) {
                rc = 0;
                ++c;
            }
        }
    }
}
}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
    const int oc_n = p.kernels.n, ic_n = p.kernels.c;
    const int kh = p.kernels.h, kw = p.kernels.w;
    const int s = p.stride;
    require(s >= 1, "conv2d: stride must be >= 1, got " + std::to_string(s));
    require(x.c == ic_n, "conv2d: input channels " + std::to_string(x.c) +
                             " != kernel in_c " + std::to_string(ic_n));
    require(kh <= x.h + p.pad.top + p.pad.bottom,
            "conv2d: kernel height " + std::to_string(kh) + " exceeds padded input height");
    require(kw <= x.w + p.pad.left + p.pad.right,
            "conv2d: kernel width " + std::to_string(kw) + " exceeds padded input width");
    require(p.bias.empty() || p.bias.size() == static_cast<std::size_t>(oc_n),
            "conv2d: bias length != out_c");
    const int oh = conv_out_dim(x.h, kh, p.pad.top + p.pad.bottom, s);
    const int ow = conv_out_dim(x.w, kw, p.pad.left + p.pad.right, s);
    Tensor4<T> y(x.n, oc_n, oh, ow);
    const int hp = x.h + p.pad.top + p.pad.bottom, wp = x.w + p.pad.left + p.pad.right;
    const int shp = (hp + s - 1) / s, swp = (wp + s - 1) / s;
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    const std::size_t tsz = static_cast<std::size_t>(s) * s * shp * swp;

    parallel_for(0, x.n, [&](std::int64_t t) {
        const int ni = static_cast<int>(t);
        std::vector<T>& taps = detail::scratch_slices<T>(tsz * ic_n);
        for (int ic = 0; ic < ic_n; ++ic)
            detail::build_tap_planes(x.plane(ni, ic), x.h, x.w, p.pad, s, taps.data() + tsz * ic,
                                     shp, swp);
        std::vector<double>& acc = detail::scratch_plane(oplane);
        for (int oc = 0; oc < oc_n; ++oc) {
            const double b = p.bias.empty() ? 0.0 : static_cast<double>(p.bias[oc]);
            std::fill(acc.begin(), acc.begin() + oplane, b);
            for (int ic = 0; ic < ic_n; ++ic) {
                const T* tp = taps.data() + tsz * ic;
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj) {
                        const double wv = static_cast<double>(p.kernels.at(oc, ic, ki, kj));
                        if (wv == 0.0) continue;
                        const T* base = tp +
                                        ((static_cast<std::size_t>(ki % s) * s + kj % s) * shp +
                                         ki / s) *
                                            swp +
                                        kj / s;
                        detail::block_axpy(acc.data(), ow, base, swp, oh, ow, wv);
                    }
            }
            T* yp = y.plane(ni, oc);
            for (std::size_t i = 0; i < oplane; ++i) yp[i] = static_cast<T>(acc[i]);
        }
    });
    return y;
}

template <typename T>
struct ConvGrad {
    Tensor4<T> input;
    Tensor4<T> kernels;
    std::vector<T> bias;  // empty when the layer is bias-free
};

template <typename T>
ConvGrad<T> conv2d_grad(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& gy) {
    const int oc_n = p.kernels.n, ic_n = p.kernels.c;
    const int kh = p.kernels.h, kw = p.kernels.w;
    const int s = p.stride;
    require(x.c == ic_n, "conv2d_grad: input channels " + std::to_string(x.c) +
                             " != kernel in_c " + std::to_string(ic_n));
    const int oh = conv_out_dim(x.h, kh, p.pad.top + p.pad.bottom, s);
    const int ow = conv_out_dim(x.w, kw, p.pad.left + p.pad.right, s);
    require(gy.n == x.n && gy.c == oc_n && gy.h == oh && gy.w == ow,
            "conv2d_grad: grad_out shape " + gy.shape_str() + " != expected (" +
                std::to_string(x.n) + "," + std::to_string(oc_n) + "," + std::to_string(oh) + "," +
                std::to_string(ow) + ")");

    ConvGrad<T> g;
    g.input = Tensor4<T>(x.n, x.c, x.h, x.w);
    g.kernels = Tensor4<T>(oc_n, ic_n, kh, kw);
    if (!p.bias.empty()) g.bias.assign(oc_n, T(0));

    // Kernel and bias gradients: per-image partial sums, then a fixed-order
    // reduction over the batch. The dot products run on double rows; gradient
    // planes and padded input tap planes are converted once per image, which
    // costs one pass against kh*kw*oc_n reuses.
    const int hp = x.h + p.pad.top + p.pad.bottom, wp = x.w + p.pad.left + p.pad.right;
    const int shp = (hp + s - 1) / s, swp = (wp + s - 1) / s;
    const std::size_t tsz = static_cast<std::size_t>(s) * s * shp * swp;
    const std::size_t ksz = static_cast<std::size_t>(oc_n) * ic_n * kh * kw;
    std::vector<std::vector<double>> kpart(x.n);
    std::vector<std::vector<double>> bpart(x.n);
    parallel_for(0, x.n, [&](std::int64_t t) {
        const int ni = static_cast<int>(t);
        std::vector<double>& kacc = kpart[ni];
        kacc.assign(ksz, 0.0);
        const std::size_t gsz = gy.plane_size();
        std::vector<double>& buf = detail::scratch_plane(gsz * oc_n + tsz * ic_n);
        double* gd = buf.data();
        double* xd = buf.data() + gsz * oc_n;
        for (int oc = 0; oc < oc_n; ++oc) {
            const T* gp = gy.plane(ni, oc);
            double* d = gd + gsz * oc;
            for (std::size_t i = 0; i < gsz; ++i) d[i] = static_cast<double>(gp[i]);
        }
        for (int ic = 0; ic < ic_n; ++ic)
            detail::build_tap_planes(x.plane(ni, ic), x.h, x.w, p.pad, s, xd + tsz * ic, shp, swp);
        if (!p.bias.empty()) {
            bpart[ni].resize(oc_n);
            for (int oc = 0; oc < oc_n; ++oc) bpart[ni][oc] = detail::row_sum(gd + gsz * oc, gsz);
        }
        for (int oc = 0; oc < oc_n; ++oc) {
            const double* gp = gd + gsz * oc;
            for (int ic = 0; ic < ic_n; ++ic) {
                const double* tp = xd + tsz * ic;
                double* kp = kacc.data() + (static_cast<std::size_t>(oc) * ic_n + ic) * kh * kw;
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj) {
                        const double* base =
                            tp +
                            ((static_cast<std::size_t>(ki % s) * s + kj % s) * shp + ki / s) * swp +
                            kj / s;
                        kp[ki * kw + kj] += detail::block_dot(gp, ow, base, swp, oh, ow);
                    }
            }
        }
    });
    for (std::size_t i = 0; i < ksz; ++i) {
        double sum = 0.0;
        for (int ni = 0; ni < x.n; ++ni) sum += kpart[ni][i];
        g.kernels.v[i] = static_cast<T>(sum);
    }
    if (!p.bias.empty()) {
        for (int oc = 0; oc < oc_n; ++oc) {
            double sum = 0.0;
            for (int ni = 0; ni < x.n; ++ni) sum += bpart[ni][oc];
            g.bias[oc] = static_cast<T>(sum);
        }
    }

    // Input gradient: one task per (batch, input channel) plane. Taps scatter
    // into padded accumulator planes with the forward pass's geometry; the
    // interior is gathered back out at the end (padding cells are discarded,
    // matching the zero padding of the forward pass).
    parallel_for(0, static_cast<std::int64_t>(x.n) * ic_n, [&](std::int64_t t) {
        const int ni = static_cast<int>(t / ic_n);
        const int ic = static_cast<int>(t % ic_n);
        std::vector<double>& acc = detail::scratch_plane(tsz);
        std::fill(acc.begin(), acc.begin() + tsz, 0.0);
        for (int oc = 0; oc < oc_n; ++oc) {
            const T* gp = gy.plane(ni, oc);
            for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                    const double wv = static_cast<double>(p.kernels.at(oc, ic, ki, kj));
                    if (wv == 0.0) continue;
                    double* base = acc.data() +
                                   ((static_cast<std::size_t>(ki % s) * s + kj % s) * shp +
                                    ki / s) *
                                       swp +
                                   kj / s;
                    detail::block_axpy(base, swp, gp, ow, oh, ow, wv);
                }
        }
        detail::gather_tap_planes(acc.data(), x.h, x.w, p.pad, s, shp, swp, g.input.plane(ni, ic));
    });
    return g;
}

template <typename T>
Tensor4<T> batch_norm(const Tensor4<T>& x, BatchNormParams<T>& p, bool training,
                      BnCache* cache = nullptr) {
    require(p.gamma.size() == static_cast<std::size_t>(x.c) &&
                p.beta.size() == static_cast<std::size_t>(x.c) &&
                p.running_mean.size() == static_cast<std::size_t>(x.c) &&
                p.running_var.size() == static_cast<std::size_t>(x.c),
            "batch_norm: parameter arrays sized " + std::to_string(p.gamma.size()) +
                " do not match channels " + std::to_string(x.c));
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    if (cache) {
        cache->mean.assign(x.c, 0.0);
        cache->inv_std.assign(x.c, 0.0);
    }
    const double m_count = static_cast<double>(x.n) * x.h * x.w;
    parallel_for(0, x.c, [&](std::int64_t ci) {
        const int cc = static_cast<int>(ci);
        double mean, inv_std;
        if (training) {
            double sum = 0.0;
            for (int ni = 0; ni < x.n; ++ni) {
                const T* xp = x.plane(ni, cc);
                for (std::size_t i = 0; i < x.plane_size(); ++i) sum += static_cast<double>(xp[i]);
            }
            mean = sum / m_count;
            double sq = 0.0;
            for (int ni = 0; ni < x.n; ++ni) {
                const T* xp = x.plane(ni, cc);
                for (std::size_t i = 0; i < x.plane_size(); ++i) {
                    const double d = static_cast<double>(xp[i]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / m_count;
            inv_std = 1.0 / std::sqrt(var + static_cast<double>(p.epsilon));
            const double mom = static_cast<double>(p.momentum);
            p.running_mean[cc] = static_cast<T>(mom * static_cast<double>(p.running_mean[cc]) +
                                                (1.0 - mom) * mean);
            p.running_var[cc] = static_cast<T>(mom * static_cast<double>(p.running_var[cc]) +
                                               (1.0 - mom) * var);
        } else {
            mean = static_cast<double>(p.running_mean[cc]);
            inv_std = 1.0 / std::sqrt(static_cast<double>(p.running_var[cc]) +
                                      static_cast<double>(p.epsilon));
        }
        if (cache) {
            cache->mean[cc] = mean;
            cache->inv_std[cc] = inv_std;
        }
        const double g = static_cast<double>(p.gamma[cc]);
        const double b = static_cast<double>(p.beta[cc]);
        const double scale = g * inv_std;
        const double shift = b - mean * scale;
        for (int ni = 0; ni < x.n; ++ni) {
            const T* xp = x.plane(ni, cc);
            T* yp = y.plane(ni, cc);
            for (std::size_t i = 0; i < x.plane_size(); ++i)
                yp[i] = static_cast<T>(static_cast<double>(xp[i]) * scale + shift);
        }
    });
    return y;
}

template <typename T>
struct BatchNormGrad {
    Tensor4<T> input;
    std::vector<T> gamma, beta;
};

// Training-mode backward, including the batch-statistics terms.
template <typename T>
BatchNormGrad<T> batch_norm_grad(const Tensor4<T>& x, const BatchNormParams<T>& p,
                                 const BnCache& cache, const Tensor4<T>& gy) {
    require(gy.same_shape(x), "batch_norm_grad: grad_out shape " + gy.shape_str() +
                                  " != input shape " + x.shape_str());
    BatchNormGrad<T> g;
    g.input = Tensor4<T>(x.n, x.c, x.h, x.w);
    g.gamma.assign(x.c, T(0));
    g.beta.assign(x.c, T(0));
    const double m_count = static_cast<double>(x.n) * x.h * x.w;
    parallel_for(0, x.c, [&](std::int64_t ci) {
        const int cc = static_cast<int>(ci);
        const double mean = cache.mean[cc], inv_std = cache.inv_std[cc];
        const double gamma = static_cast<double>(p.gamma[cc]);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int ni = 0; ni < x.n; ++ni) {
            const T* xp = x.plane(ni, cc);
            const T* gp = gy.plane(ni, cc);
            for (std::size_t i = 0; i < x.plane_size(); ++i) {
                const double dy = static_cast<double>(gp[i]);
                const double xhat = (static_cast<double>(xp[i]) - mean) * inv_std;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        g.beta[cc] = static_cast<T>(sum_dy);
        g.gamma[cc] = static_cast<T>(sum_dy_xhat);
        const double k = gamma * inv_std / m_count;
        for (int ni = 0; ni < x.n; ++ni) {
            const T* xp = x.plane(ni, cc);
            const T* gp = gy.plane(ni, cc);
            T* op = g.input.plane(ni, cc);
            for (std::size_t i = 0; i < x.plane_size(); ++i) {
                const double dy = static_cast<double>(gp[i]);
                const double xhat = (static_cast<double>(xp[i]) - mean) * inv_std;
                op[i] = static_cast<T>(k * (m_count * dy - sum_dy - xhat * sum_dy_xhat));
            }
        }
    });
    return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
    return y;
}

// Subgradient at 0 is 0.
template <typename T>
Tensor4<T> relu_grad(const Tensor4<T>& x, const Tensor4<T>& gy) {
    require(gy.same_shape(x), "relu_grad: shape mismatch");
    Tensor4<T> g(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) g.v[i] = x.v[i] > T(0) ? gy.v[i] : T(0);
    return g;
}

// Truncated linear unit: clamp to [-t, t].
template <typename T>
Tensor4<T> tlu(const Tensor4<T>& x, T t) {
    require(t > T(0), "tlu: threshold must be positive");
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] = std::clamp(x.v[i], -t, t);
    return y;
}

// Gradient 1 on [-t, t] (boundary included), 0 outside.
template <typename T>
Tensor4<T> tlu_grad(const Tensor4<T>& x, T t, const Tensor4<T>& gy) {
    require(gy.same_shape(x), "tlu_grad: shape mismatch");
    Tensor4<T> g(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i)
        g.v[i] = (x.v[i] >= -t && x.v[i] <= t) ? gy.v[i] : T(0);
    return g;
}

template <typename T>
Tensor4<T> abs_val(const Tensor4<T>& x) {
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] = x.v[i] < T(0) ? -x.v[i] : x.v[i];
    return y;
}

template <typename T>
Tensor4<T> abs_grad(const Tensor4<T>& x, const Tensor4<T>& gy) {
    require(gy.same_shape(x), "abs_grad: shape mismatch");
    Tensor4<T> g(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i)
        g.v[i] = x.v[i] > T(0) ? gy.v[i] : (x.v[i] < T(0) ? -gy.v[i] : T(0));
    return g;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    int total_c = 0;
    for (const auto* x : xs) {
        require(x->n == xs[0]->n && x->h == xs[0]->h && x->w == xs[0]->w,
                "concat_channels: spatial/batch mismatch " + x->shape_str() + " vs " +
                    xs[0]->shape_str());
        total_c += x->c;
    }
    Tensor4<T> y(xs[0]->n, total_c, xs[0]->h, xs[0]->w);
    for (int ni = 0; ni < y.n; ++ni) {
        int co = 0;
        for (const auto* x : xs) {
            for (int ci = 0; ci < x->c; ++ci, ++co) {
                const T* src = x->plane(ni, ci);
                T* dst = y.plane(ni, co);
                std::copy(src, src + y.plane_size(), dst);
            }
        }
    }
    return y;
}

// Channels [c_begin, c_begin + c_len) as a standalone tensor.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int c_begin, int c_len) {
    require(c_begin >= 0 && c_len >= 1 && c_begin + c_len <= x.c,
            "slice_channels: range [" + std::to_string(c_begin) + "," +
                std::to_string(c_begin + c_len) + ") outside " + std::to_string(x.c) + " channels");
    Tensor4<T> y(x.n, c_len, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < c_len; ++ci) {
            const T* src = x.plane(ni, c_begin + ci);
            std::copy(src, src + x.plane_size(), y.plane(ni, ci));
        }
    return y;
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
    Tensor4<T> y(x.n, x.c, 1, 1);
    const double inv = 1.0 / static_cast<double>(x.plane_size());
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const T* xp = x.plane(ni, ci);
            double sum = 0.0;
            for (std::size_t i = 0; i < x.plane_size(); ++i) sum += static_cast<double>(xp[i]);
            y.at(ni, ci, 0, 0) = static_cast<T>(sum * inv);
        }
    return y;
}

template <typename T>
Tensor4<T> global_avg_pool_grad(const Tensor4<T>& x, const Tensor4<T>& gy) {
    require(gy.n == x.n && gy.c == x.c && gy.h == 1 && gy.w == 1,
            "global_avg_pool_grad: grad_out shape " + gy.shape_str());
    Tensor4<T> g(x.n, x.c, x.h, x.w);
    const double inv = 1.0 / static_cast<double>(x.plane_size());
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const T val = static_cast<T>(static_cast<double>(gy.at(ni, ci, 0, 0)) * inv);
            T* gp = g.plane(ni, ci);
            std::fill(gp, gp + g.plane_size(), val);
        }
    return g;
}

template <typename T>
struct DenseSoftmaxResult {
    std::vector<double> probs;  // (n, classes) row-major
    double loss = 0.0;
    Tensor4<T> grad_input;
    std::vector<T> grad_weights;  // (classes, features) row-major
    std::vector<T> grad_bias;     // (classes)
};

// Row softmax with max subtraction. logits: (n, k) row-major doubles.
inline std::vector<double> softmax_rows(const std::vector<double>& logits, int n, int k) {
    std::vector<double> probs(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        double* out = probs.data() + static_cast<std::size_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (int j = 0; j < k; ++j) out[j] /= sum;
    }
    return probs;
}

// Dense layer logits: x (n, f) flattened from (n, f, 1, 1); weights (k, f); bias (k).
template <typename T>
std::vector<double> dense_logits(const Tensor4<T>& x, const std::vector<T>& weights,
                                 const std::vector<T>& bias, int classes) {
    const int f = x.c * x.h * x.w;
    require(weights.size() == static_cast<std::size_t>(classes) * f,
            "dense: weight count " + std::to_string(weights.size()) + " != classes*features " +
                std::to_string(static_cast<std::size_t>(classes) * f));
    require(bias.size() == static_cast<std::size_t>(classes), "dense: bias length != classes");
    std::vector<double> logits(static_cast<std::size_t>(x.n) * classes);
    for (int i = 0; i < x.n; ++i) {
        const T* xi = x.v.data() + static_cast<std::size_t>(i) * f;
        for (int j = 0; j < classes; ++j) {
            const T* wj = weights.data() + static_cast<std::size_t>(j) * f;
            double sum = static_cast<double>(bias[j]);
            for (int q = 0; q < f; ++q)
                sum += static_cast<double>(xi[q]) * static_cast<double>(wj[q]);
            logits[static_cast<std::size_t>(i) * classes + j] = sum;
        }
    }
    return logits;
}

// Fused dense + softmax + mean cross-entropy with gradients.
template <typename T>
DenseSoftmaxResult<T> dense_softmax_xent(const Tensor4<T>& x, const std::vector<T>& weights,
                                         const std::vector<T>& bias,
                                         const std::vector<int>& labels, int classes = 2) {
    const int f = x.c * x.h * x.w;
    require(labels.size() == static_cast<std::size_t>(x.n), "dense_softmax_xent: label count " +
                                                                std::to_string(labels.size()) +
                                                                " != batch " + std::to_string(x.n));
    for (int lab : labels)
        require(lab >= 0 && lab < classes,
                "dense_softmax_xent: label " + std::to_string(lab) + " out of range");

    DenseSoftmaxResult<T> r;
    const std::vector<double> logits = dense_logits(x, weights, bias, classes);
    r.probs = softmax_rows(logits, x.n, classes);

    double loss = 0.0;
    std::vector<double> dlogits(static_cast<std::size_t>(x.n) * classes);
    const double inv_n = 1.0 / static_cast<double>(x.n);
    for (int i = 0; i < x.n; ++i) {
        const double* p = r.probs.data() + static_cast<std::size_t>(i) * classes;
        loss -= std::log(std::max(p[labels[i]], 1e-300));
        for (int j = 0; j < classes; ++j)
            dlogits[static_cast<std::size_t>(i) * classes + j] =
                (p[j] - (labels[i] == j ? 1.0 : 0.0)) * inv_n;
    }
    r.loss = loss * inv_n;

    r.grad_input = Tensor4<T>(x.n, x.c, x.h, x.w);
    r.grad_weights.assign(static_cast<std::size_t>(classes) * f, T(0));
    r.grad_bias.assign(classes, T(0));
    std::vector<double> gw(static_cast<std::size_t>(classes) * f, 0.0);
    std::vector<double> gb(classes, 0.0);
    for (int i = 0; i < x.n; ++i) {
        const T* xi = x.v.data() + static_cast<std::size_t>(i) * f;
        T* gi = r.grad_input.v.data() + static_cast<std::size_t>(i) * f;
        for (int j = 0; j < classes; ++j) {
            const double d = dlogits[static_cast<std::size_t>(i) * classes + j];
            const T* wj = weights.data() + static_cast<std::size_t>(j) * f;
            double* gwj = gw.data() + static_cast<std::size_t>(j) * f;
            gb[j] += d;
            for (int q = 0; q < f; ++q) {
                gi[q] = static_cast<T>(static_cast<double>(gi[q]) + d * static_cast<double>(wj[q]));
                gwj[q] += d * static_cast<double>(xi[q]);
            }
        }
    }
    for (std::size_t i = 0; i < gw.size(); ++i) r.grad_weights[i] = static_cast<T>(gw[i]);
    for (int j = 0; j < classes; ++j) r.grad_bias[j] = static_cast<T>(gb[j]);
    return r;
}

}  // namespace steglab
