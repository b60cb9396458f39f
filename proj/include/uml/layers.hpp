#pragma once

#include <cmath>
#include <string>

#include "uml/rng.hpp"
#include "uml/tensor.hpp"

namespace uml {
namespace kernels {

// dst(y, x) += a * src(y + dy, x + dx) over the region where both indices are
// valid. Shared by conv forward (shift = kernel offset) and conv input-grad
// (negated shift).
template <typename T>
inline void axpy_shifted(T a, const T* src, int sh, int sw, T* dst, int dh, int dw,
                         int dy, int dx) {
    const int y0 = dy < 0 ? -dy : 0;
    const int y1 = sh - dy < dh ? sh - dy : dh;
    const int x0 = dx < 0 ? -dx : 0;
    const int x1 = sw - dx < dw ? sw - dx : dw;
    for (int y = y0; y < y1; ++y) {
        const T* s = src + (y + dy) * sw + dx;
        T* d = dst + y * dw;
        for (int x = x0; x < x1; ++x) d[x] += a * s[x];
    }
}

// sum over a(y, x) * b(y + dy, x + dx) where both are valid. Four running
// accumulators keep the reduction vectorizable without reassociation flags.
template <typename T>
inline T dot_shifted(const T* a, int ah, int aw, const T* b, int bh, int bw, int dy,
                     int dx) {
    const int y0 = dy < 0 ? -dy : 0;
    const int y1 = bh - dy < ah ? bh - dy : ah;
    const int x0 = dx < 0 ? -dx : 0;
    const int x1 = bw - dx < aw ? bw - dx : aw;
    T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
    for (int y = y0; y < y1; ++y) {
        const T* pa = a + y * aw;
        const T* pb = b + (y + dy) * bw + dx;
        int x = x0;
        for (; x + 4 <= x1; x += 4) {
            acc0 += pa[x] * pb[x];
            acc1 += pa[x + 1] * pb[x + 1];
            acc2 += pa[x + 2] * pb[x + 2];
            acc3 += pa[x + 3] * pb[x + 3];
        }
        for (; x < x1; ++x) acc0 += pa[x] * pb[x];
    }
    return (acc0 + acc1) + (acc2 + acc3);
}

}  // namespace kernels

// 2-D convolution, stride 1, square kernel (1 or 3 here), zero padding.
// Weights are stored (out_c, in_c, k*k); gradients live alongside so the
// optimizer can treat every layer uniformly.
template <typename T>
struct Conv2D {
    std::string name;
    int in_c = 0, out_c = 0, k = 1, pad = 0;
    Tensor<T> w, b, gw, gb;

    Conv2D() = default;
    Conv2D(std::string name_, int in, int out, int k_, SplitMix64& rng)
        : name(std::move(name_)), in_c(in), out_c(out), k(k_), pad(k_ / 2) {
        w = Tensor<T>(out_c, in_c, k * k);
        b = Tensor<T>::vec(out_c);
        gw = Tensor<T>(out_c, in_c, k * k);
        gb = Tensor<T>::vec(out_c);
        const double std_dev = std::sqrt(2.0 / (in_c * k * k));
        for (auto& x : w.v) x = static_cast<T>(rng.normal() * std_dev);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y(out_c, x.h, x.w);
        const int hw = x.plane();
        for (int co = 0; co < out_c; ++co) {
            T* yp = y.channel(co);
            const T bias = b[co];
            for (int i = 0; i < hw; ++i) yp[i] = bias;
            for (int ci = 0; ci < in_c; ++ci) {
                const T* xp = x.channel(ci);
                const T* wp = &w.at(co, ci, 0);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        kernels::axpy_shifted(wp[ky * k + kx], xp, x.h, x.w, yp, x.h, x.w,
                                              ky - pad, kx - pad);
            }
        }
        return y;
    }

    // Accumulates gw / gb, returns gradient w.r.t. the input.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
        Tensor<T> gx(in_c, x.h, x.w);
        for (int co = 0; co < out_c; ++co) {
            const T* gyp = gy.channel(co);
            T acc = T(0);
            for (int i = 0; i < gy.plane(); ++i) acc += gyp[i];
            gb[co] += acc;
            for (int ci = 0; ci < in_c; ++ci) {
                const T* xp = x.channel(ci);
                T* gxp = gx.channel(ci);
                const T* wp = &w.at(co, ci, 0);
                T* gwp = &gw.at(co, ci, 0);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int dy = ky - pad, dx = kx - pad;
                        gwp[ky * k + kx] +=
                            kernels::dot_shifted(gyp, x.h, x.w, xp, x.h, x.w, dy, dx);
                        kernels::axpy_shifted(wp[ky * k + kx], gyp, x.h, x.w, gxp, x.h,
                                              x.w, -dy, -dx);
                    }
            }
        }
        return gx;
    }
};

template <typename T>
struct Linear {
    std::string name;
    int in_n = 0, out_n = 0;
    Tensor<T> w, b, gw, gb;  // w is (out_n, in_n, 1)

    Linear() = default;
    Linear(std::string name_, int in, int out, SplitMix64& rng)
        : name(std::move(name_)), in_n(in), out_n(out) {
        w = Tensor<T>(out_n, in_n, 1);
        b = Tensor<T>::vec(out_n);
        gw = Tensor<T>(out_n, in_n, 1);
        gb = Tensor<T>::vec(out_n);
        const double std_dev = std::sqrt(2.0 / in_n);
        for (auto& x : w.v) x = static_cast<T>(rng.normal() * std_dev);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = Tensor<T>::vec(out_n);
        for (int o = 0; o < out_n; ++o) {
            T acc = b[o];
            const T* wp = &w.at(o, 0, 0);
            for (int i = 0; i < in_n; ++i) acc += wp[i] * x[i];
            y[o] = acc;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) {
        Tensor<T> gx = Tensor<T>::vec(in_n);
        for (int o = 0; o < out_n; ++o) {
            const T g = gy[o];
            gb[o] += g;
            const T* wp = &w.at(o, 0, 0);
            T* gwp = &gw.at(o, 0, 0);
            for (int i = 0; i < in_n; ++i) {
                gwp[i] += g * x[i];
                gx[i] += g * wp[i];
            }
        }
        return gx;
    }
};

}  // namespace uml
