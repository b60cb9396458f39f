#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "uml/errors.hpp"

namespace uml {

// Dense row-major (channels, height, width) tensor. Vectors are (n, 1, 1),
// scalars (1, 1, 1). Everything in this library is small enough that plain
// contiguous storage is the right call.
template <typename T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, T fill = T(0))
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

    static Tensor vec(int n, T fill = T(0)) { return Tensor(n, 1, 1, fill); }
    static Tensor scalar(T value) {
        Tensor t(1, 1, 1);
        t.v[0] = value;
        return t;
    }

    int plane() const { return h * w; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

    T& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    const T& at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T* channel(int ci) { return v.data() + static_cast<std::size_t>(ci) * plane(); }
    const T* channel(int ci) const { return v.data() + static_cast<std::size_t>(ci) * plane(); }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b)) throw invalid_input(std::string("shape mismatch in ") + what);
}

// Label map over the image grid, values in [0, Q).
struct LabelMap {
    int h = 0, w = 0;
    std::vector<int> v;

    LabelMap() = default;
    LabelMap(int h_, int w_, int fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    int& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    int at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }
};

}  // namespace uml
