#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steglab/error.hpp"

namespace steglab {

// Dense (batch, channels, rows, cols) array, row-major with cols fastest.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
        require(n_ >= 1 && c_ >= 1 && h_ >= 1 && w_ >= 1,
                "Tensor4: all dimensions must be >= 1, got " + shape_str());
    }
    Tensor4(int n_, int c_, int h_, int w_, std::vector<T> data)
        : n(n_), c(c_), h(h_), w(w_), v(std::move(data)) {
        require(v.size() == static_cast<std::size_t>(n_) * c_ * h_ * w_,
                "Tensor4: data length does not match shape " + shape_str());
    }

    std::size_t size() const { return v.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

    T& at(int ni, int ci, int y, int x) { return v[idx(ni, ci, y, x)]; }
    const T& at(int ni, int ci, int y, int x) const { return v[idx(ni, ci, y, x)]; }

    T* plane(int ni, int ci) { return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane_size(); }
    const T* plane(int ni, int ci) const {
        return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane_size();
    }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

  private:
    std::size_t idx(int ni, int ci, int y, int x) const {
        return ((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x;
    }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

}  // namespace steglab
