#pragma once

#include <cstddef>
#include <vector>

#include "ctxseg/common.hpp"

namespace ctxseg {

/// Dense NCHW tensor. Vectors and matrices ride along as degenerate shapes
/// ({N,D,1,1} for per-sample vectors).
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  T* channel(int in, int ic) {
    return v.data() + (static_cast<std::size_t>(in) * c + ic) * plane();
  }
  const T* channel(int in, int ic) const {
    return v.data() + (static_cast<std::size_t>(in) * c + ic) * plane();
  }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace ctxseg
