#pragma once

#include <cstdint>
#include <vector>

#include "ctxseg/common.hpp"

namespace ctxseg {

/// Dense row-major 2-D grid. Image = Grid<float> with values in [0,1],
/// Mask = Grid<uint8_t> with values in {0,1}.
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
  const T& at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }

  std::size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

  bool operator==(const Grid& o) const { return h == o.h && w == o.w && v == o.v; }
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline Image resize_bilinear(const Image& src, int oh, int ow) {
  if (src.h == oh && src.w == ow) return src;
  Image out(oh, ow);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int r = 0; r < oh; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(src.h - 1, std::max(0, y0 + 1));
    y0 = std::min(src.h - 1, std::max(0, y0));
    for (int c = 0; c < ow; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(src.w - 1, std::max(0, x0 + 1));
      x0 = std::min(src.w - 1, std::max(0, x0));
      double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
      double bot = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
      out.at(r, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
    }
  }
  return out;
}

template <typename T>
inline Grid<T> resize_nearest(const Grid<T>& src, int oh, int ow) {
  if (src.h == oh && src.w == ow) return src;
  Grid<T> out(oh, ow);
  for (int r = 0; r < oh; ++r) {
    int y = std::min(src.h - 1, static_cast<int>((r + 0.5) * src.h / oh));
    for (int c = 0; c < ow; ++c) {
      int x = std::min(src.w - 1, static_cast<int>((c + 0.5) * src.w / ow));
      out.at(r, c) = src.at(y, x);
    }
  }
  return out;
}

/// 3x3 box blur with clamped borders; used to feather synthetic mask edges.
inline Image box_blur3(const Image& src) {
  Image out(src.h, src.w);
  for (int r = 0; r < src.h; ++r) {
    for (int c = 0; c < src.w; ++c) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        int rr = std::min(src.h - 1, std::max(0, r + dr));
        for (int dc = -1; dc <= 1; ++dc) {
          int cc = std::min(src.w - 1, std::max(0, c + dc));
          acc += src.at(rr, cc);
        }
      }
      out.at(r, c) = static_cast<float>(acc / 9.0);
    }
  }
  return out;
}

/// Bilinear sample with border clamp.
inline float sample_bilinear(const Image& img, double y, double x) {
  y = std::min(static_cast<double>(img.h - 1), std::max(0.0, y));
  x = std::min(static_cast<double>(img.w - 1), std::max(0.0, x));
  int y0 = static_cast<int>(y);
  int x0 = static_cast<int>(x);
  int y1 = std::min(img.h - 1, y0 + 1);
  int x1 = std::min(img.w - 1, x0 + 1);
  double wy = y - y0;
  double wx = x - x0;
  double top = img.at(y0, x0) * (1.0 - wx) + img.at(y0, x1) * wx;
  double bot = img.at(y1, x0) * (1.0 - wx) + img.at(y1, x1) * wx;
  return static_cast<float>(top * (1.0 - wy) + bot * wy);
}

}  // namespace ctxseg
