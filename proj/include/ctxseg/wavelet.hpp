#pragma once

#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"

namespace ctxseg {

// Orthonormal 2-D Haar transform in Mallat layout: each level rewrites the
// current low-pass quadrant, leaving detail quadrants in place. Level l
// occupies the top-left (h/2^l) x (w/2^l) block.

inline void haar_forward(Grid<double>& a, int levels) {
  if (a.h % (1 << levels) || a.w % (1 << levels))
    throw DataError("haar_forward: dimensions not divisible by 2^levels");
  const double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> tmp(static_cast<std::size_t>(std::max(a.h, a.w)));
  int h = a.h, w = a.w;
  for (int l = 0; l < levels; ++l) {
    // rows: pairwise average/difference across columns
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w / 2; ++c) {
        double x = a.at(r, 2 * c), y = a.at(r, 2 * c + 1);
        tmp[static_cast<std::size_t>(c)] = (x + y) * inv_sqrt2;
        tmp[static_cast<std::size_t>(c + w / 2)] = (x - y) * inv_sqrt2;
      }
      for (int c = 0; c < w; ++c) a.at(r, c) = tmp[static_cast<std::size_t>(c)];
    }
    // columns
    for (int c = 0; c < w; ++c) {
      for (int r = 0; r < h / 2; ++r) {
        double x = a.at(2 * r, c), y = a.at(2 * r + 1, c);
        tmp[static_cast<std::size_t>(r)] = (x + y) * inv_sqrt2;
        tmp[static_cast<std::size_t>(r + h / 2)] = (x - y) * inv_sqrt2;
      }
      for (int r = 0; r < h; ++r) a.at(r, c) = tmp[static_cast<std::size_t>(r)];
    }
    h /= 2;
    w /= 2;
  }
}

inline void haar_inverse(Grid<double>& a, int levels) {
  if (a.h % (1 << levels) || a.w % (1 << levels))
    throw DataError("haar_inverse: dimensions not divisible by 2^levels");
  const double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> tmp(static_cast<std::size_t>(std::max(a.h, a.w)));
  for (int l = levels - 1; l >= 0; --l) {
    int h = a.h >> l, w = a.w >> l;
    // columns first (reverse of forward order)
    for (int c = 0; c < w; ++c) {
      for (int r = 0; r < h / 2; ++r) {
        double s = a.at(r, c), d = a.at(r + h / 2, c);
        tmp[static_cast<std::size_t>(2 * r)] = (s + d) * inv_sqrt2;
        tmp[static_cast<std::size_t>(2 * r + 1)] = (s - d) * inv_sqrt2;
      }
      for (int r = 0; r < h; ++r) a.at(r, c) = tmp[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w / 2; ++c) {
        double s = a.at(r, c), d = a.at(r, c + w / 2);
        tmp[static_cast<std::size_t>(2 * c)] = (s + d) * inv_sqrt2;
        tmp[static_cast<std::size_t>(2 * c + 1)] = (s - d) * inv_sqrt2;
      }
      for (int c = 0; c < w; ++c) a.at(r, c) = tmp[static_cast<std::size_t>(c)];
    }
  }
}

/// Mean absolute value of one detail quadrant at the given level.
/// quadrant: 0 = horizontal detail (top-right), 1 = vertical (bottom-left),
/// 2 = diagonal (bottom-right).
inline double detail_energy(const Grid<double>& a, int level, int quadrant) {
  int h = a.h >> level, w = a.w >> level;
  int r0 = (quadrant == 0) ? 0 : h;
  int c0 = (quadrant == 1) ? 0 : w;
  double acc = 0.0;
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c) acc += std::abs(a.at(r, c));
  return acc / (static_cast<double>(h) * w);
}

constexpr int kQueryLevels = 2;

inline int query_feature_dim(int resolution, int levels = kQueryLevels) {
  int side = resolution >> levels;
  return side * side + 3 * levels;
}

/// Wavelet retrieval key: flattened deepest approximation block followed by
/// the mean absolute energy of each detail quadrant (coarse level first),
/// L2-normalized unless the vector is all-zero.
inline std::vector<float> query_features(const Image& img, int levels = kQueryLevels) {
  Grid<double> a(img.h, img.w);
  for (std::size_t i = 0; i < img.size(); ++i) a.v[i] = img.v[i];
  haar_forward(a, levels);

  int side_h = img.h >> levels, side_w = img.w >> levels;
  std::vector<double> f;
  f.reserve(static_cast<std::size_t>(side_h) * side_w + 3 * levels);
  for (int r = 0; r < side_h; ++r)
    for (int c = 0; c < side_w; ++c) f.push_back(a.at(r, c));
  for (int l = levels; l >= 1; --l)
    for (int q = 0; q < 3; ++q) f.push_back(detail_energy(a, l, q));

  double norm2 = 0.0;
  for (double x : f) norm2 += x * x;
  std::vector<float> out(f.size());
  if (norm2 > 0.0) {
    double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = static_cast<float>(f[i] * inv);
  } else {
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = 0.0f;
  }
  return out;
}

}  // namespace ctxseg
