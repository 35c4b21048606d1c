#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"
#include "ctxseg/png_io.hpp"

namespace ctxseg {

constexpr int kDefaultResolution = 256;

struct ImageSample {
  std::string id;
  std::string domain_id;
  Image image;               // working resolution, values in [0,1]
  std::optional<Mask> mask;  // same shape, values in {0,1}
};

struct DatasetHandle {
  std::string domain_id;
  std::string split;  // "train" or "test"
  std::vector<ImageSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Parameterized synthetic domain shift. The identity spec (all defaults)
/// leaves samples bit-identical; deform is the only field that touches masks.
struct ShiftSpec {
  double gamma = 1.0;
  bool invert = false;
  double noise_sigma = 0.0;
  double bias_amplitude = 0.0;
  double deform_magnitude = 0.0;  // pixels at working resolution

  bool is_identity() const {
    return gamma == 1.0 && !invert && noise_sigma == 0.0 &&
           bias_amplitude == 0.0 && deform_magnitude == 0.0;
  }
};

// ---------------------------------------------------------------------------
// Histogram equalization: 256-bin interpolated CDF mapping. Monotone
// non-decreasing, rank-preserving across occupied bins, constant images map
// to themselves.
// ---------------------------------------------------------------------------

inline Image preprocess(const Image& img) {
  float lo = 1.0f, hi = 0.0f;
  for (float v : img.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) return img;  // degenerate histogram

  constexpr int kBins = 256;
  std::vector<double> cdf(kBins, 0.0);
  for (float v : img.v) {
    int b = std::min(kBins - 1, static_cast<int>(clamp01(v) * kBins));
    cdf[static_cast<std::size_t>(b)] += 1.0;
  }
  double acc = 0.0;
  const double inv_n = 1.0 / static_cast<double>(img.size());
  for (int b = 0; b < kBins; ++b) {
    acc += cdf[static_cast<std::size_t>(b)];
    cdf[static_cast<std::size_t>(b)] = acc * inv_n;
  }

  Image out(img.h, img.w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = clamp01(img.v[i]) * kBins;
    int b = std::min(kBins - 1, static_cast<int>(v));
    double frac = std::min(1.0, v - b);
    double low = (b > 0) ? cdf[static_cast<std::size_t>(b - 1)] : 0.0;
    out.v[i] = static_cast<float>(low + frac * (cdf[static_cast<std::size_t>(b)] - low));
  }
  return out;
}

inline DatasetHandle preprocess_dataset(DatasetHandle handle) {
  for (auto& s : handle.samples) s.image = preprocess(s.image);
  return handle;
}

// ---------------------------------------------------------------------------
// Dataset directory layout:
//   <root>/<domain_id>/images/<id>.png   (8- or 16-bit grayscale)
//   <root>/<domain_id>/masks/<id>.png    (optional; nonzero = foreground)
// ---------------------------------------------------------------------------

namespace detail {

inline Image quantize16(Image img) {
  for (float& v : img.v) v = std::lround(clamp01(v) * 65535.0f) / 65535.0f;
  return img;
}

inline Mask binarize_nonzero(const Image& img) {
  Mask m(img.h, img.w);
  for (std::size_t i = 0; i < img.size(); ++i) m.v[i] = img.v[i] > 0.0f ? 1 : 0;
  return m;
}

}  // namespace detail

inline DatasetHandle load_dataset(const std::filesystem::path& root,
                                  const std::string& domain_id,
                                  const std::string& split,
                                  int resolution = kDefaultResolution) {
  namespace fs = std::filesystem;
  if (split != "train" && split != "test")
    throw UsageError("split must be 'train' or 'test', got '" + split + "'");

  fs::path dir = root / domain_id;
  fs::path images_dir = dir / "images";
  if (!fs::is_directory(images_dir))
    throw DataError("missing dataset directory: " + images_dir.string());
  fs::path masks_dir = dir / "masks";
  bool have_masks_dir = fs::is_directory(masks_dir);

  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(images_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());

  DatasetHandle handle{domain_id, split, {}};
  handle.samples.reserve(stems.size());
  for (const auto& stem : stems) {
    ImageSample s;
    s.id = stem;
    s.domain_id = domain_id;
    Image raw = read_png_gray(images_dir / (stem + ".png"));

    fs::path mask_path = masks_dir / (stem + ".png");
    if (have_masks_dir && fs::exists(mask_path)) {
      Image mraw = read_png_gray(mask_path);
      if (mraw.h != raw.h || mraw.w != raw.w)
        throw DataError("image/mask dimension mismatch for: " + mask_path.string());
      s.mask = resize_nearest(detail::binarize_nonzero(mraw), resolution, resolution);
    }
    s.image = detail::quantize16(resize_bilinear(raw, resolution, resolution));
    handle.samples.push_back(std::move(s));
  }
  return handle;
}

inline void save_dataset(const DatasetHandle& handle, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::path dir = root / handle.domain_id;
  fs::create_directories(dir / "images");
  bool any_mask = false;
  for (const auto& s : handle.samples)
    if (s.mask) any_mask = true;
  if (any_mask) fs::create_directories(dir / "masks");

  for (const auto& s : handle.samples) {
    write_png_gray16(dir / "images" / (s.id + ".png"), s.image);
    if (s.mask) {
      Mask scaled(s.mask->h, s.mask->w);
      for (std::size_t i = 0; i < scaled.size(); ++i)
        scaled.v[i] = (*s.mask).v[i] ? 255 : 0;
      write_png_gray8(dir / "masks" / (s.id + ".png"), scaled);
    }
  }
}

/// Samples [start, start+count) of `handle` as a new handle with the given
/// split tag. Used to carve deterministic train/test splits.
inline DatasetHandle subset(const DatasetHandle& handle, std::size_t start,
                            std::size_t count, const std::string& split) {
  DatasetHandle out{handle.domain_id, split, {}};
  for (std::size_t i = start; i < start + count && i < handle.samples.size(); ++i)
    out.samples.push_back(handle.samples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic two-lobe generator. Produces lung-like pairs of wobbled ellipses
// on a textured background with per-sample appearance variation (base level,
// lobe contrast, polarity, gamma jitter) so that context features carry
// information within a domain. The ShiftSpec is applied on top.
// ---------------------------------------------------------------------------

namespace detail {

struct CosField {
  // sum of 3 oriented cosines, amplitudes normalized to sum 1 => |f| <= 1
  double amp[3], u[3], v[3], phase[3];

  static CosField draw(Rng& rng) {
    CosField f{};
    double total = 0.0;
    for (int m = 0; m < 3; ++m) {
      f.amp[m] = rng.uniform(0.3, 1.0);
      total += f.amp[m];
      f.u[m] = rng.uniform(0.5, 2.5);
      f.v[m] = rng.uniform(0.5, 2.5);
      f.phase[m] = rng.uniform(0.0, 6.283185307179586);
    }
    for (int m = 0; m < 3; ++m) f.amp[m] /= total;
    return f;
  }

  double eval(double y, double x, int res) const {
    double s = 0.0;
    for (int m = 0; m < 3; ++m)
      s += amp[m] * std::cos(6.283185307179586 * (u[m] * x + v[m] * y) / res + phase[m]);
    return s;
  }
};

struct Lobe {
  double cy, cx, ry, rx, tilt, wob_a1, wob_p1, wob_a2, wob_p2;

  // Membership test that also reports the boundary-relative angle, which the
  // appearance model needs to place hidden sectors.
  bool probe(double y, double x, double* theta) const {
    double dy = y - cy, dx = x - cx;
    double ct = std::cos(tilt), st = std::sin(tilt);
    double ly = (ct * dy - st * dx) / ry;
    double lx = (st * dy + ct * dx) / rx;
    double rho = std::sqrt(ly * ly + lx * lx);
    double th = std::atan2(ly, lx);
    if (theta) *theta = th;
    double bound = 1.0 + wob_a1 * std::sin(3.0 * th + wob_p1) +
                   wob_a2 * std::sin(5.0 * th + wob_p2);
    return rho <= bound;
  }

  bool contains(double y, double x) const { return probe(y, x, nullptr); }
};

// Angular sector in which a lobe's appearance fades toward the background
// while the mask keeps the true shape, so the local boundary is
// underdetermined by the image alone. All fields are drawn unconditionally to
// keep the per-sample random stream fixed.
struct Wedge {
  bool active;
  double phi, half, depth;

  static Wedge draw(Rng& rng, double p_active) {
    Wedge w{};
    double u = rng.uniform();
    w.phi = rng.uniform(-3.141592653589793, 3.141592653589793);
    w.half = rng.uniform(0.65, 1.25);
    w.depth = rng.uniform(0.85, 1.0);
    w.active = u < p_active;
    return w;
  }

  double visibility(double theta) const {
    if (!active) return 1.0;
    double d = std::fabs(theta - phi);
    if (d > 3.141592653589793) d = 6.283185307179586 - d;
    if (d >= half) return 1.0;
    double s = 0.5 * (1.0 + std::cos(3.141592653589793 * d / half));
    return 1.0 - depth * s;
  }
};

// `family` in [0,1] couples coarse size and boundary style across both lobes
// (and the texture strength drawn by the caller), so samples that look alike
// at coarse scale also share fine boundary statistics.
inline Lobe draw_lobe(Rng& rng, int res, double cx_frac, double family) {
  Lobe lb{};
  lb.cy = res * (0.50 + rng.uniform(-0.05, 0.05));
  lb.cx = res * (cx_frac + rng.uniform(-0.04, 0.04));
  lb.ry = res * (0.17 + 0.09 * family + rng.uniform(0.0, 0.02));
  lb.rx = res * (0.085 + 0.055 * family + rng.uniform(0.0, 0.012));
  lb.tilt = rng.uniform(-0.12, 0.12);
  // Boundary style changes quickly but smoothly along the family axis, so a
  // parametric fit from a few dozen samples interpolates it poorly while
  // nearby samples in feature space share it almost exactly.
  double tau = 6.283185307179586;
  lb.wob_a1 = 0.02 + 0.115 * family + rng.uniform(0.0, 0.015);
  lb.wob_p1 = tau * std::fmod(family * 5.7 + 0.13 + 0.33 * cx_frac, 1.0) +
              rng.uniform(0.0, 0.22);
  lb.wob_a2 = 0.012 + 0.075 * family + rng.uniform(0.0, 0.012);
  lb.wob_p2 = tau * std::fmod(family * 8.3 + 0.57 + 0.21 * cx_frac, 1.0) +
              rng.uniform(0.0, 0.22);
  return lb;
}

// All random draws happen unconditionally and in a fixed order so that the
// same seed yields the same base sample under any ShiftSpec.
inline ImageSample synth_sample(const std::string& domain_id, std::uint64_t seed,
                                int index, const ShiftSpec& shift, int res) {
  Rng rng(mix64(seed, 0x5eedu + static_cast<std::uint64_t>(index)));

  double family = rng.uniform();
  Lobe left = draw_lobe(rng, res, 0.33, family);
  Lobe right = draw_lobe(rng, res, 0.67, family);

  double bg = rng.uniform(0.45, 0.70);
  double contrast = rng.uniform(0.18, 0.35);
  bool bright_lobes = rng.uniform() < 0.5;  // two balanced polarity modes
  double offset = bright_lobes ? contrast : -contrast;
  double gamma_jitter = rng.uniform(0.70, 1.50);
  CosField texture = CosField::draw(rng);
  double tex_amp = 0.015 + 0.045 * family + rng.uniform(0.0, 0.01);
  double noise_amp = rng.uniform(0.008, 0.07);
  double vig_amp = rng.uniform(-0.09, -0.01);
  Wedge wedge_l = Wedge::draw(rng, 0.75);
  Wedge wedge_r = Wedge::draw(rng, 0.75);
  // Per-sample base warp; shapes are never perfectly elliptical, and the
  // warp range envelopes the deformation magnitudes a ShiftSpec applies so
  // warped geometry stays inside the training shape distribution.
  double base_deform = res * rng.uniform(0.0, 0.05);
  CosField base_wy = CosField::draw(rng);
  CosField base_wx = CosField::draw(rng);

  Mask mask(res, res);
  Image soft(res, res);
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      double th;
      double vis = 0.0;
      bool in_l = left.probe(r, c, &th);
      if (in_l) vis = wedge_l.visibility(th);
      bool in_r = right.probe(r, c, &th);
      if (in_r) vis = std::max(vis, wedge_r.visibility(th));
      mask.at(r, c) = (in_l || in_r) ? 1 : 0;
      soft.at(r, c) = static_cast<float>(vis);
    }
  }
  soft = box_blur3(soft);

  Image img(res, res);
  double cy = (res - 1) * 0.5, cx = (res - 1) * 0.5;
  double dmax2 = cy * cy + cx * cx;
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      double vignette = vig_amp * ((r - cy) * (r - cy) + (c - cx) * (c - cx)) / dmax2;
      double v = bg + offset * soft.at(r, c) + tex_amp * texture.eval(r, c, res) +
                 vignette + noise_amp * rng.normal();
      img.at(r, c) = static_cast<float>(
          std::pow(static_cast<double>(clamp01(static_cast<float>(v))), gamma_jitter));
    }
  }

  // shift-owned draws (unconditional)
  CosField warp_y = CosField::draw(rng);
  CosField warp_x = CosField::draw(rng);
  CosField bias = CosField::draw(rng);
  std::vector<float> noise(img.size());
  for (auto& n : noise) n = static_cast<float>(rng.normal());

  if (base_deform > 0.0 || shift.deform_magnitude > 0.0) {
    Image warped(res, res);
    Mask warped_mask(res, res);
    for (int r = 0; r < res; ++r) {
      for (int c = 0; c < res; ++c) {
        double sy = r + base_deform * base_wy.eval(r, c, res) +
                    shift.deform_magnitude * warp_y.eval(r, c, res);
        double sx = c + base_deform * base_wx.eval(r, c, res) +
                    shift.deform_magnitude * warp_x.eval(r, c, res);
        warped.at(r, c) = sample_bilinear(img, sy, sx);
        int my = std::min(res - 1, std::max(0, static_cast<int>(std::lround(sy))));
        int mx = std::min(res - 1, std::max(0, static_cast<int>(std::lround(sx))));
        warped_mask.at(r, c) = mask.at(my, mx);
      }
    }
    img = std::move(warped);
    mask = std::move(warped_mask);
  }
  if (shift.gamma != 1.0) {
    for (float& v : img.v)
      v = static_cast<float>(std::pow(static_cast<double>(v), shift.gamma));
  }
  if (shift.invert) {
    for (float& v : img.v) v = 1.0f - v;
  }
  if (shift.bias_amplitude > 0.0) {
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c)
        img.at(r, c) = static_cast<float>(
            img.at(r, c) * (1.0 + shift.bias_amplitude * bias.eval(r, c, res)));
  }
  if (shift.noise_sigma > 0.0) {
    for (std::size_t i = 0; i < img.size(); ++i)
      img.v[i] += static_cast<float>(shift.noise_sigma) * noise[i];
  }
  for (float& v : img.v) v = clamp01(v);
  // Emit on the 16-bit intensity grid so PNG storage is lossless.
  img = quantize16(std::move(img));

  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  ImageSample s;
  s.id = domain_id + "-" + buf;
  s.domain_id = domain_id;
  s.image = std::move(img);
  s.mask = std::move(mask);
  return s;
}

}  // namespace detail

inline DatasetHandle synth_domain(int n_samples, const ShiftSpec& shift,
                                  std::uint64_t seed,
                                  int resolution = kDefaultResolution,
                                  const std::string& domain_id = "synth") {
  if (n_samples < 1) throw UsageError("synth_domain: n_samples must be >= 1");
  DatasetHandle handle{domain_id, "train", {}};
  handle.samples.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i)
    handle.samples.push_back(detail::synth_sample(domain_id, seed, i, shift, resolution));
  return handle;
}

}  // namespace ctxseg
