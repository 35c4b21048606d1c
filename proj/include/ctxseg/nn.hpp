#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/tensor.hpp"

namespace ctxseg::nn {

/// Named parameter tensor with its gradient accumulator. Buffers (batch-norm
/// running statistics) are persisted alongside weights but skipped by the
/// optimizer.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> w;
  std::vector<T> g;
  bool buffer = false;

  Param(std::string name_, std::vector<int> shape_, bool buffer_ = false)
      : name(std::move(name_)), shape(std::move(shape_)), buffer(buffer_) {
    std::size_t total = 1;
    for (int d : shape) total *= static_cast<std::size_t>(d);
    w.assign(total, T(0));
    g.assign(total, T(0));
  }
};

/// Every parameter tensor draws from its own stream keyed by (seed, name), so
/// models sharing a seed initialize shared layers identically regardless of
/// which other layers exist.
template <typename T>
inline void init_normal(Param<T>& p, std::uint64_t seed, double stddev) {
  Rng rng(mix64(seed, fnv1a64(p.name)));
  for (auto& x : p.w) x = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
inline void init_const(Param<T>& p, T value) {
  std::fill(p.w.begin(), p.w.end(), value);
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d(const std::string& name, int in_ch, int out_ch, int ksize, int stride,
         int pad, bool bias, std::uint64_t seed)
      : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad),
        weight_(name + ".weight", {out_ch, in_ch, ksize, ksize}),
        bias_(name + ".bias", {out_ch}),
        has_bias_(bias) {
    double fan_in = static_cast<double>(in_ch) * ksize * ksize;
    init_normal(weight_, seed, std::sqrt(2.0 / fan_in));
  }

  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x) {
    int oh = out_dim(x.h), ow = out_dim(x.w);
    Tensor<T> y(x.n, out_ch_, oh, ow);
    x_cache_ = x;
    cols_cache_.assign(static_cast<std::size_t>(x.n) * col_rows() * oh * ow, T(0));
    Eigen::Map<const MatRM<T>> W(weight_.w.data(), out_ch_, col_rows());
    for (int in = 0; in < x.n; ++in) {
      T* cols = cols_cache_.data() + static_cast<std::size_t>(in) * col_rows() * oh * ow;
      im2col(x, in, cols, oh, ow);
      Eigen::Map<const MatRM<T>> C(cols, col_rows(), oh * ow);
      Eigen::Map<MatRM<T>> Y(y.channel(in, 0), out_ch_, oh * ow);
      Y.noalias() = W * C;
      if (has_bias_)
        for (int oc = 0; oc < out_ch_; ++oc)
          Y.row(oc).array() += bias_.w[static_cast<std::size_t>(oc)];
    }
    return y;
  }

  /// Accumulates weight/bias gradients and returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = x_cache_;
    int oh = dy.h, ow = dy.w;
    Tensor<T> dx(x.n, in_ch_, x.h, x.w);
    Eigen::Map<const MatRM<T>> W(weight_.w.data(), out_ch_, col_rows());
    Eigen::Map<MatRM<T>> dW(weight_.g.data(), out_ch_, col_rows());
    std::vector<T> dcols(static_cast<std::size_t>(col_rows()) * oh * ow);
    for (int in = 0; in < x.n; ++in) {
      const T* cols = cols_cache_.data() + static_cast<std::size_t>(in) * col_rows() * oh * ow;
      Eigen::Map<const MatRM<T>> C(cols, col_rows(), oh * ow);
      Eigen::Map<const MatRM<T>> dY(dy.channel(in, 0), out_ch_, oh * ow);
      dW.noalias() += dY * C.transpose();
      if (has_bias_)
        for (int oc = 0; oc < out_ch_; ++oc)
          bias_.g[static_cast<std::size_t>(oc)] += dY.row(oc).sum();
      Eigen::Map<MatRM<T>> dC(dcols.data(), col_rows(), oh * ow);
      dC.noalias() = W.transpose() * dY;
      col2im(dcols.data(), dx, in, oh, ow);
    }
    return dx;
  }

  std::vector<Param<T>*> params() {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }

 private:
  int col_rows() const { return in_ch_ * k_ * k_; }

  void im2col(const Tensor<T>& x, int in, T* cols, int oh, int ow) const {
    std::size_t r = 0;
    for (int ic = 0; ic < in_ch_; ++ic) {
      const T* src = x.channel(in, ic);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, ++r) {
          T* dst = cols + r * static_cast<std::size_t>(oh) * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) {
              std::fill(dst + static_cast<std::size_t>(oy) * ow,
                        dst + static_cast<std::size_t>(oy + 1) * ow, T(0));
              continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride_ - pad_ + kx;
              dst[static_cast<std::size_t>(oy) * ow + ox] =
                  (ix >= 0 && ix < x.w) ? src[static_cast<std::size_t>(iy) * x.w + ix] : T(0);
            }
          }
        }
    }
  }

  void col2im(const T* dcols, Tensor<T>& dx, int in, int oh, int ow) const {
    std::size_t r = 0;
    for (int ic = 0; ic < in_ch_; ++ic) {
      T* dst = dx.channel(in, ic);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, ++r) {
          const T* src = dcols + r * static_cast<std::size_t>(oh) * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= dx.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < dx.w)
                dst[static_cast<std::size_t>(iy) * dx.w + ix] +=
                    src[static_cast<std::size_t>(oy) * ow + ox];
            }
          }
        }
    }
  }

  int in_ch_, out_ch_, k_, stride_, pad_;
  Param<T> weight_;
  Param<T> bias_;
  bool has_bias_;
  Tensor<T> x_cache_;
  std::vector<T> cols_cache_;
};

// ---------------------------------------------------------------------------
// Batch normalization (biased batch variance for normalization, unbiased for
// the running estimate; running stats are buffers)
// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d(const std::string& name, int ch, double momentum = 0.1, double eps = 1e-5)
      : ch_(ch), momentum_(momentum), eps_(eps),
        gamma_(name + ".gamma", {ch}),
        beta_(name + ".beta", {ch}),
        run_mean_(name + ".running_mean", {ch}, true),
        run_var_(name + ".running_var", {ch}, true) {
    init_const(gamma_, T(1));
    init_const(run_var_, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    std::size_t plane = x.plane();
    std::size_t m = static_cast<std::size_t>(x.n) * plane;
    train_ = train;
    if (train) {
      xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
      inv_std_.assign(static_cast<std::size_t>(ch_), T(0));
    }
    for (int ic = 0; ic < ch_; ++ic) {
      T mean, inv_std;
      if (train) {
        double sum = 0.0, sq = 0.0;
        for (int in = 0; in < x.n; ++in) {
          const T* p = x.channel(in, ic);
          for (std::size_t i = 0; i < plane; ++i) {
            sum += static_cast<double>(p[i]);
            sq += static_cast<double>(p[i]) * p[i];
          }
        }
        double mu = sum / static_cast<double>(m);
        double var = sq / static_cast<double>(m) - mu * mu;
        if (var < 0.0) var = 0.0;
        mean = static_cast<T>(mu);
        inv_std = static_cast<T>(1.0 / std::sqrt(var + eps_));
        inv_std_[static_cast<std::size_t>(ic)] = inv_std;
        double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        run_mean_.w[ic] = static_cast<T>((1.0 - momentum_) * run_mean_.w[ic] + momentum_ * mu);
        run_var_.w[ic] = static_cast<T>((1.0 - momentum_) * run_var_.w[ic] + momentum_ * unbiased);
      } else {
        mean = run_mean_.w[ic];
        inv_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var_.w[ic]) + eps_));
      }
      T g = gamma_.w[ic], b = beta_.w[ic];
      for (int in = 0; in < x.n; ++in) {
        const T* px = x.channel(in, ic);
        T* py = y.channel(in, ic);
        T* ph = train ? xhat_.channel(in, ic) : nullptr;
        for (std::size_t i = 0; i < plane; ++i) {
          T xh = (px[i] - mean) * inv_std;
          if (train) ph[i] = xh;
          py[i] = g * xh + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!train_) throw DataError("batchnorm backward requires a training-mode forward");
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    std::size_t plane = dy.plane();
    double m = static_cast<double>(dy.n) * plane;
    for (int ic = 0; ic < ch_; ++ic) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (int in = 0; in < dy.n; ++in) {
        const T* pd = dy.channel(in, ic);
        const T* ph = xhat_.channel(in, ic);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += static_cast<double>(pd[i]);
          sum_dy_xh += static_cast<double>(pd[i]) * ph[i];
        }
      }
      gamma_.g[ic] += static_cast<T>(sum_dy_xh);
      beta_.g[ic] += static_cast<T>(sum_dy);
      double g_inv_m = static_cast<double>(gamma_.w[ic]) * inv_std_[ic] / m;
      for (int in = 0; in < dy.n; ++in) {
        const T* pd = dy.channel(in, ic);
        const T* ph = xhat_.channel(in, ic);
        T* px = dx.channel(in, ic);
        for (std::size_t i = 0; i < plane; ++i)
          px[i] = static_cast<T>(g_inv_m * (m * pd[i] - sum_dy - ph[i] * sum_dy_xh));
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&gamma_, &beta_, &run_mean_, &run_var_}; }

 private:
  int ch_;
  double momentum_, eps_;
  Param<T> gamma_, beta_, run_mean_, run_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool train_ = false;
};

// ---------------------------------------------------------------------------
// Stateless activations and reshaping ops
// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_.assign(x.size(), 0);
    Tensor<T> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
      bool pos = x.v[i] > T(0);
      mask_[i] = pos;
      y.v[i] = pos ? x.v[i] : T(0);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] = mask_[i] ? dy.v[i] : T(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

template <typename T>
inline Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  Tensor<T> y(x.n, x.c, x.h * factor, x.w * factor);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const T* src = x.channel(in, ic);
      T* dst = y.channel(in, ic);
      for (int iy = 0; iy < y.h; ++iy)
        for (int ix = 0; ix < y.w; ++ix)
          dst[static_cast<std::size_t>(iy) * y.w + ix] =
              src[static_cast<std::size_t>(iy / factor) * x.w + ix / factor];
    }
  return y;
}

template <typename T>
inline Tensor<T> upsample_nearest_backward(const Tensor<T>& dy, int factor) {
  Tensor<T> dx(dy.n, dy.c, dy.h / factor, dy.w / factor);
  for (int in = 0; in < dy.n; ++in)
    for (int ic = 0; ic < dy.c; ++ic) {
      const T* src = dy.channel(in, ic);
      T* dst = dx.channel(in, ic);
      for (int iy = 0; iy < dy.h; ++iy)
        for (int ix = 0; ix < dy.w; ++ix)
          dst[static_cast<std::size_t>(iy / factor) * dx.w + ix / factor] +=
              src[static_cast<std::size_t>(iy) * dy.w + ix];
    }
  return dx;
}

/// Average pooling to a fixed output grid; input dims must be divisible by
/// the target dims.
template <typename T>
inline Tensor<T> avg_pool_to(const Tensor<T>& x, int th, int tw) {
  if (x.h % th != 0 || x.w % tw != 0)
    throw DataError("avg_pool_to: input not divisible by target grid");
  int fy = x.h / th, fx = x.w / tw;
  Tensor<T> y(x.n, x.c, th, tw);
  T inv = T(1) / static_cast<T>(fy * fx);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const T* src = x.channel(in, ic);
      T* dst = y.channel(in, ic);
      for (int oy = 0; oy < th; ++oy)
        for (int ox = 0; ox < tw; ++ox) {
          T acc = T(0);
          for (int ky = 0; ky < fy; ++ky)
            for (int kx = 0; kx < fx; ++kx)
              acc += src[static_cast<std::size_t>(oy * fy + ky) * x.w + ox * fx + kx];
          dst[static_cast<std::size_t>(oy) * tw + ox] = acc * inv;
        }
    }
  return y;
}

template <typename T>
inline Tensor<T> avg_pool_to_backward(const Tensor<T>& dy, int xh, int xw) {
  int fy = xh / dy.h, fx = xw / dy.w;
  Tensor<T> dx(dy.n, dy.c, xh, xw);
  T inv = T(1) / static_cast<T>(fy * fx);
  for (int in = 0; in < dy.n; ++in)
    for (int ic = 0; ic < dy.c; ++ic) {
      const T* src = dy.channel(in, ic);
      T* dst = dx.channel(in, ic);
      for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox) {
          T v = src[static_cast<std::size_t>(oy) * dy.w + ox] * inv;
          for (int ky = 0; ky < fy; ++ky)
            for (int kx = 0; kx < fx; ++kx)
              dst[static_cast<std::size_t>(oy * fy + ky) * xw + ox * fx + kx] = v;
        }
    }
  return dx;
}

template <typename T>
inline Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw DataError("concat_channels: spatial/batch mismatch");
  Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int in = 0; in < a.n; ++in) {
    std::copy(a.channel(in, 0), a.channel(in, 0) + a.sample_stride(), y.channel(in, 0));
    std::copy(b.channel(in, 0), b.channel(in, 0) + b.sample_stride(), y.channel(in, a.c));
  }
  return y;
}

template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int ca) {
  Tensor<T> da(dy.n, ca, dy.h, dy.w), db(dy.n, dy.c - ca, dy.h, dy.w);
  for (int in = 0; in < dy.n; ++in) {
    std::copy(dy.channel(in, 0), dy.channel(in, 0) + da.sample_stride(), da.channel(in, 0));
    std::copy(dy.channel(in, ca), dy.channel(in, ca) + db.sample_stride(), db.channel(in, 0));
  }
  return {std::move(da), std::move(db)};
}

// ---------------------------------------------------------------------------
// Linear map on per-sample vectors ({N, D, 1, 1} tensors)
// ---------------------------------------------------------------------------

template <typename T>
class Linear {
 public:
  Linear(const std::string& name, int in_dim, int out_dim, bool bias, std::uint64_t seed)
      : in_(in_dim), out_(out_dim),
        weight_(name + ".weight", {out_dim, in_dim}),
        bias_(name + ".bias", {out_dim}),
        has_bias_(bias) {
    init_normal(weight_, seed, std::sqrt(1.0 / in_dim));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    x_cache_ = x;
    Tensor<T> y(x.n, out_, 1, 1);
    Eigen::Map<const MatRM<T>> W(weight_.w.data(), out_, in_);
    Eigen::Map<const MatRM<T>> X(x.data(), x.n, in_);
    Eigen::Map<MatRM<T>> Y(y.data(), x.n, out_);
    Y.noalias() = X * W.transpose();
    if (has_bias_)
      for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < out_; ++o) y.v[static_cast<std::size_t>(in) * out_ + o] += bias_.w[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, in_, 1, 1);
    Eigen::Map<const MatRM<T>> W(weight_.w.data(), out_, in_);
    Eigen::Map<MatRM<T>> dW(weight_.g.data(), out_, in_);
    Eigen::Map<const MatRM<T>> dY(dy.data(), dy.n, out_);
    Eigen::Map<const MatRM<T>> X(x_cache_.data(), dy.n, in_);
    Eigen::Map<MatRM<T>> dX(dx.data(), dy.n, in_);
    dW.noalias() += dY.transpose() * X;
    dX.noalias() = dY * W;
    if (has_bias_)
      for (int in = 0; in < dy.n; ++in)
        for (int o = 0; o < out_; ++o) bias_.g[o] += dy.v[static_cast<std::size_t>(in) * out_ + o];
    return dx;
  }

  std::vector<Param<T>*> params() {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }

 private:
  int in_, out_;
  Param<T> weight_, bias_;
  bool has_bias_;
  Tensor<T> x_cache_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Param<T>*> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->w.size(), 0.0);
      v_.emplace_back(p->w.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto* p : params_) std::fill(p->g.begin(), p->g.end(), T(0));
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Param<T>* p = params_[pi];
      if (p->buffer) continue;
      for (std::size_t i = 0; i < p->w.size(); ++i) {
        double g = static_cast<double>(p->g[i]);
        m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
        v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
        double mhat = m_[pi][i] / bc1;
        double vhat = v_[pi][i] / bc2;
        p->w[i] = static_cast<T>(p->w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  std::vector<Param<T>*> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Pixel-mean binary cross-entropy evaluated on logits. Fills dlogits with
/// dL/dz = (sigmoid(z) - y) / count.
template <typename T>
inline T bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>* dlogits) {
  if (!logits.same_shape(target)) throw DataError("bce: logits/target shape mismatch");
  double loss = 0.0;
  double inv_count = 1.0 / static_cast<double>(logits.size());
  if (dlogits) *dlogits = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = static_cast<double>(logits.v[i]);
    double y = static_cast<double>(target.v[i]);
    // log(1 + e^-|z|) + max(z,0) - z*y is the stable softplus form
    loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y;
    if (dlogits) {
      double s = 1.0 / (1.0 + std::exp(-z));
      dlogits->v[i] = static_cast<T>((s - y) * inv_count);
    }
  }
  return static_cast<T>(loss * inv_count);
}

/// Sigmoid clamped to the open interval so downstream log() calls stay finite
/// even in float.
template <typename T>
inline T sigmoid_prob(T z) {
  T s = T(1) / (T(1) + std::exp(-z));
  const T lo = static_cast<T>(1e-7);
  const T hi = T(1) - static_cast<T>(1e-7);
  return std::min(hi, std::max(lo, s));
}

}  // namespace ctxseg::nn
