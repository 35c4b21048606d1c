#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"
#include "ctxseg/nn.hpp"
#include "ctxseg/tensor.hpp"

namespace ctxseg {

enum class EmbeddingOperator { Sum, Average, Concat };

inline EmbeddingOperator operator_from_string(const std::string& s) {
  if (s == "sum") return EmbeddingOperator::Sum;
  if (s == "average") return EmbeddingOperator::Average;
  if (s == "concat") return EmbeddingOperator::Concat;
  throw UsageError("unknown embedding operator: " + s);
}

inline const char* to_string(EmbeddingOperator op) {
  switch (op) {
    case EmbeddingOperator::Sum: return "sum";
    case EmbeddingOperator::Average: return "average";
    default: return "concat";
  }
}

/// Combine a bottleneck map with an already-projected context vector tiled
/// across every spatial position.
template <typename T>
inline Tensor<T> embed_context(const Tensor<T>& bottleneck, const Tensor<T>& projected,
                               EmbeddingOperator op) {
  if (projected.n != bottleneck.n || projected.h != 1 || projected.w != 1)
    throw DataError("embed_context: projected context must be one vector per sample");
  if (op != EmbeddingOperator::Concat && projected.c != bottleneck.c)
    throw DataError("embed_context: sum/average need projected width == channels");
  int out_c = op == EmbeddingOperator::Concat ? bottleneck.c + projected.c : bottleneck.c;
  Tensor<T> y(bottleneck.n, out_c, bottleneck.h, bottleneck.w);
  std::size_t plane = bottleneck.plane();
  for (int in = 0; in < bottleneck.n; ++in) {
    for (int ic = 0; ic < bottleneck.c; ++ic) {
      const T* src = bottleneck.channel(in, ic);
      T* dst = y.channel(in, ic);
      switch (op) {
        case EmbeddingOperator::Sum: {
          T cv = projected.at(in, ic, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + cv;
          break;
        }
        case EmbeddingOperator::Average: {
          T cv = projected.at(in, ic, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] + cv) / T(2);
          break;
        }
        case EmbeddingOperator::Concat:
          std::copy(src, src + plane, dst);
          break;
      }
    }
    if (op == EmbeddingOperator::Concat)
      for (int pc = 0; pc < projected.c; ++pc) {
        T cv = projected.at(in, pc, 0, 0);
        T* dst = y.channel(in, bottleneck.c + pc);
        std::fill(dst, dst + plane, cv);
      }
  }
  return y;
}

struct SegNetConfig {
  int in_channels = 1;
  int context_dim = 0;  // width of the raw aggregated context vector; 0 = unconditioned
  EmbeddingOperator op = EmbeddingOperator::Average;
};

/// U-Net-style encoder-decoder: four stride-2 encoder convolutions (widths
/// 16/32/64/128), four decoder convolutions with nearest upsampling and skip
/// concatenations, batch norm plus ReLU everywhere except the logit layer.
/// An optional context vector conditions the bottleneck through a bias-free
/// linear projection (so an all-zero context projects to exactly zero and,
/// under the sum operator, inference reduces to the unconditioned network).
template <typename T>
class SegNet {
 public:
  static constexpr int kWidths[4] = {16, 32, 64, 128};

  SegNet(SegNetConfig cfg, std::uint64_t seed)
      : cfg_(cfg),
        e1_("enc1.conv", cfg.in_channels, 16, 3, 2, 1, false, seed),
        b1_("enc1.bn", 16),
        e2_("enc2.conv", 16, 32, 3, 2, 1, false, seed),
        b2_("enc2.bn", 32),
        e3_("enc3.conv", 32, 64, 3, 2, 1, false, seed),
        b3_("enc3.bn", 64),
        e4_("enc4.conv", 64, 128, 3, 2, 1, false, seed),
        b4_("enc4.bn", 128),
        d1_("dec1.conv", bottleneck_channels() + 64, 64, 3, 1, 1, false, seed),
        db1_("dec1.bn", 64),
        d2_("dec2.conv", 64 + 32, 32, 3, 1, 1, false, seed),
        db2_("dec2.bn", 32),
        d3_("dec3.conv", 32 + 16, 16, 3, 1, 1, false, seed),
        db3_("dec3.bn", 16),
        d4_("dec4.conv", 16, 1, 3, 1, 1, true, seed) {
    if (cfg.context_dim > 0)
      proj_ = std::make_unique<nn::Linear<T>>("ctx_proj", cfg.context_dim, 128, false, seed);
  }

  const SegNetConfig& config() const { return cfg_; }

  int bottleneck_channels() const {
    return cfg_.context_dim > 0 && cfg_.op == EmbeddingOperator::Concat ? 256 : 128;
  }

  /// Logits for a batch. `context` is {N, context_dim, 1, 1} and ignored when
  /// the model is unconditioned. Caches activations for backward() when
  /// `train` is set.
  Tensor<T> forward_logits(const Tensor<T>& x, const Tensor<T>& context, bool train) {
    if (x.h % 16 != 0 || x.w % 16 != 0)
      throw DataError("segnet: input dims must be divisible by 16");
    train_ = train;
    Tensor<T> a1 = r1_.forward(b1_.forward(e1_.forward(x), train));
    Tensor<T> a2 = r2_.forward(b2_.forward(e2_.forward(a1), train));
    Tensor<T> a3 = r3_.forward(b3_.forward(e3_.forward(a2), train));
    Tensor<T> a4 = r4_.forward(b4_.forward(e4_.forward(a3), train));

    Tensor<T> bott;
    if (cfg_.context_dim > 0) {
      if (context.n != x.n || context.c != cfg_.context_dim)
        throw DataError("segnet: context batch/width mismatch");
      bool all_zero = true;
      for (T v : context.v)
        if (v != T(0)) { all_zero = false; break; }
      if (!train && all_zero && cfg_.op == EmbeddingOperator::Sum) {
        // empty-memory fast path: projection of zero is exactly zero
        bott = a4;
        ctx_used_ = false;
      } else {
        Tensor<T> p = proj_->forward(context);
        bott = embed_context(a4, p, cfg_.op);
        ctx_used_ = true;
      }
    } else {
      bott = a4;
      ctx_used_ = false;
    }

    Tensor<T> u1 = nn::upsample_nearest(bott, 2);
    Tensor<T> c1 = nn::concat_channels(u1, a3);
    Tensor<T> o1 = dr1_.forward(db1_.forward(d1_.forward(c1), train));
    Tensor<T> u2 = nn::upsample_nearest(o1, 2);
    Tensor<T> c2 = nn::concat_channels(u2, a2);
    Tensor<T> o2 = dr2_.forward(db2_.forward(d2_.forward(c2), train));
    Tensor<T> u3 = nn::upsample_nearest(o2, 2);
    Tensor<T> c3 = nn::concat_channels(u3, a1);
    Tensor<T> o3 = dr3_.forward(db3_.forward(d3_.forward(c3), train));
    Tensor<T> u4 = nn::upsample_nearest(o3, 2);
    return d4_.forward(u4);
  }

  /// Backpropagate from dL/dlogits. Accumulates parameter gradients and
  /// captures dL/dcontext for the conditioned variants.
  void backward(const Tensor<T>& dlogits) {
    if (!train_) throw DataError("segnet backward requires a training-mode forward");
    Tensor<T> du4 = d4_.backward(dlogits);
    Tensor<T> do3 = nn::upsample_nearest_backward(du4, 2);
    Tensor<T> dc3 = db3_.backward(dr3_.backward(do3));
    Tensor<T> dc3x = d3_.backward(dc3);
    auto [du3, da1] = nn::split_channels(dc3x, 32);
    Tensor<T> do2 = nn::upsample_nearest_backward(du3, 2);
    Tensor<T> dc2x = d2_.backward(db2_.backward(dr2_.backward(do2)));
    auto [du2, da2] = nn::split_channels(dc2x, 64);
    Tensor<T> do1 = nn::upsample_nearest_backward(du2, 2);
    Tensor<T> dc1x = d1_.backward(db1_.backward(dr1_.backward(do1)));
    auto [du1, da3] = nn::split_channels(dc1x, bottleneck_channels());
    Tensor<T> dbott = nn::upsample_nearest_backward(du1, 2);

    Tensor<T> da4;
    if (ctx_used_) {
      Tensor<T> dp(dbott.n, 128, 1, 1);
      switch (cfg_.op) {
        case EmbeddingOperator::Sum:
        case EmbeddingOperator::Average: {
          T scale = cfg_.op == EmbeddingOperator::Average ? T(0.5) : T(1);
          da4 = Tensor<T>(dbott.n, 128, dbott.h, dbott.w);
          for (int in = 0; in < dbott.n; ++in)
            for (int ic = 0; ic < 128; ++ic) {
              const T* src = dbott.channel(in, ic);
              T* dst = da4.channel(in, ic);
              T acc = T(0);
              for (std::size_t i = 0; i < dbott.plane(); ++i) {
                dst[i] = src[i] * scale;
                acc += src[i];
              }
              dp.at(in, ic, 0, 0) = acc * scale;
            }
          break;
        }
        case EmbeddingOperator::Concat: {
          auto [dmap, dtile] = nn::split_channels(dbott, 128);
          da4 = std::move(dmap);
          for (int in = 0; in < dtile.n; ++in)
            for (int ic = 0; ic < dtile.c; ++ic) {
              const T* src = dtile.channel(in, ic);
              T acc = T(0);
              for (std::size_t i = 0; i < dtile.plane(); ++i) acc += src[i];
              dp.at(in, ic, 0, 0) = acc;
            }
          break;
        }
      }
      dcontext_ = proj_->backward(dp);
    } else {
      da4 = std::move(dbott);
      dcontext_ = Tensor<T>();
    }

    Tensor<T> dx3 = e4_.backward(b4_.backward(r4_.backward(da4)));
    for (std::size_t i = 0; i < dx3.size(); ++i) dx3.v[i] += da3.v[i];
    Tensor<T> dx2 = e3_.backward(b3_.backward(r3_.backward(dx3)));
    for (std::size_t i = 0; i < dx2.size(); ++i) dx2.v[i] += da2.v[i];
    Tensor<T> dx1 = e2_.backward(b2_.backward(r2_.backward(dx2)));
    for (std::size_t i = 0; i < dx1.size(); ++i) dx1.v[i] += da1.v[i];
    e1_.backward(b1_.backward(r1_.backward(dx1)));
  }

  /// dL/dcontext from the latest backward(); empty for unconditioned models.
  const Tensor<T>& context_grad() const { return dcontext_; }

  /// One optimization target: forward + loss (+ backward when grads wanted).
  T loss(const Tensor<T>& x, const Tensor<T>& target, const Tensor<T>& context,
         bool with_grad) {
    Tensor<T> logits = forward_logits(x, context, true);
    Tensor<T> dlogits;
    T l = nn::bce_with_logits(logits, target, with_grad ? &dlogits : nullptr);
    if (with_grad) backward(dlogits);
    return l;
  }

  /// Eval-mode probabilities in the open interval (0, 1).
  Tensor<T> infer(const Tensor<T>& x, const Tensor<T>& context) {
    Tensor<T> logits = forward_logits(x, context, false);
    for (auto& v : logits.v) v = nn::sigmoid_prob(v);
    return logits;
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    auto add = [&out](std::vector<nn::Param<T>*> ps) {
      out.insert(out.end(), ps.begin(), ps.end());
    };
    add(e1_.params()); add(b1_.params());
    add(e2_.params()); add(b2_.params());
    add(e3_.params()); add(b3_.params());
    add(e4_.params()); add(b4_.params());
    if (proj_) add(proj_->params());
    add(d1_.params()); add(db1_.params());
    add(d2_.params()); add(db2_.params());
    add(d3_.params()); add(db3_.params());
    add(d4_.params());
    return out;
  }

 private:
  SegNetConfig cfg_;
  nn::Conv2d<T> e1_; nn::BatchNorm2d<T> b1_; nn::ReLU<T> r1_;
  nn::Conv2d<T> e2_; nn::BatchNorm2d<T> b2_; nn::ReLU<T> r2_;
  nn::Conv2d<T> e3_; nn::BatchNorm2d<T> b3_; nn::ReLU<T> r3_;
  nn::Conv2d<T> e4_; nn::BatchNorm2d<T> b4_; nn::ReLU<T> r4_;
  std::unique_ptr<nn::Linear<T>> proj_;
  nn::Conv2d<T> d1_; nn::BatchNorm2d<T> db1_; nn::ReLU<T> dr1_;
  nn::Conv2d<T> d2_; nn::BatchNorm2d<T> db2_; nn::ReLU<T> dr2_;
  nn::Conv2d<T> d3_; nn::BatchNorm2d<T> db3_; nn::ReLU<T> dr3_;
  nn::Conv2d<T> d4_;

  bool train_ = false;
  bool ctx_used_ = false;
  Tensor<T> dcontext_;
};

// ---------------------------------------------------------------------------
// Grid <-> tensor batching helpers
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor<T> images_to_tensor(const std::vector<const Image*>& batch) {
  if (batch.empty()) throw DataError("images_to_tensor: empty batch");
  int h = batch.front()->h, w = batch.front()->w;
  Tensor<T> t(static_cast<int>(batch.size()), 1, h, w);
  for (std::size_t in = 0; in < batch.size(); ++in) {
    if (batch[in]->h != h || batch[in]->w != w)
      throw DataError("images_to_tensor: ragged batch");
    for (std::size_t i = 0; i < batch[in]->v.size(); ++i)
      t.v[in * t.sample_stride() + i] = static_cast<T>(batch[in]->v[i]);
  }
  return t;
}

template <typename T>
inline Tensor<T> masks_to_tensor(const std::vector<const Mask*>& batch) {
  if (batch.empty()) throw DataError("masks_to_tensor: empty batch");
  int h = batch.front()->h, w = batch.front()->w;
  Tensor<T> t(static_cast<int>(batch.size()), 1, h, w);
  for (std::size_t in = 0; in < batch.size(); ++in) {
    if (batch[in]->h != h || batch[in]->w != w)
      throw DataError("masks_to_tensor: ragged batch");
    for (std::size_t i = 0; i < batch[in]->v.size(); ++i)
      t.v[in * t.sample_stride() + i] = batch[in]->v[i] ? T(1) : T(0);
  }
  return t;
}

template <typename T>
inline Mask probs_to_mask(const Tensor<T>& probs, int sample) {
  Mask m(probs.h, probs.w);
  const T* src = probs.channel(sample, 0);
  for (std::size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = src[i] >= T(0.5) ? 1 : 0;
  return m;
}

template <typename T>
inline Tensor<T> context_batch(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) throw DataError("context_batch: empty batch");
  int dim = static_cast<int>(rows.front().size());
  Tensor<T> t(static_cast<int>(rows.size()), dim, 1, 1);
  for (std::size_t in = 0; in < rows.size(); ++in) {
    if (static_cast<int>(rows[in].size()) != dim)
      throw DataError("context_batch: ragged context rows");
    for (int i = 0; i < dim; ++i)
      t.v[in * static_cast<std::size_t>(dim) + i] = static_cast<T>(rows[in][i]);
  }
  return t;
}

}  // namespace ctxseg
