#pragma once

#include <cstdint>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"
#include "ctxseg/nn.hpp"
#include "ctxseg/tensor.hpp"

namespace ctxseg {

constexpr int kDefaultLatentDim = 256;

/// Shape autoencoder over binary masks. Three stride-2 convolutions, a 1x1
/// projection pooled onto a fixed 4x4 grid whose flattening is the latent
/// (so latent_dim must be divisible by 16), and a mirrored decoder. Widths
/// are chosen to keep the parameter count near 10k.
template <typename T>
class ShapeAutoEncoder {
 public:
  static int checked_cp(int latent_dim) {
    if (latent_dim < 16 || latent_dim % 16 != 0)
      throw UsageError("latent_dim must be a positive multiple of 16");
    return latent_dim / 16;
  }

  ShapeAutoEncoder(int latent_dim, std::uint64_t seed)
      : latent_dim_(latent_dim), cp_(checked_cp(latent_dim)),
        e1_("sae.enc1.conv", 1, 8, 3, 2, 1, true, seed),
        e2_("sae.enc2.conv", 8, 16, 3, 2, 1, true, seed),
        e3_("sae.enc3.conv", 16, 16, 3, 2, 1, true, seed),
        ep_("sae.enc.proj", 16, cp_, 1, 1, 0, true, seed),
        dp_("sae.dec.proj", cp_, 16, 1, 1, 0, true, seed),
        d1_("sae.dec1.conv", 16, 16, 3, 1, 1, true, seed),
        d2_("sae.dec2.conv", 16, 8, 3, 1, 1, true, seed),
        d3_("sae.dec3.conv", 8, 1, 3, 1, 1, true, seed) {}

  int latent_dim() const { return latent_dim_; }

  std::size_t param_count() {
    std::size_t total = 0;
    for (const auto* p : params()) total += p->w.size();
    return total;
  }

  /// Latent batch {N, latent_dim, 1, 1}. Input dims must be divisible by 32.
  Tensor<T> encode_batch(const Tensor<T>& x) {
    if (x.h % 32 != 0 || x.w % 32 != 0)
      throw DataError("sae: input dims must be divisible by 32");
    enc_h_ = x.h / 8;
    enc_w_ = x.w / 8;
    Tensor<T> h1 = r1_.forward(e1_.forward(x));
    Tensor<T> h2 = r2_.forward(e2_.forward(h1));
    Tensor<T> h3 = r3_.forward(e3_.forward(h2));
    Tensor<T> p = ep_.forward(h3);
    Tensor<T> pooled = nn::avg_pool_to(p, 4, 4);
    Tensor<T> latent;
    latent.n = pooled.n; latent.c = latent_dim_; latent.h = 1; latent.w = 1;
    latent.v = std::move(pooled.v);
    return latent;
  }

  Tensor<T> decode_logits(const Tensor<T>& latent, int out_h, int out_w) {
    if (latent.c != latent_dim_) throw DataError("sae: latent width mismatch");
    if (out_h != out_w || out_h % 32 != 0)
      throw DataError("sae: output dims must be square and divisible by 32");
    dec_factor_ = out_h / 32;
    Tensor<T> grid;
    grid.n = latent.n; grid.c = cp_; grid.h = 4; grid.w = 4;
    grid.v = latent.v;
    Tensor<T> g = rp_.forward(dp_.forward(grid));
    Tensor<T> u0 = dec_factor_ > 1 ? nn::upsample_nearest(g, dec_factor_) : g;
    Tensor<T> o1 = dr1_.forward(d1_.forward(nn::upsample_nearest(u0, 2)));
    Tensor<T> o2 = dr2_.forward(d2_.forward(nn::upsample_nearest(o1, 2)));
    return d3_.forward(nn::upsample_nearest(o2, 2));
  }

  /// Reconstruction training step: BCE(decode(encode(x)), x) with gradients.
  T loss(const Tensor<T>& x, bool with_grad) {
    Tensor<T> latent = encode_batch(x);
    Tensor<T> logits = decode_logits(latent, x.h, x.w);
    Tensor<T> dlogits;
    T l = nn::bce_with_logits(logits, x, with_grad ? &dlogits : nullptr);
    if (!with_grad) return l;

    Tensor<T> do2 = nn::upsample_nearest_backward(d3_.backward(dlogits), 2);
    Tensor<T> do1 = nn::upsample_nearest_backward(d2_.backward(dr2_.backward(do2)), 2);
    Tensor<T> du0 = nn::upsample_nearest_backward(d1_.backward(dr1_.backward(do1)), 2);
    Tensor<T> dg = dec_factor_ > 1 ? nn::upsample_nearest_backward(du0, dec_factor_) : std::move(du0);
    Tensor<T> dgrid = dp_.backward(rp_.backward(dg));

    Tensor<T> dpooled;
    dpooled.n = dgrid.n; dpooled.c = cp_; dpooled.h = 4; dpooled.w = 4;
    dpooled.v = std::move(dgrid.v);
    Tensor<T> dpm = nn::avg_pool_to_backward(dpooled, enc_h_, enc_w_);
    Tensor<T> dh3 = ep_.backward(dpm);
    Tensor<T> dh2 = e2_.backward(r2_.backward(e3_.backward(r3_.backward(dh3))));
    e1_.backward(r1_.backward(dh2));
    return l;
  }

  std::vector<float> encode(const Mask& m) {
    std::vector<const Mask*> one{&m};
    Tensor<T> x = masks_to_tensor_local(one);
    Tensor<T> latent = encode_batch(x);
    std::vector<float> out(latent.v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(latent.v[i]);
    return out;
  }

  Mask decode(const std::vector<float>& latent, int res) {
    Tensor<T> l(1, latent_dim_, 1, 1);
    for (std::size_t i = 0; i < latent.size(); ++i) l.v[i] = static_cast<T>(latent[i]);
    Tensor<T> logits = decode_logits(l, res, res);
    Mask m(res, res);
    for (std::size_t i = 0; i < m.v.size(); ++i)
      m.v[i] = logits.v[i] >= T(0) ? 1 : 0;  // sigmoid(z) >= 0.5 iff z >= 0
    return m;
  }

  Mask reconstruct(const Mask& m) { return decode(encode(m), m.h); }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for (auto* layer : {&e1_, &e2_, &e3_, &ep_, &dp_, &d1_, &d2_, &d3_}) {
      auto ps = layer->params();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
  }

 private:
  static Tensor<T> masks_to_tensor_local(const std::vector<const Mask*>& batch) {
    Tensor<T> t(static_cast<int>(batch.size()), 1, batch.front()->h, batch.front()->w);
    for (std::size_t in = 0; in < batch.size(); ++in)
      for (std::size_t i = 0; i < batch[in]->v.size(); ++i)
        t.v[in * t.sample_stride() + i] = batch[in]->v[i] ? T(1) : T(0);
    return t;
  }

  int latent_dim_, cp_;
  nn::Conv2d<T> e1_; nn::ReLU<T> r1_;
  nn::Conv2d<T> e2_; nn::ReLU<T> r2_;
  nn::Conv2d<T> e3_; nn::ReLU<T> r3_;
  nn::Conv2d<T> ep_;
  nn::Conv2d<T> dp_; nn::ReLU<T> rp_;
  nn::Conv2d<T> d1_; nn::ReLU<T> dr1_;
  nn::Conv2d<T> d2_; nn::ReLU<T> dr2_;
  nn::Conv2d<T> d3_;

  int enc_h_ = 0, enc_w_ = 0, dec_factor_ = 1;
};

}  // namespace ctxseg
