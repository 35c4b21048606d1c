#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ctxseg/bundle.hpp"
#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"
#include "ctxseg/nn.hpp"
#include "ctxseg/segnet.hpp"

namespace ctxseg {

constexpr int kTextureDim = 128;
constexpr int kTextureEncoderEpochs = 30;

/// Maps a preprocessed image to a fixed-length texture descriptor.
class TextureExtractor {
 public:
  virtual ~TextureExtractor() = default;
  virtual std::vector<float> extract(const Image& image) = 0;
  virtual int dim() const = 0;
  virtual std::string kind() const = 0;
  /// Stable identifier of the frozen feature map (kind + parameter checksum);
  /// memories record it so features from different extractors never mix.
  virtual std::string extractor_id() = 0;
  virtual void put(Bundle& bundle) = 0;
};

namespace detail {

/// Four stride-2 convolutions, widths 16/32/64/128. The texture descriptor is
/// the global average pool of the last map, L2-normalized.
class TextureEncoderNet {
 public:
  explicit TextureEncoderNet(std::uint64_t seed)
      : c1_("texture.enc1.conv", 1, 16, 3, 2, 1, true, seed),
        c2_("texture.enc2.conv", 16, 32, 3, 2, 1, true, seed),
        c3_("texture.enc3.conv", 32, 64, 3, 2, 1, true, seed),
        c4_("texture.enc4.conv", 64, 128, 3, 2, 1, true, seed) {}

  Tensor<float> forward(const Tensor<float>& x) {
    if (x.h % 16 != 0 || x.w % 16 != 0)
      throw DataError("texture encoder: input dims must be divisible by 16");
    return r4_.forward(c4_.forward(r3_.forward(c3_.forward(
        r2_.forward(c2_.forward(r1_.forward(c1_.forward(x))))))));
  }

  Tensor<float> backward(const Tensor<float>& dy) {
    return c1_.backward(r1_.backward(c2_.backward(r2_.backward(
        c3_.backward(r3_.backward(c4_.backward(r4_.backward(dy))))))));
  }

  std::vector<nn::Param<float>*> params() {
    std::vector<nn::Param<float>*> out;
    for (auto* c : {&c1_, &c2_, &c3_, &c4_}) {
      auto ps = c->params();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
  }

 private:
  nn::Conv2d<float> c1_; nn::ReLU<float> r1_;
  nn::Conv2d<float> c2_; nn::ReLU<float> r2_;
  nn::Conv2d<float> c3_; nn::ReLU<float> r3_;
  nn::Conv2d<float> c4_; nn::ReLU<float> r4_;
};

inline std::vector<float> gap_features(const Tensor<float>& map, int sample) {
  std::vector<float> out(static_cast<std::size_t>(map.c));
  float inv = 1.0f / static_cast<float>(map.plane());
  for (int ic = 0; ic < map.c; ++ic) {
    const float* p = map.channel(sample, ic);
    double acc = 0.0;
    for (std::size_t i = 0; i < map.plane(); ++i) acc += p[i];
    out[static_cast<std::size_t>(ic)] = static_cast<float>(acc * inv);
  }
  return out;
}

inline void l2_normalize(std::vector<float>& v) {
  double n2 = 0.0;
  for (float x : v) n2 += static_cast<double>(x) * x;
  if (n2 <= 0.0) return;
  float inv = static_cast<float>(1.0 / std::sqrt(n2));
  for (float& x : v) x *= inv;
}

inline std::string params_checksum(const std::vector<nn::Param<float>*>& params) {
  std::ostringstream os;
  for (const auto* p : params)
    for (float v : p->w) io::put_f32(os, v);
  std::string bytes = os.str();
  return hex32(crc32_of(bytes.data(), bytes.size()));
}

}  // namespace detail

/// Extractor backed by an encoder trained on source images as half of a
/// reconstruction autoencoder (the decoder is discarded after training).
class SmallEncoderExtractor : public TextureExtractor {
 public:
  explicit SmallEncoderExtractor(std::uint64_t seed) : net_(seed) {}

  explicit SmallEncoderExtractor(const Bundle& bundle) : net_(0) {
    get_params(bundle, net_.params());
  }

  std::vector<float> extract(const Image& image) override {
    std::vector<const Image*> one{&image};
    Tensor<float> map = net_.forward(images_to_tensor<float>(one));
    auto f = detail::gap_features(map, 0);
    detail::l2_normalize(f);
    return f;
  }

  int dim() const override { return kTextureDim; }
  std::string kind() const override { return "small-encoder"; }

  /// Computed once on first use; extractors are frozen after training.
  std::string extractor_id() override {
    if (id_cache_.empty())
      id_cache_ = "small-encoder-" + detail::params_checksum(net_.params());
    return id_cache_;
  }

  void put(Bundle& bundle) override { put_params(bundle, net_.params()); }

  detail::TextureEncoderNet& net() { return net_; }

 private:
  detail::TextureEncoderNet net_;
  std::string id_cache_;
};

/// Reconstruction training for the small encoder: mirrored decoder, MSE loss,
/// a fixed number of epochs. Returns the trained extractor (decoder dropped).
inline std::unique_ptr<SmallEncoderExtractor> train_small_encoder(
    const std::vector<const Image*>& images, std::uint64_t seed, int batch_size,
    double learning_rate = 1e-3) {
  if (images.empty()) throw DataError("texture encoder training: no images");
  auto extractor = std::make_unique<SmallEncoderExtractor>(seed);
  auto& enc = extractor->net();

  struct Decoder {
    nn::Conv2d<float> c1, c2, c3, c4;
    nn::ReLU<float> r1, r2, r3;
    explicit Decoder(std::uint64_t s)
        : c1("texture.dec1.conv", 128, 64, 3, 1, 1, true, s),
          c2("texture.dec2.conv", 64, 32, 3, 1, 1, true, s),
          c3("texture.dec3.conv", 32, 16, 3, 1, 1, true, s),
          c4("texture.dec4.conv", 16, 1, 3, 1, 1, true, s) {}
    Tensor<float> forward(const Tensor<float>& b) {
      Tensor<float> o1 = r1.forward(c1.forward(nn::upsample_nearest(b, 2)));
      Tensor<float> o2 = r2.forward(c2.forward(nn::upsample_nearest(o1, 2)));
      Tensor<float> o3 = r3.forward(c3.forward(nn::upsample_nearest(o2, 2)));
      return c4.forward(nn::upsample_nearest(o3, 2));
    }
    Tensor<float> backward(const Tensor<float>& dy) {
      Tensor<float> d3 = nn::upsample_nearest_backward(c4.backward(dy), 2);
      Tensor<float> d2 = nn::upsample_nearest_backward(c3.backward(r3.backward(d3)), 2);
      Tensor<float> d1 = nn::upsample_nearest_backward(c2.backward(r2.backward(d2)), 2);
      return nn::upsample_nearest_backward(c1.backward(r1.backward(d1)), 2);
    }
    std::vector<nn::Param<float>*> params() {
      std::vector<nn::Param<float>*> out;
      for (auto* c : {&c1, &c2, &c3, &c4}) {
        auto ps = c->params();
        out.insert(out.end(), ps.begin(), ps.end());
      }
      return out;
    }
  } dec(seed);

  std::vector<nn::Param<float>*> all = enc.params();
  auto dps = dec.params();
  all.insert(all.end(), dps.begin(), dps.end());
  nn::Adam<float> opt(all, learning_rate);
  Rng shuffle_rng(mix64(seed, fnv1a64("texture.shuffle")));

  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  int bs = std::max(1, batch_size);
  for (int epoch = 0; epoch < kTextureEncoderEpochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(bs)) {
      std::vector<const Image*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i)
        batch.push_back(images[order[i]]);
      Tensor<float> x = images_to_tensor<float>(batch);
      opt.zero_grad();
      Tensor<float> recon = dec.forward(enc.forward(x));
      Tensor<float> dr(recon.n, recon.c, recon.h, recon.w);
      float inv = 1.0f / static_cast<float>(recon.size());
      for (std::size_t i = 0; i < recon.size(); ++i)
        dr.v[i] = 2.0f * (recon.v[i] - x.v[i]) * inv;
      enc.backward(dec.backward(dr));
      opt.step();
    }
  }
  return extractor;
}

// ---------------------------------------------------------------------------
// Pretrained backbone + PCA reduction
// ---------------------------------------------------------------------------

struct PcaModel {
  std::vector<float> mean;        // D
  std::vector<float> components;  // out_dim x D, row-major
  int in_dim = 0;
  int out_dim = 0;

  std::vector<float> project(const std::vector<float>& x) const {
    if (static_cast<int>(x.size()) != in_dim) throw DataError("pca: input dim mismatch");
    std::vector<float> y(static_cast<std::size_t>(out_dim), 0.0f);
    for (int o = 0; o < out_dim; ++o) {
      double acc = 0.0;
      const float* row = components.data() + static_cast<std::size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i)
        acc += static_cast<double>(row[i]) * (x[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]);
      y[static_cast<std::size_t>(o)] = static_cast<float>(acc);
    }
    return y;
  }
};

/// Principal components of a feature collection, eigenvalue-descending. The
/// requested dimension is clamped to the feature dimension. Component signs
/// are fixed so each row's largest-magnitude entry is positive.
inline PcaModel fit_pca(const std::vector<std::vector<float>>& features, int out_dim) {
  if (features.empty()) throw DataError("pca: no features to fit");
  int d = static_cast<int>(features.front().size());
  int n = static_cast<int>(features.size());
  out_dim = std::min(out_dim, d);
  if (out_dim < 1) throw UsageError("pca: output dimension must be >= 1");

  Eigen::MatrixXd X(n, d);
  for (int r = 0; r < n; ++r) {
    if (static_cast<int>(features[static_cast<std::size_t>(r)].size()) != d)
      throw DataError("pca: ragged feature rows");
    for (int c = 0; c < d; ++c) X(r, c) = features[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  Eigen::MatrixXd cov = (X.transpose() * X) / std::max(1, n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DataError("pca: eigen decomposition failed");

  PcaModel model;
  model.in_dim = d;
  model.out_dim = out_dim;
  model.mean.resize(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) model.mean[static_cast<std::size_t>(c)] = static_cast<float>(mu(c));
  model.components.resize(static_cast<std::size_t>(out_dim) * d);
  // SelfAdjointEigenSolver orders eigenvalues ascending
  for (int o = 0; o < out_dim; ++o) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - o);
    int imax = 0;
    for (int c = 1; c < d; ++c)
      if (std::abs(v(c)) > std::abs(v(imax))) imax = c;
    if (v(imax) < 0) v = -v;
    for (int c = 0; c < d; ++c)
      model.components[static_cast<std::size_t>(o) * d + c] = static_cast<float>(v(c));
  }
  return model;
}

/// Frozen backbone loaded from a weights file, optionally PCA-reduced. The
/// weights file is a bundle produced by an earlier training run (the paper's
/// large pretrained network is substituted by the same small encoder family
/// at desk scale).
class PretrainedBackboneExtractor : public TextureExtractor {
 public:
  PretrainedBackboneExtractor(const std::filesystem::path& weights_path, int pca_dim,
                              const std::vector<std::vector<float>>* fit_features)
      : net_(0) {
    if (!std::filesystem::exists(weights_path))
      throw DataError("pretrained weights unavailable at '" + weights_path.string() +
                      "'; set texture_kind=small-encoder to train an extractor from source data");
    Bundle b = Bundle::load(weights_path);
    if (b.meta.value("kind", "") != "texture-backbone")
      throw FormatError("not a texture backbone bundle: " + weights_path.string());
    get_params(b, net_.params());
    if (pca_dim > 0) {
      if (!fit_features)
        throw DataError("pretrained backbone: PCA requested but no source features supplied");
      std::vector<std::vector<float>> raw;
      raw.reserve(fit_features->size());
      for (const auto& f : *fit_features) raw.push_back(f);
      pca_ = fit_pca(raw, pca_dim);
    }
  }

  /// Restore from a model bundle that embeds the backbone and PCA tensors.
  explicit PretrainedBackboneExtractor(const Bundle& bundle) : net_(0) {
    get_params(bundle, net_.params());
    if (const TensorBlob* comp = bundle.find("texture.pca.components")) {
      pca_ = PcaModel{};
      pca_->out_dim = comp->shape.at(0);
      pca_->in_dim = comp->shape.at(1);
      pca_->components = comp->data;
      pca_->mean = bundle.at("texture.pca.mean").data;
    }
  }

  /// Raw (pre-PCA) descriptor, used to fit the PCA on source features.
  std::vector<float> extract_raw(const Image& image) {
    std::vector<const Image*> one{&image};
    Tensor<float> map = net_.forward(images_to_tensor<float>(one));
    return detail::gap_features(map, 0);
  }

  std::vector<float> extract(const Image& image) override {
    std::vector<float> f = extract_raw(image);
    if (pca_) f = pca_->project(f);
    detail::l2_normalize(f);
    return f;
  }

  int dim() const override { return pca_ ? pca_->out_dim : kTextureDim; }
  std::string kind() const override { return "pretrained-backbone"; }

  /// Computed once on first use; the backbone and PCA are frozen by design.
  std::string extractor_id() override {
    if (!id_cache_.empty()) return id_cache_;
    std::string id = "pretrained-" + detail::params_checksum(net_.params());
    if (pca_) {
      std::ostringstream os;
      for (float v : pca_->components) io::put_f32(os, v);
      for (float v : pca_->mean) io::put_f32(os, v);
      std::string bytes = os.str();
      id += "-pca" + std::to_string(pca_->out_dim) + "-" + hex32(crc32_of(bytes.data(), bytes.size()));
    }
    id_cache_ = id;
    return id;
  }

  void put(Bundle& bundle) override {
    put_params(bundle, net_.params());
    if (pca_) {
      bundle.set_tensor("texture.pca.components", {pca_->out_dim, pca_->in_dim}, pca_->components);
      bundle.set_tensor("texture.pca.mean", {pca_->in_dim}, pca_->mean);
    }
  }

 private:
  detail::TextureEncoderNet net_;
  std::optional<PcaModel> pca_;
  std::string id_cache_;
};

/// Save a trained small encoder as a standalone backbone weights file.
inline void save_texture_backbone(SmallEncoderExtractor& extractor,
                                  const std::filesystem::path& path) {
  Bundle b;
  b.meta["kind"] = "texture-backbone";
  extractor.put(b);
  b.save(path);
}

}  // namespace ctxseg
