#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxseg/bundle.hpp"
#include "ctxseg/config.hpp"
#include "ctxseg/data.hpp"
#include "ctxseg/memory.hpp"
#include "ctxseg/sae.hpp"
#include "ctxseg/segnet.hpp"
#include "ctxseg/texture.hpp"
#include "ctxseg/wavelet.hpp"

namespace ctxseg {

enum class Variant { NoDA, ContextNet1, ContextNet2, TransferLearnt };

inline Variant variant_from_string(const std::string& s) {
  if (s == "noda") return Variant::NoDA;
  if (s == "cn1") return Variant::ContextNet1;
  if (s == "cn2") return Variant::ContextNet2;
  if (s == "tl") return Variant::TransferLearnt;
  throw UsageError("unknown variant: " + s);
}

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::NoDA: return "noda";
    case Variant::ContextNet1: return "cn1";
    case Variant::ContextNet2: return "cn2";
    default: return "tl";
  }
}

/// A trained model plus the frozen feature extractors it was trained with.
struct Pipeline {
  Variant variant = Variant::NoDA;
  TrainConfig config;
  std::unique_ptr<SegNet<float>> net;
  std::unique_ptr<TextureExtractor> texture;      // conditioned variants
  std::unique_ptr<ShapeAutoEncoder<float>> sae;   // ContextNet2 only

  bool conditioned() const {
    return variant == Variant::ContextNet1 || variant == Variant::ContextNet2;
  }

  MemoryVariant memory_variant() const {
    if (variant == Variant::ContextNet1) return MemoryVariant::TextureOnly;
    if (variant == Variant::ContextNet2) return MemoryVariant::TextureShape;
    throw UsageError("variant has no memory: " + std::string(to_string(variant)));
  }

  MemoryDims memory_dims() const {
    MemoryDims d;
    d.dq = query_feature_dim(config.resolution, kQueryLevels);
    d.dt = texture ? texture->dim() : config.texture_dim;
    d.dg = variant == Variant::ContextNet2 ? config.latent_dim : 0;
    return d;
  }

  /// Width of the aggregated context vector fed to the network's projection.
  int context_dim() const {
    if (!conditioned()) return 0;
    MemoryDims d = memory_dims();
    int row = d.dt + d.dg;
    return config.aggregation == Aggregation::Concat ? row * config.context_size : row;
  }
};

/// Features of one observed sample. ContextNet2 records need the annotation
/// for the shape latent.
inline MemoryRecord make_record(Pipeline& p, const ImageSample& sample) {
  if (!p.conditioned()) throw UsageError("records exist only for conditioned variants");
  MemoryRecord rec;
  rec.id = sample.id;
  rec.q = query_features(sample.image);
  rec.t = p.texture->extract(sample.image);
  if (p.variant == Variant::ContextNet2) {
    if (!sample.mask)
      throw DataError("sample '" + sample.id + "' has no mask; texture+shape records need annotations");
    rec.g = p.sae->encode(*sample.mask);
  }
  return rec;
}

/// Insert a record for every sample, dataset order, optional FIFO capacity.
inline DomainMemory build_memory(Pipeline& p, const DatasetHandle& data,
                                 std::size_t capacity = 0) {
  DomainMemory mem(data.domain_id, p.memory_variant(), p.memory_dims(),
                   p.texture->extractor_id(), capacity);
  for (const auto& s : data.samples) mem.insert(make_record(p, s));
  return mem;
}

namespace detail {

inline void require_annotated(const DatasetHandle& data, const char* what) {
  for (const auto& s : data.samples)
    if (!s.mask) throw DataError(std::string(what) + " requires annotated samples; '" +
                                 s.id + "' has no mask");
}

/// Mini-batch SGD over the segmentation loss. `contexts` rows align with
/// `data.samples`; pass nullptr for unconditioned models. Returns per-epoch
/// mean training loss.
inline std::vector<double> train_segnet(SegNet<float>& net, const DatasetHandle& data,
                                        const std::vector<std::vector<float>>* contexts,
                                        int epochs, int batch_size, double learning_rate,
                                        std::uint64_t seed) {
  require_annotated(data, "training");
  if (data.samples.empty()) throw DataError("training requires a non-empty dataset");
  nn::Adam<float> opt(net.params(), learning_rate);
  Rng shuffle_rng(mix64(seed, fnv1a64("segnet.shuffle")));
  std::vector<std::size_t> order(data.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> epoch_losses;
  std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::size_t stop = std::min(order.size(), start + bs);
      std::vector<const Image*> imgs;
      std::vector<const Mask*> masks;
      std::vector<std::vector<float>> ctx_rows;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = data.samples[order[i]];
        imgs.push_back(&s.image);
        masks.push_back(&*s.mask);
        if (contexts) ctx_rows.push_back((*contexts)[order[i]]);
      }
      Tensor<float> x = images_to_tensor<float>(imgs);
      Tensor<float> y = masks_to_tensor<float>(masks);
      Tensor<float> ctx = contexts ? context_batch<float>(ctx_rows) : Tensor<float>();
      opt.zero_grad();
      loss_sum += static_cast<double>(net.loss(x, y, ctx, true));
      opt.step();
      ++batches;
    }
    epoch_losses.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  return epoch_losses;
}

inline std::unique_ptr<ShapeAutoEncoder<float>> train_sae_on(
    const DatasetHandle& data, const TrainConfig& cfg) {
  require_annotated(data, "shape autoencoder training");
  std::vector<const Mask*> masks;
  for (const auto& s : data.samples) masks.push_back(&*s.mask);
  auto sae = std::make_unique<ShapeAutoEncoder<float>>(cfg.latent_dim, cfg.seed);
  if (masks.empty()) throw DataError("shape autoencoder training requires masks");

  std::vector<nn::Param<float>*> params = sae->params();
  nn::Adam<float> opt(params, cfg.learning_rate);
  Rng shuffle_rng(mix64(cfg.seed, fnv1a64("sae.shuffle")));
  std::vector<std::size_t> order(masks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.sae_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const Mask*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i)
        batch.push_back(masks[order[i]]);
      Tensor<float> x = masks_to_tensor<float>(batch);
      opt.zero_grad();
      sae->loss(x, true);
      opt.step();
    }
  }
  return sae;
}

inline std::unique_ptr<TextureExtractor> make_texture_extractor(
    const DatasetHandle& source_train, const TrainConfig& cfg) {
  if (cfg.texture_kind == "small-encoder") {
    std::vector<const Image*> imgs;
    for (const auto& s : source_train.samples) imgs.push_back(&s.image);
    return train_small_encoder(imgs, cfg.seed, cfg.batch_size, cfg.learning_rate);
  }
  // pretrained backbone: load frozen weights, fit the PCA on source features
  auto probe = std::make_unique<PretrainedBackboneExtractor>(
      std::filesystem::path(cfg.pretrained_path), 0, nullptr);
  std::vector<std::vector<float>> raw;
  raw.reserve(source_train.samples.size());
  for (const auto& s : source_train.samples) raw.push_back(probe->extract_raw(s.image));
  int pca_dim = std::min(cfg.pca_dim, kTextureDim);
  return std::make_unique<PretrainedBackboneExtractor>(
      std::filesystem::path(cfg.pretrained_path), pca_dim, &raw);
}

}  // namespace detail

/// Training output: the frozen pipeline, the source memory the conditioned
/// net was trained against, and per-epoch mean losses.
struct TrainOutput {
  Pipeline pipeline;
  std::optional<DomainMemory> source_memory;
  std::vector<double> epoch_losses;
};

/// Retrieval-conditioned (or plain) training on an annotated source split.
/// Conditioned variants first freeze their feature extractors, populate the
/// source memory, and precompute each sample's self-excluded context.
inline TrainOutput train_pipeline(Variant variant, const DatasetHandle& source_train,
                                  const TrainConfig& cfg) {
  if (variant == Variant::TransferLearnt)
    throw UsageError("transfer-learnt models come from transfer_learn(), not train_pipeline()");
  cfg.validate();
  TrainOutput out;
  Pipeline& p = out.pipeline;
  p.variant = variant;
  p.config = cfg;

  if (p.conditioned() || variant == Variant::NoDA) {
    for (const auto& s : source_train.samples)
      if (s.image.h != cfg.resolution || s.image.w != cfg.resolution)
        throw DataError("sample '" + s.id + "' resolution differs from config resolution");
  }

  std::vector<std::vector<float>> contexts;
  if (p.conditioned()) {
    p.texture = detail::make_texture_extractor(source_train, cfg);
    if (variant == Variant::ContextNet2) p.sae = detail::train_sae_on(source_train, cfg);
    out.source_memory = build_memory(p, source_train, cfg.memory_capacity);
    contexts.reserve(source_train.samples.size());
    for (const auto& s : source_train.samples) {
      std::vector<float> q = query_features(s.image);
      contexts.push_back(out.source_memory
                             ->retrieve(q, cfg.context_size, s.id, cfg.aggregation)
                             .aggregated);
    }
  }

  SegNetConfig nc;
  nc.context_dim = p.context_dim();
  nc.op = cfg.op;
  p.net = std::make_unique<SegNet<float>>(nc, cfg.seed);
  out.epoch_losses = detail::train_segnet(*p.net, source_train,
                                          p.conditioned() ? &contexts : nullptr,
                                          cfg.epochs, cfg.batch_size, cfg.learning_rate,
                                          cfg.seed);
  return out;
}

/// Deep copy (architecture + weights); optimizer state is not part of a
/// pipeline, so the copy is ready for independent fine-tuning.
inline Pipeline clone_pipeline(Pipeline& src) {
  Pipeline dst;
  dst.variant = src.variant;
  dst.config = src.config;
  dst.net = std::make_unique<SegNet<float>>(src.net->config(), src.config.seed);
  {
    auto from = src.net->params();
    auto to = dst.net->params();
    for (std::size_t i = 0; i < from.size(); ++i) to[i]->w = from[i]->w;
  }
  if (src.texture) {
    Bundle b;
    src.texture->put(b);
    if (src.texture->kind() == "small-encoder")
      dst.texture = std::make_unique<SmallEncoderExtractor>(b);
    else
      dst.texture = std::make_unique<PretrainedBackboneExtractor>(b);
  }
  if (src.sae) {
    dst.sae = std::make_unique<ShapeAutoEncoder<float>>(src.config.latent_dim, src.config.seed);
    auto from = src.sae->params();
    auto to = dst.sae->params();
    for (std::size_t i = 0; i < from.size(); ++i) to[i]->w = from[i]->w;
  }
  return dst;
}

/// The upper baseline: fine-tune a trained unconditioned model on annotated
/// target samples for config.tl_epochs.
inline Pipeline transfer_learn(Pipeline& base, const DatasetHandle& target_train,
                               const TrainConfig& cfg) {
  if (base.conditioned())
    throw UsageError("transfer learning fine-tunes the unconditioned baseline");
  Pipeline tuned = clone_pipeline(base);
  tuned.variant = Variant::TransferLearnt;
  tuned.config = cfg;
  if (cfg.tl_epochs > 0)
    detail::train_segnet(*tuned.net, target_train, nullptr, cfg.tl_epochs, cfg.batch_size,
                         cfg.learning_rate, mix64(cfg.seed, fnv1a64("transfer")));
  return tuned;
}

/// Segment one preprocessed image. Conditioned variants retrieve their
/// context from `memory`, always excluding the image's own id so an already
/// inserted sample never supports itself.
inline Mask infer_sample(Pipeline& p, const Image& image, const std::string& id,
                         const DomainMemory* memory) {
  std::vector<const Image*> one{&image};
  Tensor<float> x = images_to_tensor<float>(one);
  Tensor<float> ctx;
  if (p.conditioned()) {
    if (!memory) throw DataError("conditioned inference requires a memory");
    if (memory->extractor_id() != p.texture->extractor_id())
      throw DataError("memory was built with extractor '" + memory->extractor_id() +
                      "' but the bundle uses '" + p.texture->extractor_id() + "'");
    std::vector<float> q = query_features(image);
    auto res = memory->retrieve(q, p.config.context_size, id, p.config.aggregation);
    ctx = context_batch<float>({res.aggregated});
  }
  Tensor<float> probs = p.net->infer(x, ctx);
  return probs_to_mask(probs, 0);
}

// ---------------------------------------------------------------------------
// Deployment protocol: images arrive one at a time; predict first, then
// insert a record according to the insertion policy.
// ---------------------------------------------------------------------------

enum class InsertionPolicy { Always, OnlyAnnotated, Never };

inline InsertionPolicy policy_from_string(const std::string& s) {
  if (s == "always") return InsertionPolicy::Always;
  if (s == "only-annotated") return InsertionPolicy::OnlyAnnotated;
  if (s == "never") return InsertionPolicy::Never;
  throw UsageError("unknown insertion policy: " + s);
}

struct DeployStepResult {
  Mask prediction;
  bool inserted = false;
  /// Set when the policy wanted an insert but the record could not be built
  /// (ContextNet2 without an annotation).
  bool skipped_unannotated = false;
};

inline DeployStepResult deploy_step(Pipeline& p, DomainMemory& memory,
                                    const ImageSample& sample, InsertionPolicy policy) {
  if (!p.conditioned()) throw UsageError("deployment memory updates need a conditioned model");
  DeployStepResult res;
  res.prediction = infer_sample(p, sample.image, sample.id, &memory);

  bool want_insert = policy == InsertionPolicy::Always ||
                     (policy == InsertionPolicy::OnlyAnnotated && sample.mask.has_value());
  // Re-deploying an already-observed image is idempotent, never a failure.
  if (!want_insert || memory.contains(sample.id)) return res;
  if (p.variant == Variant::ContextNet2 && !sample.mask) {
    res.skipped_unannotated = true;
    return res;
  }
  memory.insert(make_record(p, sample));
  res.inserted = true;
  return res;
}

// ---------------------------------------------------------------------------
// Bundle persistence
// ---------------------------------------------------------------------------

inline void save_pipeline(Pipeline& p, const std::filesystem::path& path) {
  Bundle b;
  b.meta["kind"] = "model";
  b.meta["variant"] = to_string(p.variant);
  b.meta["config"] = p.config.to_json();
  if (p.texture) {
    b.meta["texture_kind"] = p.texture->kind();
    b.meta["extractor_id"] = p.texture->extractor_id();
    p.texture->put(b);
  }
  put_params(b, p.net->params());
  if (p.sae) put_params(b, p.sae->params());
  b.save(path);
}

inline Pipeline load_pipeline(const std::filesystem::path& path) {
  Bundle b = Bundle::load(path);
  if (b.meta.value("kind", "") != "model")
    throw FormatError("not a model bundle: " + path.string());
  Pipeline p;
  p.variant = variant_from_string(b.meta.at("variant").get<std::string>());
  p.config = TrainConfig::from_json(b.meta.at("config"));
  if (p.conditioned()) {
    std::string kind = b.meta.at("texture_kind").get<std::string>();
    if (kind == "small-encoder")
      p.texture = std::make_unique<SmallEncoderExtractor>(b);
    else
      p.texture = std::make_unique<PretrainedBackboneExtractor>(b);
    if (p.variant == Variant::ContextNet2) {
      p.sae = std::make_unique<ShapeAutoEncoder<float>>(p.config.latent_dim, p.config.seed);
      get_params(b, p.sae->params());
    }
  }
  SegNetConfig nc;
  nc.context_dim = p.context_dim();
  nc.op = p.config.op;
  p.net = std::make_unique<SegNet<float>>(nc, p.config.seed);
  get_params(b, p.net->params());
  return p;
}

}  // namespace ctxseg
