#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "ctxseg/common.hpp"
#include "ctxseg/memory.hpp"
#include "ctxseg/segnet.hpp"

namespace ctxseg {

/// Training and pipeline settings. Defaults follow the reference protocol
/// (100 epochs, batch size 5, context size 5, averaged context vectors).
struct TrainConfig {
  int epochs = 100;
  int batch_size = 5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int context_size = 5;  // T nearest neighbors per retrieval
  EmbeddingOperator op = EmbeddingOperator::Average;
  Aggregation aggregation = Aggregation::Average;
  int resolution = 256;
  int latent_dim = 256;   // shape feature width D_g
  int texture_dim = 128;  // texture feature width D_t (fixed by the small encoder)
  std::string texture_kind = "small-encoder";  // or "pretrained-backbone"
  std::string pretrained_path;
  int pca_dim = 512;      // reduction for the pretrained path, clamped to D_t
  int sae_epochs = 30;
  int tl_epochs = 20;     // fine-tuning epochs for the transfer-learnt baseline
  std::size_t memory_capacity = 0;  // 0 = unbounded; otherwise FIFO eviction

  void validate() const {
    if (epochs < 0) throw UsageError("epochs must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (learning_rate <= 0) throw UsageError("learning_rate must be positive");
    if (context_size < 1) throw UsageError("context_size must be >= 1");
    if (resolution < 32 || resolution % 32 != 0)
      throw UsageError("resolution must be a multiple of 32 and >= 32");
    if (latent_dim < 16 || latent_dim % 16 != 0)
      throw UsageError("latent_dim must be a positive multiple of 16");
    if (texture_dim != 128)
      throw UsageError("texture_dim is fixed at 128 by the small-encoder architecture");
    if (texture_kind != "small-encoder" && texture_kind != "pretrained-backbone")
      throw UsageError("texture_kind must be small-encoder or pretrained-backbone");
    if (texture_kind == "pretrained-backbone" && pretrained_path.empty())
      throw UsageError("texture_kind=pretrained-backbone requires pretrained_path");
    if (pca_dim < 1) throw UsageError("pca_dim must be >= 1");
    if (sae_epochs < 0) throw UsageError("sae_epochs must be >= 0");
    if (tl_epochs < 0) throw UsageError("tl_epochs must be >= 0");
  }

  void apply(const std::string& key, const std::string& value) {
    auto as_int = [&](int lo) {
      std::size_t pos = 0;
      int v = 0;
      try {
        v = std::stoi(value, &pos);
      } catch (const std::exception&) {
        throw UsageError("config: bad integer for " + key + ": '" + value + "'");
      }
      if (pos != value.size()) throw UsageError("config: bad integer for " + key + ": '" + value + "'");
      if (v < lo) throw UsageError("config: " + key + " must be >= " + std::to_string(lo));
      return v;
    };
    auto as_double = [&]() {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        throw UsageError("config: bad number for " + key + ": '" + value + "'");
      }
      if (pos != value.size()) throw UsageError("config: bad number for " + key + ": '" + value + "'");
      return v;
    };

    if (key == "epochs") epochs = as_int(0);
    else if (key == "batch_size") batch_size = as_int(1);
    else if (key == "learning_rate") learning_rate = as_double();
    else if (key == "seed") seed = static_cast<std::uint64_t>(as_int(0));
    else if (key == "context_size") context_size = as_int(1);
    else if (key == "operator") op = operator_from_string(value);
    else if (key == "aggregation") aggregation = aggregation_from_string(value);
    else if (key == "resolution") resolution = as_int(32);
    else if (key == "latent_dim") latent_dim = as_int(16);
    else if (key == "texture_dim") texture_dim = as_int(1);
    else if (key == "texture_kind") texture_kind = value;
    else if (key == "pretrained_path") pretrained_path = value;
    else if (key == "pca_dim") pca_dim = as_int(1);
    else if (key == "sae_epochs") sae_epochs = as_int(0);
    else if (key == "tl_epochs") tl_epochs = as_int(0);
    else if (key == "memory_capacity") memory_capacity = static_cast<std::size_t>(as_int(0));
    else throw UsageError("config: unknown key '" + key + "'");
  }

  nlohmann::json to_json() const {
    return {
        {"epochs", epochs},
        {"batch_size", batch_size},
        {"learning_rate", learning_rate},
        {"seed", seed},
        {"context_size", context_size},
        {"operator", to_string(op)},
        {"aggregation", to_string(aggregation)},
        {"resolution", resolution},
        {"latent_dim", latent_dim},
        {"texture_dim", texture_dim},
        {"texture_kind", texture_kind},
        {"pretrained_path", pretrained_path},
        {"pca_dim", pca_dim},
        {"sae_epochs", sae_epochs},
        {"tl_epochs", tl_epochs},
        {"memory_capacity", memory_capacity},
    };
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.context_size = j.at("context_size").get<int>();
    c.op = operator_from_string(j.at("operator").get<std::string>());
    c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    c.resolution = j.at("resolution").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.texture_dim = j.at("texture_dim").get<int>();
    c.texture_kind = j.at("texture_kind").get<std::string>();
    c.pretrained_path = j.at("pretrained_path").get<std::string>();
    c.pca_dim = j.at("pca_dim").get<int>();
    c.sae_epochs = j.at("sae_epochs").get<int>();
    c.tl_epochs = j.at("tl_epochs").get<int>();
    c.memory_capacity = j.at("memory_capacity").get<std::size_t>();
    return c;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace detail

/// key=value lines; blank lines and #-comments allowed; unknown keys rejected.
inline TrainConfig parse_config_text(std::istream& in, TrainConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    base.apply(key, value);
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  return parse_config_text(in);
}

}  // namespace ctxseg
