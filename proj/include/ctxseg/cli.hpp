#pragma once

#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/data.hpp"
#include "ctxseg/eval.hpp"
#include "ctxseg/memory.hpp"
#include "ctxseg/pipeline.hpp"

namespace ctxseg::cli {

namespace detail {

inline std::vector<std::string> split_commas(const std::string& s, const char* what) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (cur.empty()) throw UsageError(std::string("empty element in ") + what + " list");
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (cur.empty()) throw UsageError(std::string("empty element in ") + what + " list");
  out.push_back(cur);
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_commas(s, "seed")) {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      throw UsageError("bad seed value: '" + tok + "'");
    }
    if (pos != tok.size()) throw UsageError("bad seed value: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

/// A dataset directory DIR is <root>/<domain_id>; the basename names the
/// domain. Images are resized, quantized, and histogram-equalized.
inline DatasetHandle load_domain_dir(std::filesystem::path dir, int resolution) {
  if (!dir.has_filename()) dir = dir.parent_path();  // tolerate trailing '/'
  std::string domain = dir.filename().string();
  if (domain.empty()) throw UsageError("cannot derive a domain name from: " + dir.string());
  return preprocess_dataset(load_dataset(dir.parent_path(), domain, "train", resolution));
}

/// Deterministic split: lexicographic id order, last floor(n/4) held out.
inline DomainData carve_domain(const DatasetHandle& full) {
  std::size_t n = full.samples.size();
  std::size_t n_test = n / 4;
  if (n_test == 0 || n - n_test == 0)
    throw DataError("domain '" + full.domain_id + "' has " + std::to_string(n) +
                    " samples; need at least 4 to carve a test split");
  DomainData d;
  d.name = full.domain_id;
  d.train = subset(full, 0, n - n_test, "train");
  d.test = subset(full, n - n_test, n_test, "test");
  return d;
}

struct SynthArgs {
  std::string out;
  int n = 0;
  std::uint64_t seed = 0;
  double gamma = 1.0;
  bool invert = false;
  double noise = 0.0;
  double bias = 0.0;
  double deform = 0.0;
};

inline void run_synth(const SynthArgs& a) {
  namespace fs = std::filesystem;
  fs::path dir = a.out;
  if (!dir.has_filename()) dir = dir.parent_path();
  std::string domain = dir.filename().string();
  if (domain.empty()) throw UsageError("cannot derive a domain name from: " + a.out);
  ShiftSpec shift{a.gamma, a.invert, a.noise, a.bias, a.deform};
  DatasetHandle h = synth_domain(a.n, shift, a.seed, kDefaultResolution, domain);
  save_dataset(h, dir.parent_path());
}

struct TrainArgs {
  std::string variant, source, config, out;
};

inline void run_train(const TrainArgs& a) {
  Variant v = variant_from_string(a.variant);
  if (v == Variant::TransferLearnt)
    throw UsageError("train accepts noda, cn1 or cn2; transfer-learnt models are produced by eval");
  TrainConfig cfg = load_config(a.config);
  DatasetHandle data = load_domain_dir(a.source, cfg.resolution);
  TrainOutput out = train_pipeline(v, data, cfg);
  save_pipeline(out.pipeline, a.out);
}

struct BuildMemoryArgs {
  std::string bundle, data, variant, out;
};

inline void run_build_memory(const BuildMemoryArgs& a) {
  Variant v = variant_from_string(a.variant);
  if (v != Variant::ContextNet1 && v != Variant::ContextNet2)
    throw UsageError("build-memory accepts cn1 or cn2; '" + a.variant + "' keeps no memory");
  Pipeline p = load_pipeline(a.bundle);
  if (p.variant != v)
    throw UsageError("bundle holds a '" + std::string(to_string(p.variant)) +
                     "' model, not '" + a.variant + "'");
  DatasetHandle data = load_domain_dir(a.data, p.config.resolution);
  DomainMemory mem = build_memory(p, data, p.config.memory_capacity);
  save_memory(mem, a.out);
}

struct DeployArgs {
  std::string bundle, memory, images, masks, policy, out;
};

inline void run_deploy(const DeployArgs& a) {
  namespace fs = std::filesystem;
  Pipeline p = load_pipeline(a.bundle);
  InsertionPolicy policy = policy_from_string(a.policy);

  DomainMemory mem;
  if (p.conditioned()) {
    if (a.memory.empty())
      throw UsageError("a conditioned bundle needs --memory");
    mem = load_memory(a.memory);
  } else {
    if (!a.memory.empty())
      throw UsageError("an unconditioned bundle keeps no memory; drop --memory");
    if (policy != InsertionPolicy::Never)
      throw UsageError("an unconditioned bundle cannot insert records; use --policy never");
  }

  fs::path images_dir = a.images;
  if (!fs::is_directory(images_dir))
    throw DataError("not a directory: " + images_dir.string());
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw DataError("no .png images in: " + images_dir.string());

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "deploy.jsonl", std::ios::binary | std::ios::trunc);
  int res = p.config.resolution;
  for (const auto& stem : stems) {
    ImageSample s;
    s.id = stem;
    s.domain_id = p.conditioned() ? mem.domain_id() : "deploy";
    Image raw = read_png_gray(images_dir / (stem + ".png"));
    s.image = preprocess(ctxseg::detail::quantize16(resize_bilinear(raw, res, res)));
    if (!a.masks.empty()) {
      fs::path mp = fs::path(a.masks) / (stem + ".png");
      if (fs::exists(mp)) {
        Image mraw = read_png_gray(mp);
        if (mraw.h != raw.h || mraw.w != raw.w)
          throw DataError("image/mask dimension mismatch for: " + mp.string());
        s.mask = resize_nearest(ctxseg::detail::binarize_nonzero(mraw), res, res);
      }
    }

    nlohmann::json rec{{"id", s.id}, {"annotated", s.mask.has_value()}};
    Mask pred;
    if (p.conditioned()) {
      DeployStepResult r = deploy_step(p, mem, s, policy);
      pred = std::move(r.prediction);
      rec["inserted"] = r.inserted;
      rec["skipped_unannotated"] = r.skipped_unannotated;
      rec["memory_size"] = mem.size();
    } else {
      pred = infer_sample(p, s.image, s.id, nullptr);
      rec["inserted"] = false;
      rec["skipped_unannotated"] = false;
    }
    Mask scaled(pred.h, pred.w);
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.v[i] = pred.v[i] ? 255 : 0;
    write_png_gray8(fs::path(a.out) / (stem + ".png"), scaled);
    log << rec.dump() << "\n";
  }
  if (p.conditioned()) save_memory(mem, fs::path(a.out) / "memory.ctxm");
}

struct EvalArgs {
  std::string source, targets, config, seeds, out;
  bool dump_cases = false;
};

inline void run_eval(const EvalArgs& a) {
  TrainConfig cfg = load_config(a.config);
  std::vector<std::uint64_t> seeds = parse_seeds(a.seeds);
  DomainData source = carve_domain(load_domain_dir(a.source, cfg.resolution));
  std::vector<DomainData> targets;
  for (const auto& dir : split_commas(a.targets, "target"))
    targets.push_back(carve_domain(load_domain_dir(dir, cfg.resolution)));
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = i + 1; j < targets.size(); ++j)
      if (targets[i].name == targets[j].name)
        throw UsageError("target directories must have distinct basenames; saw '" +
                         targets[i].name + "' twice");
  BenchmarkOutput out = run_benchmark(source, targets, cfg, seeds, a.dump_cases);
  emit_report(out.report, a.out, a.dump_cases ? &out.dumps : nullptr);
}

struct AblateArgs {
  std::string axis, grid, source, targets, config, seeds = "1,2,3", out;
};

inline void run_ablate(const AblateArgs& a) {
  namespace fs = std::filesystem;
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
  std::vector<std::uint64_t> seeds = parse_seeds(a.seeds);
  std::vector<std::string> grid = split_commas(a.grid, "grid");
  DomainData source = carve_domain(load_domain_dir(a.source, cfg.resolution));
  std::vector<std::string> target_dirs = split_commas(a.targets, "target");
  for (const auto& dir : target_dirs) {
    DomainData target = carve_domain(load_domain_dir(dir, cfg.resolution));
    AblationReport rep = ablate(source, target, cfg, seeds, a.axis, grid);
    fs::path out_dir = target_dirs.size() == 1 ? fs::path(a.out) : fs::path(a.out) / target.name;
    emit_ablation(rep, out_dir);
  }
}

}  // namespace detail

/// Entry point shared by the binary and the tests. `args` excludes the
/// program name. Exit codes: 0 ok, 1 usage, 2 data, 3 internal.
inline int run(std::vector<std::string> args) {
  CLI::App app{"memory-conditioned segmentation: train, adapt and evaluate"};
  app.name("ctxseg");
  app.require_subcommand(1);

  detail::SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic domain dataset");
  s_synth->add_option("--out", synth.out, "dataset directory (basename names the domain)")->required();
  s_synth->add_option("--n", synth.n, "number of samples")->required();
  s_synth->add_option("--seed", synth.seed, "generator seed")->required();
  s_synth->add_option("--gamma", synth.gamma, "gamma shift");
  s_synth->add_flag("--invert", synth.invert, "invert intensities");
  s_synth->add_option("--noise", synth.noise, "additive noise sigma");
  s_synth->add_option("--bias", synth.bias, "smooth bias field amplitude");
  s_synth->add_option("--deform", synth.deform, "deformation magnitude in pixels");
  s_synth->callback([&] { detail::run_synth(synth); });

  detail::TrainArgs train;
  auto* s_train = app.add_subcommand("train", "train a model variant on a source dataset");
  s_train->add_option("--variant", train.variant, "noda|cn1|cn2")->required();
  s_train->add_option("--source", train.source, "source dataset directory")->required();
  s_train->add_option("--config", train.config, "key=value config file")->required();
  s_train->add_option("--out", train.out, "output bundle path")->required();
  s_train->callback([&] { detail::run_train(train); });

  detail::BuildMemoryArgs bm;
  auto* s_bm = app.add_subcommand("build-memory", "populate a domain memory from a dataset");
  s_bm->add_option("--bundle", bm.bundle, "trained model bundle")->required();
  s_bm->add_option("--data", bm.data, "dataset directory")->required();
  s_bm->add_option("--variant", bm.variant, "cn1|cn2")->required();
  s_bm->add_option("--out", bm.out, "output memory file")->required();
  s_bm->callback([&] { detail::run_build_memory(bm); });

  detail::DeployArgs deploy;
  auto* s_dep = app.add_subcommand("deploy", "segment a stream of images, updating the memory");
  s_dep->add_option("--bundle", deploy.bundle, "trained model bundle")->required();
  s_dep->add_option("--memory", deploy.memory, "domain memory file (conditioned bundles)");
  s_dep->add_option("--images", deploy.images, "directory of .png images")->required();
  s_dep->add_option("--masks", deploy.masks, "directory of same-stem .png annotations");
  s_dep->add_option("--policy", deploy.policy, "always|only-annotated|never")->required();
  s_dep->add_option("--out", deploy.out, "output directory")->required();
  s_dep->callback([&] { detail::run_deploy(deploy); });

  detail::EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "run the four-method adaptation benchmark");
  s_eval->add_option("--source", eval.source, "source dataset directory")->required();
  s_eval->add_option("--targets", eval.targets, "comma-separated target dataset directories")->required();
  s_eval->add_option("--config", eval.config, "key=value config file")->required();
  s_eval->add_option("--seeds", eval.seeds, "comma-separated seeds")->required();
  s_eval->add_option("--out", eval.out, "report directory")->required();
  s_eval->add_flag("--dump-cases", eval.dump_cases, "write per-case side-by-side panels");
  s_eval->callback([&] { detail::run_eval(eval); });

  detail::AblateArgs ab;
  auto* s_ab = app.add_subcommand("ablate", "sweep one axis of the conditioned model");
  s_ab->add_option("--axis", ab.axis, "context_size|memory_size|operator")->required();
  s_ab->add_option("--grid", ab.grid, "comma-separated grid values ('full' = unbounded memory)")->required();
  s_ab->add_option("--source", ab.source, "source dataset directory")->required();
  s_ab->add_option("--targets", ab.targets, "comma-separated target dataset directories")->required();
  s_ab->add_option("--config", ab.config, "key=value config file (defaults apply if omitted)");
  s_ab->add_option("--seeds", ab.seeds, "comma-separated seeds (default 1,2,3)");
  s_ab->add_option("--out", ab.out, "report directory")->required();
  s_ab->callback([&] { detail::run_ablate(ab); });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
    return 0;
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace ctxseg::cli
