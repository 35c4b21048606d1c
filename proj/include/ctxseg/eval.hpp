#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/data.hpp"
#include "ctxseg/pipeline.hpp"
#include "ctxseg/plot.hpp"

namespace ctxseg {

/// 2|A∩B| / (|A| + |B|); the empty-vs-empty case scores 1.0 so a correct
/// empty prediction is not penalized.
inline double dice(const Mask& pred, const Mask& truth) {
  if (!pred.same_shape(truth)) throw DataError("dice: mask shape mismatch");
  std::uint64_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    bool pa = pred.v[i] != 0, pb = truth.v[i] != 0;
    inter += pa && pb;
    a += pa;
    b += pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// One evaluation domain: a memory-eligible (and fine-tuning) split plus a
/// held-out scoring split.
struct DomainData {
  std::string name;
  DatasetHandle train;
  DatasetHandle test;
};

struct CaseResult {
  std::string method, target, id;
  std::uint64_t seed = 0;
  double dice = 0.0;
  bool operator==(const CaseResult&) const = default;
};

struct CellResult {
  std::string method, target;
  std::uint64_t seed = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
  bool operator==(const CellResult&) const = default;
};

struct SummaryResult {
  std::string method, target;
  double median_mean_dice = 0.0;
  bool operator==(const SummaryResult&) const = default;
};

struct BenchmarkReport {
  nlohmann::json meta;
  std::vector<CellResult> cells;
  std::vector<CaseResult> cases;
  std::vector<SummaryResult> summaries;
  bool operator==(const BenchmarkReport&) const = default;

  const CellResult& cell(const std::string& method, const std::string& target,
                         std::uint64_t seed) const {
    for (const auto& c : cells)
      if (c.method == method && c.target == target && c.seed == seed) return c;
    throw DataError("report: no cell for " + method + "/" + target);
  }

  double summary_median(const std::string& method, const std::string& target) const {
    for (const auto& s : summaries)
      if (s.method == method && s.target == target) return s.median_mean_dice;
    throw DataError("report: no summary for " + method + "/" + target);
  }
};

/// Raw material for the side-by-side case panels (first seed only).
struct CaseDump {
  std::string method, target, id;
  Image image;
  Mask gt;
  Mask pred;
};

struct BenchmarkOutput {
  BenchmarkReport report;
  std::vector<CaseDump> dumps;
};

inline const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> m{"noda", "cn1", "cn2", "tl"};
  return m;
}

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("stage '" + name + "' failed: " + e.what());
  }
}

struct MethodEval {
  CellResult cell;
  std::vector<CaseResult> cases;
};

inline MethodEval evaluate_method(const std::string& method, Pipeline& p,
                                  const DomainMemory* memory, const DomainData& target,
                                  std::uint64_t seed, std::vector<CaseDump>* dumps) {
  MethodEval out;
  out.cell.method = method;
  out.cell.target = target.name;
  out.cell.seed = seed;
  double sum = 0.0, sq = 0.0;
  for (const auto& s : target.test.samples) {
    if (!s.mask) throw DataError("test sample '" + s.id + "' has no mask to score against");
    Mask pred = infer_sample(p, s.image, s.id, memory);
    double d = dice(pred, *s.mask);
    out.cases.push_back({method, target.name, s.id, seed, d});
    sum += d;
    sq += d * d;
    if (dumps) dumps->push_back({method, target.name, s.id, s.image, *s.mask, std::move(pred)});
  }
  int n = static_cast<int>(target.test.samples.size());
  if (n > 0) {
    double mean = sum / n;
    double var = std::max(0.0, sq / n - mean * mean);
    out.cell.mean = mean;
    out.cell.stddev = std::sqrt(var);
  }
  out.cell.n = n;
  return out;
}

}  // namespace detail

/// The four-method protocol: train NoDA/ContextNet1/ContextNet2 on the
/// source split, fine-tune TransferLearnt per target, populate each target's
/// memory from its eligible split, and score everything on the target test
/// splits. Per-image Dice values are averaged per cell; medians across seeds
/// land in the summaries. Passing the source itself as a target yields the
/// in-domain reference cells.
inline BenchmarkOutput run_benchmark(const DomainData& source,
                                     const std::vector<DomainData>& targets,
                                     const TrainConfig& cfg,
                                     const std::vector<std::uint64_t>& seeds,
                                     bool keep_dumps = false) {
  if (seeds.empty()) throw UsageError("run_benchmark: need at least one seed");
  if (targets.empty()) throw UsageError("run_benchmark: need at least one target");
  detail::require_annotated(source.train, "benchmark source split");

  BenchmarkOutput out;
  out.report.meta = {
      {"type", "meta"},
      {"kind", "benchmark"},
      {"format_version", 1},
      {"config", cfg.to_json()},
      {"seeds", seeds},
      {"source", source.name},
      {"dice_convention", "per-image-then-averaged"},
  };
  {
    std::vector<std::string> names;
    for (const auto& t : targets) names.push_back(t.name);
    out.report.meta["targets"] = names;
  }

  for (std::uint64_t seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    auto noda = detail::stage("train noda", [&] { return train_pipeline(Variant::NoDA, source.train, c); });
    auto cn1 = detail::stage("train cn1", [&] { return train_pipeline(Variant::ContextNet1, source.train, c); });
    auto cn2 = detail::stage("train cn2", [&] { return train_pipeline(Variant::ContextNet2, source.train, c); });

    for (const auto& target : targets) {
      Pipeline tl = detail::stage("transfer-learn for " + target.name,
                                  [&] { return transfer_learn(noda.pipeline, target.train, c); });
      DomainMemory m1 = detail::stage("build cn1 memory for " + target.name,
                                      [&] { return build_memory(cn1.pipeline, target.train, c.memory_capacity); });
      DomainMemory m2 = detail::stage("build cn2 memory for " + target.name,
                                      [&] { return build_memory(cn2.pipeline, target.train, c.memory_capacity); });

      std::vector<CaseDump>* dumps = keep_dumps && seed == seeds.front() ? &out.dumps : nullptr;
      auto run = [&](const std::string& method, Pipeline& p, const DomainMemory* mem) {
        auto ev = detail::stage("evaluate " + method + " on " + target.name, [&] {
          return detail::evaluate_method(method, p, mem, target, seed, dumps);
        });
        out.report.cells.push_back(ev.cell);
        out.report.cases.insert(out.report.cases.end(), ev.cases.begin(), ev.cases.end());
      };
      run("noda", noda.pipeline, nullptr);
      run("cn1", cn1.pipeline, &m1);
      run("cn2", cn2.pipeline, &m2);
      run("tl", tl, nullptr);
    }
  }

  for (const auto& target : targets)
    for (const auto& method : benchmark_methods()) {
      std::vector<double> means;
      for (const auto& c : out.report.cells)
        if (c.method == method && c.target == target.name) means.push_back(c.mean);
      out.report.summaries.push_back({method, target.name, median(means)});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string value;
  double median_dice = 0.0;
  std::vector<double> per_seed;
  bool operator==(const AblationRow&) const = default;
};

struct AblationReport {
  nlohmann::json meta;
  std::vector<AblationRow> rows;
  bool operator==(const AblationReport&) const = default;

  const AblationRow& row(const std::string& value) const {
    for (const auto& r : rows)
      if (r.value == value) return r;
    throw DataError("ablation report: no row for value " + value);
  }
};

/// ContextNet2 sensitivity along one axis. memory_size is inference-only
/// (models are trained once per seed and the target memory is rebuilt with a
/// FIFO capacity); context_size and operator retrain per grid value.
inline AblationReport ablate(const DomainData& source, const DomainData& target,
                             const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                             const std::string& axis, const std::vector<std::string>& grid) {
  if (grid.empty()) throw UsageError("ablation grid must not be empty");
  if (seeds.empty()) throw UsageError("ablation needs at least one seed");
  if (axis != "context_size" && axis != "memory_size" && axis != "operator")
    throw UsageError("unknown ablation axis: " + axis);

  AblationReport report;
  report.meta = {
      {"type", "meta"},
      {"kind", "ablation"},
      {"format_version", 1},
      {"axis", axis},
      {"grid", grid},
      {"config", cfg.to_json()},
      {"seeds", seeds},
      {"source", source.name},
      {"target", target.name},
      {"method", "cn2"},
  };

  auto parse_size = [&](const std::string& v) -> std::size_t {
    if (v == "full") return 0;
    try {
      int n = std::stoi(v);
      if (n < 1) throw UsageError("memory_size grid values must be positive or 'full'");
      return static_cast<std::size_t>(n);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception&) {
      throw UsageError("bad memory_size grid value: '" + v + "'");
    }
  };

  std::vector<std::vector<double>> per_value_per_seed(grid.size());
  for (std::uint64_t seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    if (axis == "memory_size") {
      auto cn2 = detail::stage("train cn2", [&] { return train_pipeline(Variant::ContextNet2, source.train, c); });
      for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        std::size_t cap = parse_size(grid[gi]);
        DomainMemory mem = build_memory(cn2.pipeline, target.train, cap);
        auto ev = detail::evaluate_method("cn2", cn2.pipeline, &mem, target, seed, nullptr);
        per_value_per_seed[gi].push_back(ev.cell.mean);
      }
    } else {
      for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        TrainConfig cv = c;
        if (axis == "context_size") {
          try {
            cv.context_size = std::stoi(grid[gi]);
          } catch (const std::exception&) {
            throw UsageError("bad context_size grid value: '" + grid[gi] + "'");
          }
          if (cv.context_size < 1) throw UsageError("context_size grid values must be >= 1");
        } else {
          cv.op = operator_from_string(grid[gi]);
        }
        auto cn2 = detail::stage("train cn2 (" + axis + "=" + grid[gi] + ")",
                                 [&] { return train_pipeline(Variant::ContextNet2, source.train, cv); });
        DomainMemory mem = build_memory(cn2.pipeline, target.train, cv.memory_capacity);
        auto ev = detail::evaluate_method("cn2", cn2.pipeline, &mem, target, seed, nullptr);
        per_value_per_seed[gi].push_back(ev.cell.mean);
      }
    }
  }

  for (std::size_t gi = 0; gi < grid.size(); ++gi)
    report.rows.push_back({grid[gi], median(per_value_per_seed[gi]), per_value_per_seed[gi]});
  return report;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// input | ground truth | prediction, separated by 2-px white gutters.
inline void write_case_panel(const std::filesystem::path& path, const Image& image,
                             const Mask& gt, const Mask& pred) {
  int h = image.h, w = image.w;
  const int gut = 2;
  plot::Canvas canvas(h, w * 3 + gut * 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto g = static_cast<std::uint8_t>(std::lround(clamp01(image.at(y, x)) * 255.0f));
      canvas.set(y, x, {g, g, g});
      std::uint8_t m1 = gt.at(y, x) ? 255 : 0;
      canvas.set(y, w + gut + x, {m1, m1, m1});
      std::uint8_t m2 = pred.at(y, x) ? 255 : 0;
      canvas.set(y, 2 * (w + gut) + x, {m2, m2, m2});
    }
  canvas.save(path);
}

namespace detail {

inline nlohmann::json cell_json(const CellResult& c) {
  return {{"type", "cell"},   {"method", c.method}, {"target", c.target}, {"seed", c.seed},
          {"mean", c.mean},   {"std", c.stddev},    {"n", c.n}};
}

inline nlohmann::json case_json(const CaseResult& c) {
  return {{"type", "case"}, {"method", c.method}, {"target", c.target},
          {"seed", c.seed}, {"id", c.id},         {"dice", c.dice}};
}

inline nlohmann::json summary_json(const SummaryResult& s) {
  return {{"type", "summary"},
          {"method", s.method},
          {"target", s.target},
          {"median_mean_dice", s.median_mean_dice}};
}

}  // namespace detail

/// Machine-readable JSONL (meta, cells, cases, summaries), a plain-text
/// table, one bar plot per target, and (when dumps are supplied) per-case
/// side-by-side panels under cases/<target>/<method>/<id>.png.
inline void emit_report(const BenchmarkReport& report, const std::filesystem::path& out_dir,
                        const std::vector<CaseDump>* dumps = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream os(out_dir / "results.jsonl", std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write report: " + (out_dir / "results.jsonl").string());
    os << report.meta.dump() << "\n";
    for (const auto& c : report.cells) os << detail::cell_json(c).dump() << "\n";
    for (const auto& c : report.cases) os << detail::case_json(c).dump() << "\n";
    for (const auto& s : report.summaries) os << detail::summary_json(s).dump() << "\n";
  }

  std::vector<std::string> targets = report.meta.at("targets").get<std::vector<std::string>>();
  {
    std::ofstream os(out_dir / "table.txt", std::ios::binary | std::ios::trunc);
    os << "Mean Dice (per-image average; median over seeds)\n";
    for (const auto& t : targets) {
      os << "\ntarget: " << t << "\n";
      char line[160];
      std::snprintf(line, sizeof line, "  %-6s %-12s %s\n", "method", "median", "per-seed means");
      os << line;
      for (const auto& m : benchmark_methods()) {
        std::string per_seed;
        for (const auto& c : report.cells)
          if (c.method == m && c.target == t) {
            char buf[32];
            std::snprintf(buf, sizeof buf, " %.4f", c.mean);
            per_seed += buf;
          }
        std::snprintf(line, sizeof line, "  %-6s %-12.4f%s\n", m.c_str(),
                      report.summary_median(m, t), per_seed.c_str());
        os << line;
      }
    }
  }

  for (const auto& t : targets) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& m : benchmark_methods()) {
      labels.push_back(m);
      values.push_back(report.summary_median(m, t));
    }
    plot::bar_chart(out_dir / ("bars_" + t + ".png"), "dice: " + t, labels, values);
  }

  if (dumps)
    for (const auto& d : *dumps) {
      fs::path dir = out_dir / "cases" / d.target / d.method;
      fs::create_directories(dir);
      write_case_panel(dir / (d.id + ".png"), d.image, d.gt, d.pred);
    }
}

inline BenchmarkReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open report: " + path.string());
  BenchmarkReport report;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("report line " + std::to_string(lineno) + " is not JSON: " + e.what());
    }
    std::string type = j.value("type", "");
    if (type == "meta") {
      report.meta = j;
    } else if (type == "cell") {
      report.cells.push_back({j.at("method").get<std::string>(), j.at("target").get<std::string>(),
                              j.at("seed").get<std::uint64_t>(), j.at("mean").get<double>(),
                              j.at("std").get<double>(), j.at("n").get<int>()});
    } else if (type == "case") {
      report.cases.push_back({j.at("method").get<std::string>(), j.at("target").get<std::string>(),
                              j.at("id").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                              j.at("dice").get<double>()});
    } else if (type == "summary") {
      report.summaries.push_back({j.at("method").get<std::string>(),
                                  j.at("target").get<std::string>(),
                                  j.at("median_mean_dice").get<double>()});
    } else {
      throw FormatError("report line " + std::to_string(lineno) + ": unknown record type '" +
                        type + "'");
    }
  }
  return report;
}

inline void emit_ablation(const AblationReport& report, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "ablation.jsonl", std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write ablation report");
  os << report.meta.dump() << "\n";
  for (const auto& r : report.rows) {
    nlohmann::json j{{"type", "row"},
                     {"value", r.value},
                     {"median_dice", r.median_dice},
                     {"per_seed", r.per_seed}};
    os << j.dump() << "\n";
  }

  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : report.rows) {
    labels.push_back(r.value);
    values.push_back(r.median_dice);
  }
  std::string axis = report.meta.value("axis", "ablation");
  plot::bar_chart(out_dir / ("ablation_" + axis + ".png"), "cn2 dice by " + axis, labels, values);
}

inline AblationReport load_ablation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ablation report: " + path.string());
  AblationReport report;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("ablation line " + std::to_string(lineno) + " is not JSON: " + e.what());
    }
    std::string type = j.value("type", "");
    if (type == "meta")
      report.meta = j;
    else if (type == "row")
      report.rows.push_back({j.at("value").get<std::string>(), j.at("median_dice").get<double>(),
                             j.at("per_seed").get<std::vector<double>>()});
    else
      throw FormatError("ablation line " + std::to_string(lineno) + ": unknown record type");
  }
  return report;
}

}  // namespace ctxseg
