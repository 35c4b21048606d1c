#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <ctxseg/cli.hpp>
#include <ctxseg/eval.hpp>
#include <ctxseg/memory.hpp>

using namespace ctxseg;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) { return cli::run(std::move(args)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

/// Datasets, a config, and trained bundles shared by the subcommand tests.
/// Built through the CLI itself so the fixture doubles as a smoke test.
struct CliFixture {
  fs::path root = fs::temp_directory_path() / "ctxseg_cli_tests";
  fs::path src = root / "data" / "src";
  fs::path tgt = root / "data" / "tgt";
  fs::path fresh = root / "data" / "fresh";
  fs::path trio = root / "data" / "trio";
  fs::path cfg = root / "run.cfg";
  fs::path noda = root / "noda.ctxb";
  fs::path cn2 = root / "cn2.ctxb";
  fs::path mem = root / "tgt.ctxm";

  CliFixture() {
    fs::remove_all(root);
    fs::create_directories(root / "data");
    std::ofstream(cfg) << "epochs=0\nsae_epochs=0\ntl_epochs=0\nresolution=32\n"
                          "batch_size=4\nlatent_dim=16\ncontext_size=2\nseed=1\n";
    must(run({"synth", "--out", src.string(), "--n", "8", "--seed", "3"}), "synth src");
    must(run({"synth", "--out", tgt.string(), "--n", "8", "--seed", "4", "--gamma", "1.8",
              "--invert"}),
         "synth tgt");
    must(run({"synth", "--out", fresh.string(), "--n", "3", "--seed", "5"}), "synth fresh");
    must(run({"synth", "--out", trio.string(), "--n", "3", "--seed", "6"}), "synth trio");
    must(run({"train", "--variant", "noda", "--source", src.string(), "--config", cfg.string(),
              "--out", noda.string()}),
         "train noda");
    must(run({"train", "--variant", "cn2", "--source", src.string(), "--config", cfg.string(),
              "--out", cn2.string()}),
         "train cn2");
    must(run({"build-memory", "--bundle", cn2.string(), "--data", tgt.string(), "--variant",
              "cn2", "--out", mem.string()}),
         "build memory");
  }

  static void must(int rc, const char* what) {
    if (rc != 0) throw std::runtime_error(std::string("cli fixture step failed: ") + what);
  }
};

const CliFixture& fx() {
  static CliFixture f;
  return f;
}

}  // namespace

TEST_CASE("help exits clean, bad invocations exit as usage errors") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"synth", "--help"}) == 0);
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"train"}) == 1);                                     // missing required flags
  CHECK(run({"synth", "--out", "/tmp/x", "--n", "two", "--seed", "1"}) == 1);
  CHECK(run({"train", "--variant", "tl", "--source", "a", "--config", "b", "--out", "c"}) == 1);
  CHECK(run({"train", "--variant", "cnx", "--source", "a", "--config", "b", "--out", "c"}) == 1);
}

TEST_CASE("synth lays out a named domain and is seed-deterministic") {
  const auto& f = fx();
  REQUIRE(fs::is_directory(f.src / "images"));
  REQUIRE(fs::is_directory(f.src / "masks"));
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(f.src / "images")) {
    CHECK(e.path().extension() == ".png");
    ++n;
  }
  CHECK(n == 8);
  CHECK(fs::exists(f.src / "images" / "src-0000.png"));
  CHECK(fs::exists(f.src / "masks" / "src-0000.png"));

  fs::path a = f.root / "det" / "rep";
  fs::path b = f.root / "det2" / "rep";
  CHECK(run({"synth", "--out", a.string(), "--n", "2", "--seed", "11"}) == 0);
  CHECK(run({"synth", "--out", (b.string() + "/"), "--n", "2", "--seed", "11"}) == 0);
  for (const char* leaf : {"images/rep-0000.png", "images/rep-0001.png", "masks/rep-0000.png"})
    CHECK(slurp(a / leaf) == slurp(b / leaf));
}

TEST_CASE("train writes loadable bundles and rejects bad inputs") {
  const auto& f = fx();
  Pipeline p = load_pipeline(f.cn2);
  CHECK(p.variant == Variant::ContextNet2);
  CHECK(p.config.resolution == 32);
  CHECK(load_pipeline(f.noda).variant == Variant::NoDA);

  CHECK(run({"train", "--variant", "noda", "--source", (f.root / "data" / "nowhere").string(),
             "--config", f.cfg.string(), "--out", (f.root / "x.ctxb").string()}) == 2);
  CHECK(run({"train", "--variant", "noda", "--source", f.src.string(), "--config",
             (f.root / "missing.cfg").string(), "--out", (f.root / "x.ctxb").string()}) == 2);

  fs::path bad_cfg = f.root / "bad.cfg";
  std::ofstream(bad_cfg) << "max_epochs=3\n";
  CHECK(run({"train", "--variant", "noda", "--source", f.src.string(), "--config",
             bad_cfg.string(), "--out", (f.root / "x.ctxb").string()}) == 1);
}

TEST_CASE("build-memory checks the variant against the bundle") {
  const auto& f = fx();
  DomainMemory m = load_memory(f.mem);
  CHECK(m.size() == 8);
  CHECK(m.domain_id() == "tgt");
  CHECK(m.variant() == MemoryVariant::TextureShape);

  fs::path out = f.root / "nope.ctxm";
  CHECK(run({"build-memory", "--bundle", f.cn2.string(), "--data", f.tgt.string(), "--variant",
             "cn1", "--out", out.string()}) == 1);
  CHECK(run({"build-memory", "--bundle", f.noda.string(), "--data", f.tgt.string(), "--variant",
             "noda", "--out", out.string()}) == 1);
  CHECK(run({"build-memory", "--bundle", (f.root / "ghost.ctxb").string(), "--data",
             f.tgt.string(), "--variant", "cn2", "--out", out.string()}) == 2);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("deploy predicts, logs, and persists the updated memory") {
  const auto& f = fx();
  fs::path out = f.root / "deploy_cn2";
  CHECK(run({"deploy", "--bundle", f.cn2.string(), "--memory", f.mem.string(), "--images",
             (f.fresh / "images").string(), "--masks", (f.fresh / "masks").string(),
             "--policy", "always", "--out", out.string()}) == 0);

  CHECK(count_lines(out / "deploy.jsonl") == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(fs::exists(out / ("fresh-000" + std::to_string(i) + ".png")));

  // All three fresh samples were annotated, so all three records landed.
  DomainMemory grown = load_memory(out / "memory.ctxm");
  CHECK(grown.size() == 8 + 3);
  CHECK(grown.contains("fresh-0000"));
  // The input memory file is untouched.
  CHECK(load_memory(f.mem).size() == 8);

  std::string log = slurp(out / "deploy.jsonl");
  CHECK(log.find("\"inserted\":true") != std::string::npos);
  CHECK(log.find("\"annotated\":true") != std::string::npos);
}

TEST_CASE("deploy policy and memory flags are cross-checked") {
  const auto& f = fx();
  fs::path out = f.root / "deploy_misc";
  CHECK(run({"deploy", "--bundle", f.noda.string(), "--images", (f.fresh / "images").string(),
             "--policy", "never", "--out", (out / "noda").string()}) == 0);
  CHECK(count_lines(out / "noda" / "deploy.jsonl") == 3);
  CHECK_FALSE(fs::exists(out / "noda" / "memory.ctxm"));

  CHECK(run({"deploy", "--bundle", f.noda.string(), "--memory", f.mem.string(), "--images",
             (f.fresh / "images").string(), "--policy", "never", "--out", out.string()}) == 1);
  CHECK(run({"deploy", "--bundle", f.noda.string(), "--images", (f.fresh / "images").string(),
             "--policy", "always", "--out", out.string()}) == 1);
  CHECK(run({"deploy", "--bundle", f.cn2.string(), "--images", (f.fresh / "images").string(),
             "--policy", "always", "--out", out.string()}) == 1);
  CHECK(run({"deploy", "--bundle", f.cn2.string(), "--memory", f.mem.string(), "--images",
             (f.root / "data" / "void").string(), "--policy", "always", "--out",
             out.string()}) == 2);
}

TEST_CASE("unannotated deploys under only-annotated do not insert") {
  const auto& f = fx();
  fs::path out = f.root / "deploy_plain";
  CHECK(run({"deploy", "--bundle", f.cn2.string(), "--memory", f.mem.string(), "--images",
             (f.fresh / "images").string(), "--policy", "only-annotated", "--out",
             out.string()}) == 0);
  DomainMemory m = load_memory(out / "memory.ctxm");
  CHECK(m.size() == 8);
  std::string log = slurp(out / "deploy.jsonl");
  CHECK(log.find("\"annotated\":false") != std::string::npos);
  CHECK(log.find("\"inserted\":true") == std::string::npos);
}

TEST_CASE("eval runs the full protocol and emits the report tree") {
  const auto& f = fx();
  fs::path out = f.root / "report";
  CHECK(run({"eval", "--source", f.src.string(), "--targets", f.tgt.string(), "--config",
             f.cfg.string(), "--seeds", "1", "--out", out.string(), "--dump-cases"}) == 0);

  BenchmarkReport rep = load_report(out / "results.jsonl");
  CHECK(rep.cells.size() == 4);        // four methods, one target, one seed
  CHECK(rep.cases.size() == 4 * 2);    // 8 samples carve a 2-sample test split
  CHECK(rep.summaries.size() == 4);
  CHECK(rep.meta.at("source") == "src");
  CHECK(fs::exists(out / "table.txt"));
  CHECK(fs::exists(out / "bars_tgt.png"));
  CHECK(fs::exists(out / "cases" / "tgt" / "cn2"));

  CHECK(run({"eval", "--source", f.src.string(), "--targets",
             f.tgt.string() + "," + f.tgt.string(), "--config", f.cfg.string(), "--seeds", "1",
             "--out", out.string()}) == 1);
  CHECK(run({"eval", "--source", f.src.string(), "--targets", f.tgt.string(), "--config",
             f.cfg.string(), "--seeds", "1,x", "--out", out.string()}) == 1);
  // Three samples cannot carve a held-out quarter.
  CHECK(run({"eval", "--source", f.trio.string(), "--targets", f.tgt.string(), "--config",
             f.cfg.string(), "--seeds", "1", "--out", out.string()}) == 2);
}

TEST_CASE("ablate writes one report per target") {
  const auto& f = fx();
  fs::path out = f.root / "ablation";
  CHECK(run({"ablate", "--axis", "memory_size", "--grid", "full,2", "--source", f.src.string(),
             "--targets", f.tgt.string(), "--config", f.cfg.string(), "--seeds", "1", "--out",
             out.string()}) == 0);
  AblationReport rep = load_ablation(out / "ablation.jsonl");
  CHECK(rep.rows.size() == 2);
  CHECK(rep.meta.at("axis") == "memory_size");
  CHECK(fs::exists(out / "ablation_memory_size.png"));

  fs::path multi = f.root / "ablation_multi";
  CHECK(run({"ablate", "--axis", "memory_size", "--grid", "full", "--source", f.src.string(),
             "--targets", f.tgt.string() + "," + f.src.string(), "--config", f.cfg.string(),
             "--seeds", "1", "--out", multi.string()}) == 0);
  CHECK(fs::exists(multi / "tgt" / "ablation.jsonl"));
  CHECK(fs::exists(multi / "src" / "ablation.jsonl"));

  CHECK(run({"ablate", "--axis", "epochs", "--grid", "1", "--source", f.src.string(),
             "--targets", f.tgt.string(), "--config", f.cfg.string(), "--seeds", "1", "--out",
             out.string()}) == 1);
  CHECK(run({"ablate", "--axis", "memory_size", "--grid", "0", "--source", f.src.string(),
             "--targets", f.tgt.string(), "--config", f.cfg.string(), "--seeds", "1", "--out",
             out.string()}) == 1);
}
