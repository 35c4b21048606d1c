#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <ctxseg/common.hpp>
#include <ctxseg/memory.hpp>

using namespace ctxseg;
namespace fs = std::filesystem;

namespace {

MemoryRecord rand_record(const std::string& id, const MemoryDims& d, Rng& rng) {
  MemoryRecord r;
  r.id = id;
  r.q.resize(static_cast<std::size_t>(d.dq));
  r.t.resize(static_cast<std::size_t>(d.dt));
  r.g.resize(static_cast<std::size_t>(d.dg));
  for (auto& v : r.q) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (auto& v : r.t) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (auto& v : r.g) v = static_cast<float>(rng.uniform() * 2 - 1);
  return r;
}

// Exhaustive reference: stable sort on distance alone. Records arrive in
// insertion order, so stability reproduces the smaller-seq tie rule.
struct OracleHit {
  double dist;
  std::string id;
  std::vector<float> row;
};

std::vector<OracleHit> oracle_knn(const std::vector<MemoryRecord>& recs,
                                  const std::vector<float>& q, int T,
                                  const std::optional<std::string>& exclude) {
  std::vector<OracleHit> hits;
  for (const auto& r : recs) {
    if (exclude && r.id == *exclude) continue;
    double d2 = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      double diff = static_cast<double>(q[k]) - static_cast<double>(r.q[k]);
      d2 += diff * diff;
    }
    std::vector<float> row = r.t;
    row.insert(row.end(), r.g.begin(), r.g.end());
    hits.push_back({std::sqrt(d2), r.id, std::move(row)});
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const OracleHit& a, const OracleHit& b) { return a.dist < b.dist; });
  if (static_cast<int>(hits.size()) > T) hits.resize(static_cast<std::size_t>(T));
  return hits;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Rewrites the trailing CRC so header mutations are seen by the parser
// instead of the integrity check.
std::string with_fixed_crc(std::string bytes) {
  std::string payload = bytes.substr(0, bytes.size() - 4);
  std::uint32_t crc = crc32_of(payload.data(), payload.size());
  std::ostringstream os;
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  io::put_u32(os, crc);
  return os.str();
}

}  // namespace

TEST_CASE("aggregation follows the elementwise and concatenation rules") {
  std::vector<std::vector<float>> rows{{1.0f, 2.0f}, {3.0f, 6.0f}};
  auto avg = aggregate(rows, Aggregation::Average);
  CHECK(avg == std::vector<float>{2.0f, 4.0f});
  auto sum = aggregate(rows, Aggregation::Sum);
  CHECK(sum == std::vector<float>{4.0f, 8.0f});
  auto cat = aggregate(rows, Aggregation::Concat, 3);
  CHECK(cat == std::vector<float>{1.0f, 2.0f, 3.0f, 6.0f, 0.0f, 0.0f});

  CHECK_THROWS_AS(aggregate({}, Aggregation::Sum), DataError);
  CHECK_THROWS_AS(aggregate(rows, Aggregation::Concat, 1), DataError);
  CHECK_THROWS_AS(aggregate({{1.0f}, {1.0f, 2.0f}}, Aggregation::Sum), DataError);
}

TEST_CASE("retrieval matches the exhaustive oracle") {
  MemoryDims dims{12, 4, 3};
  Rng rng(2024);
  for (std::size_t n : {1u, 5u, 50u}) {
    DomainMemory mem("d", MemoryVariant::TextureShape, dims, "ex");
    std::vector<MemoryRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = rand_record("r" + std::to_string(i), dims, rng);
      recs.push_back(r);
      mem.insert(r);
    }
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<float> q(12);
      for (auto& v : q) v = static_cast<float>(rng.uniform() * 2 - 1);
      for (int T : {1, 3, 5}) {
        std::optional<std::string> exclude;
        if (trial % 2) exclude = "r" + std::to_string(trial % n);
        auto got = mem.retrieve(q, T, exclude, Aggregation::Average);
        auto want = oracle_knn(recs, q, T, exclude);
        REQUIRE(got.support_ids.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
          CHECK(got.support_ids[i] == want[i].id);
          CHECK(got.distances[i] == Catch::Approx(want[i].dist).margin(1e-12));
          CHECK(got.context_matrix[i] == want[i].row);
        }
      }
    }
  }
}

TEST_CASE("exact distance ties resolve toward the earlier record") {
  MemoryDims dims{4, 2, 0};
  DomainMemory mem("d", MemoryVariant::TextureOnly, dims, "ex");
  MemoryRecord a{"alpha", {1, 0, 0, 0}, {1, 1}, {}, 0};
  MemoryRecord b{"beta", {1, 0, 0, 0}, {2, 2}, {}, 0};
  mem.insert(b);  // inserted first despite the name
  mem.insert(a);
  auto res = mem.retrieve({0, 0, 0, 0}, 1, std::nullopt, Aggregation::Average);
  REQUIRE(res.support_ids.size() == 1);
  CHECK(res.support_ids[0] == "beta");
}

TEST_CASE("aggregated context is exact over the support rows") {
  MemoryDims dims{2, 2, 0};
  DomainMemory mem("d", MemoryVariant::TextureOnly, dims, "ex");
  mem.insert({"a", {0, 0}, {1, 2}, {}, 0});
  mem.insert({"b", {1, 0}, {3, 4}, {}, 0});
  auto avg = mem.retrieve({0, 0}, 2, std::nullopt, Aggregation::Average);
  CHECK(avg.aggregated == std::vector<float>{2.0f, 3.0f});
  auto cat = mem.retrieve({0, 0}, 3, std::nullopt, Aggregation::Concat);
  CHECK(cat.aggregated == std::vector<float>{1, 2, 3, 4, 0, 0});
  CHECK(cat.support_ids == std::vector<std::string>{"a", "b"});
}

TEST_CASE("empty or fully excluded memories produce zero context of fixed width") {
  MemoryDims dims{4, 3, 2};
  DomainMemory mem("d", MemoryVariant::TextureShape, dims, "ex");
  auto res = mem.retrieve({0, 0, 0, 0}, 3, std::nullopt, Aggregation::Average);
  CHECK(res.support_ids.empty());
  CHECK(res.aggregated == std::vector<float>(5, 0.0f));

  auto cat = mem.retrieve({0, 0, 0, 0}, 3, std::nullopt, Aggregation::Concat);
  CHECK(cat.aggregated == std::vector<float>(15, 0.0f));

  Rng rng(5);
  mem.insert(rand_record("only", dims, rng));
  auto excl = mem.retrieve({0, 0, 0, 0}, 3, std::string("only"), Aggregation::Average);
  CHECK(excl.support_ids.empty());
  CHECK(excl.aggregated == std::vector<float>(5, 0.0f));
}

TEST_CASE("capacity evicts the oldest records first") {
  MemoryDims dims{2, 1, 0};
  DomainMemory mem("d", MemoryVariant::TextureOnly, dims, "ex", 3);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) mem.insert(rand_record("r" + std::to_string(i), dims, rng));
  REQUIRE(mem.size() == 3);
  CHECK(!mem.contains("r0"));
  CHECK(!mem.contains("r1"));
  CHECK(mem.contains("r2"));
  CHECK(mem.records().front().id == "r2");
  CHECK(mem.records().back().id == "r4");
  // An evicted id may be observed again.
  mem.insert(rand_record("r0", dims, rng));
  CHECK(mem.contains("r0"));
}

TEST_CASE("insert validation rejects malformed records") {
  MemoryDims dims{4, 2, 3};
  Rng rng(3);
  DomainMemory shape("d", MemoryVariant::TextureShape, dims, "ex");
  auto ok = rand_record("a", dims, rng);
  shape.insert(ok);
  CHECK_THROWS_AS(shape.insert(ok), DataError);  // duplicate id

  auto bad_q = rand_record("b", dims, rng);
  bad_q.q.pop_back();
  CHECK_THROWS_AS(shape.insert(bad_q), DataError);

  auto no_g = rand_record("c", dims, rng);
  no_g.g.clear();
  CHECK_THROWS_AS(shape.insert(no_g), DataError);

  DomainMemory tex("d", MemoryVariant::TextureOnly, MemoryDims{4, 2, 0}, "ex");
  auto with_g = rand_record("a", MemoryDims{4, 2, 0}, rng);
  with_g.g = {1.0f};
  CHECK_THROWS_AS(tex.insert(with_g), DataError);
}

TEST_CASE("retrieve validates its arguments") {
  MemoryDims dims{4, 2, 0};
  DomainMemory mem("d", MemoryVariant::TextureOnly, dims, "ex");
  CHECK_THROWS_AS(mem.retrieve({0, 0, 0, 0}, 0, std::nullopt, Aggregation::Sum), UsageError);
  CHECK_THROWS_AS(mem.retrieve({0, 0}, 1, std::nullopt, Aggregation::Sum), DataError);
}

TEST_CASE("memory files round-trip every field") {
  MemoryDims dims{8, 3, 2};
  Rng rng(99);
  DomainMemory mem("clinic-b", MemoryVariant::TextureShape, dims, "small-encoder:abc123");
  for (int i = 0; i < 7; ++i) mem.insert(rand_record("s" + std::to_string(i), dims, rng));

  fs::path p = fs::temp_directory_path() / "ctxseg-mem-rt.ctxm";
  save_memory(mem, p);
  DomainMemory back = load_memory(p);

  CHECK(back.domain_id() == mem.domain_id());
  CHECK(back.variant() == mem.variant());
  CHECK(back.dims() == mem.dims());
  CHECK(back.extractor_id() == mem.extractor_id());
  REQUIRE(back.size() == mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) CHECK(back.records()[i] == mem.records()[i]);

  // Sequence numbering continues after reload.
  back.insert(rand_record("later", dims, rng));
  CHECK(back.records().back().seq == mem.records().back().seq + 1);

  // Saving the reloaded memory reproduces the file byte for byte.
  fs::path p2 = fs::temp_directory_path() / "ctxseg-mem-rt2.ctxm";
  DomainMemory again = load_memory(p);
  save_memory(again, p2);
  CHECK(slurp(p) == slurp(p2));
  fs::remove(p);
  fs::remove(p2);
}

TEST_CASE("memory file failure modes are distinct") {
  MemoryDims dims{4, 2, 0};
  Rng rng(7);
  DomainMemory mem("d", MemoryVariant::TextureOnly, dims, "ex");
  for (int i = 0; i < 3; ++i) mem.insert(rand_record("r" + std::to_string(i), dims, rng));
  fs::path p = fs::temp_directory_path() / "ctxseg-mem-err.ctxm";
  save_memory(mem, p);
  std::string good = slurp(p);

  SECTION("flipped payload byte fails the checksum") {
    std::string bad = good;
    bad[bad.size() / 2] ^= 0x40;
    spit(p, bad);
    CHECK_THROWS_AS(load_memory(p), ChecksumError);
  }
  SECTION("stub file is truncated") {
    spit(p, good.substr(0, 6));
    CHECK_THROWS_AS(load_memory(p), TruncatedError);
  }
  SECTION("valid checksum over a cut payload is truncated") {
    spit(p, with_fixed_crc(good.substr(0, good.size() - 20)));
    CHECK_THROWS_AS(load_memory(p), TruncatedError);
  }
  SECTION("foreign magic is a format error") {
    std::string bad = good;
    bad[0] = 'X';
    spit(p, with_fixed_crc(bad));
    CHECK_THROWS_AS(load_memory(p), FormatError);
  }
  SECTION("future version is a version error") {
    std::string bad = good;
    bad[4] = 9;  // little-endian version field follows the magic
    spit(p, with_fixed_crc(bad));
    CHECK_THROWS_AS(load_memory(p), VersionError);
  }
  SECTION("all failure types are data errors") {
    spit(p, good.substr(0, 6));
    CHECK_THROWS_AS(load_memory(p), DataError);
  }
  fs::remove(p);
}
