#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ctxseg/common.hpp"

namespace ctxseg {

enum class MemoryVariant : std::uint8_t { TextureOnly = 0, TextureShape = 1 };

inline const char* to_string(MemoryVariant v) {
  return v == MemoryVariant::TextureOnly ? "texture-only" : "texture+shape";
}

enum class Aggregation { Average, Sum, Concat };

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "average") return Aggregation::Average;
  if (s == "sum") return Aggregation::Sum;
  if (s == "concat") return Aggregation::Concat;
  throw UsageError("unknown aggregation method: " + s);
}

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Average: return "average";
    case Aggregation::Sum: return "sum";
    default: return "concat";
  }
}

struct MemoryDims {
  int dq = 0;
  int dt = 0;
  int dg = 0;  // 0 when the variant is texture-only

  bool operator==(const MemoryDims&) const = default;
};

/// One observed sample: wavelet query key plus context features.
struct MemoryRecord {
  std::string id;
  std::vector<float> q;
  std::vector<float> t;
  std::vector<float> g;  // present iff the owning memory is texture+shape
  std::uint64_t seq = 0;

  bool operator==(const MemoryRecord&) const = default;
};

struct ContextQueryResult {
  std::vector<std::string> support_ids;       // the context set, nearest first
  std::vector<double> distances;              // matching, non-decreasing
  std::vector<std::vector<float>> context_matrix;  // one row per support record
  std::vector<float> aggregated;              // the context vector C_v
};

/// Elementwise mean / sum, or row-major concatenation zero-padded to
/// `concat_slots` rows so the output width is fixed regardless of support
/// set size.
inline std::vector<float> aggregate(const std::vector<std::vector<float>>& rows,
                                    Aggregation method, int concat_slots = 0) {
  if (rows.empty()) throw DataError("aggregate: empty context matrix");
  std::size_t width = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != width) throw DataError("aggregate: ragged context rows");

  if (method == Aggregation::Concat) {
    if (concat_slots < static_cast<int>(rows.size()))
      throw DataError("aggregate: more rows than concat slots");
    std::vector<float> out(width * static_cast<std::size_t>(concat_slots), 0.0f);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(rows[i].begin(), rows[i].end(), out.begin() + static_cast<std::ptrdiff_t>(i * width));
    return out;
  }

  std::vector<float> out(width, 0.0f);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < width; ++i) out[i] += r[i];
  if (method == Aggregation::Average) {
    float inv = 1.0f / static_cast<float>(rows.size());
    for (float& v : out) v *= inv;
  }
  return out;
}

/// Per-domain external memory with exact linear-scan nearest-neighbor
/// retrieval. Reads never observe partial inserts; insert/evict is the only
/// mutation and existing records are never modified.
class DomainMemory {
 public:
  DomainMemory() = default;
  DomainMemory(std::string domain_id, MemoryVariant variant, MemoryDims dims,
               std::string extractor_id, std::size_t capacity = 0)
      : domain_id_(std::move(domain_id)),
        variant_(variant),
        dims_(dims),
        extractor_id_(std::move(extractor_id)),
        capacity_(capacity) {}

  const std::string& domain_id() const { return domain_id_; }
  MemoryVariant variant() const { return variant_; }
  const MemoryDims& dims() const { return dims_; }
  const std::string& extractor_id() const { return extractor_id_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& id) const { return ids_.count(id) != 0; }
  const std::vector<MemoryRecord>& records() const { return records_; }

  /// Width of one context row: texture features, plus shape features for the
  /// supervised variant.
  int context_width() const {
    return dims_.dt + (variant_ == MemoryVariant::TextureShape ? dims_.dg : 0);
  }

  void insert(MemoryRecord rec) {
    if (ids_.count(rec.id))
      throw DataError("memory insert: duplicate id '" + rec.id + "'");
    if (static_cast<int>(rec.q.size()) != dims_.dq ||
        static_cast<int>(rec.t.size()) != dims_.dt)
      throw DataError("memory insert: feature dimension mismatch for '" + rec.id + "'");
    bool has_g = !rec.g.empty();
    if (variant_ == MemoryVariant::TextureOnly && has_g)
      throw DataError("memory insert: variant mismatch, unexpected shape feature on '" +
                      rec.id + "'");
    if (variant_ == MemoryVariant::TextureShape &&
        (!has_g || static_cast<int>(rec.g.size()) != dims_.dg))
      throw DataError("memory insert: variant mismatch, missing shape feature on '" +
                      rec.id + "'");

    rec.seq = next_seq_++;
    ids_.insert(rec.id);
    records_.push_back(std::move(rec));
    if (capacity_ > 0 && records_.size() > capacity_) {
      // FIFO eviction: records are stored in seq order, oldest first
      ids_.erase(records_.front().id);
      records_.erase(records_.begin());
    }
  }

  /// Exact Euclidean T-NN over all records except `exclude_id`. Ties break
  /// toward the smaller seq. An empty (or fully excluded) memory yields an
  /// empty support set and an all-zero context vector of the right width.
  ContextQueryResult retrieve(const std::vector<float>& q, int T,
                              const std::optional<std::string>& exclude_id,
                              Aggregation method) const {
    if (T < 1) throw UsageError("retrieve: T must be >= 1");
    if (static_cast<int>(q.size()) != dims_.dq)
      throw DataError("retrieve: query dimension mismatch");

    struct Hit {
      double d2;
      std::uint64_t seq;
      std::size_t idx;
    };
    std::vector<Hit> hits;
    hits.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& rec = records_[i];
      if (exclude_id && rec.id == *exclude_id) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) {
        double diff = static_cast<double>(q[k]) - static_cast<double>(rec.q[k]);
        d2 += diff * diff;
      }
      hits.push_back({d2, rec.seq, i});
    }

    auto better = [](const Hit& a, const Hit& b) {
      return a.d2 != b.d2 ? a.d2 < b.d2 : a.seq < b.seq;
    };
    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(T), hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep),
                      hits.end(), better);
    hits.resize(keep);

    ContextQueryResult res;
    for (const auto& h : hits) {
      const auto& rec = records_[h.idx];
      res.support_ids.push_back(rec.id);
      res.distances.push_back(std::sqrt(h.d2));
      std::vector<float> row = rec.t;
      row.insert(row.end(), rec.g.begin(), rec.g.end());
      res.context_matrix.push_back(std::move(row));
    }
    if (res.context_matrix.empty()) {
      std::size_t width = static_cast<std::size_t>(context_width());
      if (method == Aggregation::Concat) width *= static_cast<std::size_t>(T);
      res.aggregated.assign(width, 0.0f);
    } else {
      res.aggregated = aggregate(res.context_matrix, method, T);
    }
    return res;
  }

 private:
  std::string domain_id_;
  MemoryVariant variant_ = MemoryVariant::TextureOnly;
  MemoryDims dims_;
  std::string extractor_id_;
  std::size_t capacity_ = 0;  // 0 = unbounded
  std::uint64_t next_seq_ = 0;
  std::vector<MemoryRecord> records_;
  std::unordered_set<std::string> ids_;

  friend DomainMemory load_memory(const std::filesystem::path&);
};

// ---------------------------------------------------------------------------
// Memory file: "CTXM" magic, format version, header, fixed-width float32
// little-endian feature blocks per record, trailing whole-file CRC32.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kMemoryFormatVersion = 1;

inline void save_memory(const DomainMemory& memory, const std::filesystem::path& path) {
  std::ostringstream body;
  body.write("CTXM", 4);
  io::put_u32(body, kMemoryFormatVersion);
  io::put_string(body, memory.domain_id());
  body.put(static_cast<char>(memory.variant()));
  io::put_u32(body, static_cast<std::uint32_t>(memory.dims().dq));
  io::put_u32(body, static_cast<std::uint32_t>(memory.dims().dt));
  io::put_u32(body, static_cast<std::uint32_t>(memory.dims().dg));
  io::put_u64(body, memory.records().size());
  io::put_string(body, memory.extractor_id());
  for (const auto& rec : memory.records()) {
    io::put_string(body, rec.id);
    io::put_u64(body, rec.seq);
    for (float v : rec.q) io::put_f32(body, v);
    for (float v : rec.t) io::put_f32(body, v);
    for (float v : rec.g) io::put_f32(body, v);
  }
  std::string bytes = body.str();
  std::uint32_t crc = crc32_of(bytes.data(), bytes.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write memory file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  io::put_u32(out, crc);
  if (!out) throw DataError("memory file write failed: " + path.string());
}

inline DomainMemory load_memory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open memory file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw TruncatedError("memory file truncated: " + path.string());

  std::string payload = bytes.substr(0, bytes.size() - 4);
  std::istringstream trailer(bytes.substr(bytes.size() - 4));
  std::uint32_t stored_crc = io::get_u32(trailer);
  if (crc32_of(payload.data(), payload.size()) != stored_crc)
    throw ChecksumError("memory file checksum mismatch: " + path.string());

  std::istringstream is(payload);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CTXM", 4) != 0)
    throw FormatError("not a memory file (bad magic): " + path.string());
  std::uint32_t version = io::get_u32(is);
  if (version != kMemoryFormatVersion)
    throw VersionError("unsupported memory file version " + std::to_string(version));

  std::string domain_id = io::get_string(is);
  int variant_byte = is.get();
  if (variant_byte != 0 && variant_byte != 1)
    throw FormatError("memory file: bad variant byte");
  auto variant = static_cast<MemoryVariant>(variant_byte);
  MemoryDims dims;
  dims.dq = static_cast<int>(io::get_u32(is));
  dims.dt = static_cast<int>(io::get_u32(is));
  dims.dg = static_cast<int>(io::get_u32(is));
  std::uint64_t count = io::get_u64(is);
  std::string extractor_id = io::get_string(is);

  DomainMemory memory(domain_id, variant, dims, extractor_id);
  for (std::uint64_t i = 0; i < count; ++i) {
    MemoryRecord rec;
    rec.id = io::get_string(is);
    rec.seq = io::get_u64(is);
    rec.q.resize(static_cast<std::size_t>(dims.dq));
    rec.t.resize(static_cast<std::size_t>(dims.dt));
    if (variant == MemoryVariant::TextureShape)
      rec.g.resize(static_cast<std::size_t>(dims.dg));
    for (auto& v : rec.q) v = io::get_f32(is);
    for (auto& v : rec.t) v = io::get_f32(is);
    for (auto& v : rec.g) v = io::get_f32(is);
    memory.records_.push_back(std::move(rec));
    memory.ids_.insert(memory.records_.back().id);
    memory.next_seq_ = std::max(memory.next_seq_, memory.records_.back().seq + 1);
  }
  return memory;
}

}  // namespace ctxseg
