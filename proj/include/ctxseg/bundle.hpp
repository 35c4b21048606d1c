#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ctxseg/common.hpp"
#include "ctxseg/nn.hpp"

namespace ctxseg {

constexpr std::uint32_t kBundleFormatVersion = 1;

struct TensorBlob {
  std::string name;
  std::vector<int> shape;
  bool buffer = false;
  std::vector<float> data;
};

/// Checksummed tensor archive with a JSON manifest. Tensors are stored
/// name-sorted as little-endian float32 blobs, each with its own CRC32 in the
/// manifest plus a trailing whole-file CRC32, so identical contents always
/// produce identical bytes.
class Bundle {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void set_tensor(const std::string& name, std::vector<int> shape,
                  std::vector<float> data, bool buffer = false) {
    std::size_t total = 1;
    for (int d : shape) total *= static_cast<std::size_t>(d);
    if (total != data.size())
      throw DataError("bundle: shape/data size mismatch for tensor '" + name + "'");
    tensors_[name] = TensorBlob{name, std::move(shape), buffer, std::move(data)};
  }

  const TensorBlob* find(const std::string& name) const {
    auto it = tensors_.find(name);
    return it == tensors_.end() ? nullptr : &it->second;
  }

  const TensorBlob& at(const std::string& name) const {
    const TensorBlob* t = find(name);
    if (!t) throw DataError("bundle: missing tensor '" + name + "'");
    return *t;
  }

  const std::map<std::string, TensorBlob>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const {
    std::ostringstream body;
    body.write("CTXB", 4);
    io::put_u32(body, kBundleFormatVersion);

    nlohmann::json manifest;
    manifest["meta"] = meta;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [name, blob] : tensors_) {
      std::string bytes = blob_bytes(blob);
      table.push_back({{"name", name},
                       {"shape", blob.shape},
                       {"buffer", blob.buffer},
                       {"crc32", hex32(crc32_of(bytes.data(), bytes.size()))}});
    }
    manifest["tensors"] = table;
    io::put_string(body, manifest.dump());

    for (const auto& [name, blob] : tensors_) {
      std::string bytes = blob_bytes(blob);
      body.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }

    std::string bytes = body.str();
    std::uint32_t crc = crc32_of(bytes.data(), bytes.size());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write bundle: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::put_u32(out, crc);
    if (!out) throw DataError("bundle write failed: " + path.string());
  }

  static Bundle load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open bundle: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8) throw TruncatedError("bundle truncated: " + path.string());

    std::string payload = bytes.substr(0, bytes.size() - 4);
    std::istringstream trailer(bytes.substr(bytes.size() - 4));
    if (crc32_of(payload.data(), payload.size()) != io::get_u32(trailer))
      throw ChecksumError("bundle checksum mismatch: " + path.string());

    std::istringstream is(payload);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CTXB", 4) != 0)
      throw FormatError("not a bundle file (bad magic): " + path.string());
    std::uint32_t version = io::get_u32(is);
    if (version != kBundleFormatVersion)
      throw VersionError("unsupported bundle version " + std::to_string(version));

    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(io::get_string(is));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bundle manifest is not valid JSON: " + std::string(e.what()));
    }

    Bundle b;
    b.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
      TensorBlob blob;
      blob.name = entry.at("name").get<std::string>();
      blob.shape = entry.at("shape").get<std::vector<int>>();
      blob.buffer = entry.at("buffer").get<bool>();
      std::size_t total = 1;
      for (int d : blob.shape) total *= static_cast<std::size_t>(d);
      blob.data.resize(total);
      std::string raw(total * 4, '\0');
      if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size())))
        throw TruncatedError("bundle tensor data truncated: " + blob.name);
      if (hex32(crc32_of(raw.data(), raw.size())) != entry.at("crc32").get<std::string>())
        throw ChecksumError("bundle tensor checksum mismatch: " + blob.name);
      std::istringstream rs(raw);
      for (auto& v : blob.data) v = io::get_f32(rs);
      b.tensors_.emplace(blob.name, std::move(blob));
    }
    return b;
  }

 private:
  static std::string blob_bytes(const TensorBlob& blob) {
    std::ostringstream os;
    for (float v : blob.data) io::put_f32(os, v);
    return os.str();
  }

  std::map<std::string, TensorBlob> tensors_;
};

/// Snapshot a parameter set into the archive under its own names.
template <typename T>
inline void put_params(Bundle& b, const std::vector<nn::Param<T>*>& params) {
  for (const auto* p : params) {
    std::vector<float> data(p->w.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p->w[i]);
    b.set_tensor(p->name, p->shape, std::move(data), p->buffer);
  }
}

/// Restore a parameter set; every tensor must exist with a matching shape.
template <typename T>
inline void get_params(const Bundle& b, const std::vector<nn::Param<T>*>& params) {
  for (auto* p : params) {
    const TensorBlob& blob = b.at(p->name);
    if (blob.shape != p->shape)
      throw DataError("bundle: shape mismatch for tensor '" + p->name + "'");
    for (std::size_t i = 0; i < p->w.size(); ++i) p->w[i] = static_cast<T>(blob.data[i]);
  }
}

}  // namespace ctxseg
