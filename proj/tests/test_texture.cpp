#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <ctxseg/bundle.hpp>
#include <ctxseg/common.hpp>
#include <ctxseg/image.hpp>
#include <ctxseg/texture.hpp>

using namespace ctxseg;
namespace fs = std::filesystem;

namespace {

Image noise_image(int res, Rng& rng) {
  Image img(res, res);
  for (auto& v : img.v) v = static_cast<float>(rng.uniform());
  return img;
}

double l2_norm(const std::vector<float>& v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "ctxseg_texture_tests";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("small encoder emits unit-length 128-dim descriptors") {
  SmallEncoderExtractor ex(42);
  CHECK(ex.dim() == kTextureDim);
  CHECK(ex.kind() == "small-encoder");

  Rng rng(7);
  Image img = noise_image(32, rng);
  std::vector<float> f = ex.extract(img);
  REQUIRE(static_cast<int>(f.size()) == kTextureDim);
  CHECK(l2_norm(f) == Catch::Approx(1.0).epsilon(1e-5));

  // Frozen weights: repeated extraction is bitwise stable.
  CHECK(ex.extract(img) == f);

  SmallEncoderExtractor same(42), other(43);
  CHECK(same.extract(img) == f);
  CHECK(other.extract(img) != f);
}

TEST_CASE("small encoder rejects inputs not divisible by 16") {
  SmallEncoderExtractor ex(42);
  Rng rng(8);
  Image img = noise_image(24, rng);
  CHECK_THROWS_AS(ex.extract(img), DataError);
}

TEST_CASE("extractor id is stable, cached, and seed-sensitive") {
  SmallEncoderExtractor a(1), b(1), c(2);
  std::string id = a.extractor_id();
  CHECK(id.rfind("small-encoder-", 0) == 0);
  CHECK(a.extractor_id() == id);
  CHECK(b.extractor_id() == id);
  CHECK(c.extractor_id() != id);
}

TEST_CASE("training the small encoder moves its parameters") {
  Rng rng(9);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(noise_image(16, rng));
  std::vector<const Image*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);

  auto trained = train_small_encoder(ptrs, 5, 4);
  SmallEncoderExtractor fresh(5);
  CHECK(trained->extractor_id() != fresh.extractor_id());

  std::vector<float> f = trained->extract(imgs[0]);
  REQUIRE(static_cast<int>(f.size()) == kTextureDim);
  for (float v : f) CHECK(std::isfinite(v));
  CHECK(l2_norm(f) == Catch::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("small encoder training requires images") {
  CHECK_THROWS_AS(train_small_encoder({}, 5, 4), DataError);
}

TEST_CASE("pca recovers an axis-aligned covariance exactly") {
  // Four points with sample covariance diag(8/3, 2/3): eigenvectors are the
  // coordinate axes, variance-descending means x first.
  std::vector<std::vector<float>> feats{{2, 0}, {-2, 0}, {0, 1}, {0, -1}};
  PcaModel pca = fit_pca(feats, 2);
  REQUIRE(pca.in_dim == 2);
  REQUIRE(pca.out_dim == 2);
  CHECK(pca.mean[0] == Catch::Approx(0.0).margin(1e-7));
  CHECK(pca.mean[1] == Catch::Approx(0.0).margin(1e-7));
  CHECK(pca.components[0] == Catch::Approx(1.0).margin(1e-6));
  CHECK(pca.components[1] == Catch::Approx(0.0).margin(1e-6));
  CHECK(pca.components[2] == Catch::Approx(0.0).margin(1e-6));
  CHECK(pca.components[3] == Catch::Approx(1.0).margin(1e-6));

  std::vector<float> y = pca.project({3, 5});
  CHECK(y[0] == Catch::Approx(3.0).margin(1e-5));
  CHECK(y[1] == Catch::Approx(5.0).margin(1e-5));
}

TEST_CASE("pca components are orthonormal with descending variance") {
  Rng rng(55);
  const int d = 6, n = 200;
  std::vector<std::vector<float>> feats;
  for (int i = 0; i < n; ++i) {
    std::vector<float> f(d);
    double a = rng.uniform() * 2 - 1, b = rng.uniform() * 2 - 1;
    for (int k = 0; k < d; ++k)
      f[static_cast<std::size_t>(k)] = static_cast<float>(
          3.0 * a * ((k % 2) ? 1 : -1) + 0.5 * b * (k < 3 ? 1 : 0) + 0.01 * rng.uniform());
    feats.push_back(std::move(f));
  }
  PcaModel pca = fit_pca(feats, 3);

  for (int r = 0; r < 3; ++r) {
    const float* row = pca.components.data() + static_cast<std::size_t>(r) * d;
    double nrm = 0.0;
    int imax = 0;
    for (int k = 0; k < d; ++k) {
      nrm += static_cast<double>(row[k]) * row[k];
      if (std::abs(row[k]) > std::abs(row[imax])) imax = k;
    }
    CHECK(std::sqrt(nrm) == Catch::Approx(1.0).epsilon(1e-5));
    CHECK(row[imax] > 0.0f);  // sign convention
    for (int r2 = r + 1; r2 < 3; ++r2) {
      const float* row2 = pca.components.data() + static_cast<std::size_t>(r2) * d;
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += static_cast<double>(row[k]) * row2[k];
      CHECK(std::abs(dot) < 1e-5);
    }
  }

  // Projected variance must not increase with component index.
  std::vector<double> var(3, 0.0);
  for (const auto& f : feats) {
    std::vector<float> y = pca.project(f);
    for (int k = 0; k < 3; ++k) var[static_cast<std::size_t>(k)] += static_cast<double>(y[k]) * y[k];
  }
  CHECK(var[0] >= var[1]);
  CHECK(var[1] >= var[2]);
}

TEST_CASE("pca clamps the requested width and validates inputs") {
  std::vector<std::vector<float>> feats{{1, 2}, {3, 4}, {5, 6}};
  CHECK(fit_pca(feats, 10).out_dim == 2);
  CHECK_THROWS_AS(fit_pca(feats, 0), UsageError);
  CHECK_THROWS_AS(fit_pca({}, 2), DataError);
  std::vector<std::vector<float>> ragged{{1, 2}, {3}};
  CHECK_THROWS_AS(fit_pca(ragged, 1), DataError);
  PcaModel pca = fit_pca(feats, 1);
  CHECK_THROWS_AS(pca.project({1, 2, 3}), DataError);
}

TEST_CASE("saved backbone reproduces the small encoder bit for bit") {
  fs::path path = temp_dir() / "backbone.ctxb";
  SmallEncoderExtractor small(77);
  save_texture_backbone(small, path);

  PretrainedBackboneExtractor big(path, 0, nullptr);
  CHECK(big.dim() == kTextureDim);
  CHECK(big.kind() == "pretrained-backbone");
  CHECK(big.extractor_id().rfind("pretrained-", 0) == 0);

  Rng rng(17);
  for (int i = 0; i < 3; ++i) {
    Image img = noise_image(32, rng);
    CHECK(big.extract(img) == small.extract(img));
  }
  fs::remove(path);
}

TEST_CASE("missing backbone weights point at the small-encoder fallback") {
  fs::path path = temp_dir() / "nonexistent.ctxb";
  fs::remove(path);
  try {
    PretrainedBackboneExtractor ex(path, 0, nullptr);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("small-encoder") != std::string::npos);
  }
}

TEST_CASE("a non-backbone bundle is rejected") {
  fs::path path = temp_dir() / "wrong_kind.ctxb";
  Bundle b;
  b.meta["kind"] = "segmentation-model";
  b.save(path);
  CHECK_THROWS_AS(PretrainedBackboneExtractor(path, 0, nullptr), FormatError);
  fs::remove(path);
}

TEST_CASE("pca-reduced backbone round-trips through a bundle") {
  fs::path path = temp_dir() / "backbone_pca.ctxb";
  SmallEncoderExtractor small(88);
  save_texture_backbone(small, path);

  Rng rng(18);
  std::vector<Image> imgs;
  for (int i = 0; i < 12; ++i) imgs.push_back(noise_image(32, rng));

  PretrainedBackboneExtractor probe(path, 0, nullptr);
  std::vector<std::vector<float>> raw;
  for (const auto& im : imgs) raw.push_back(probe.extract_raw(im));

  PretrainedBackboneExtractor reduced(path, 8, &raw);
  CHECK(reduced.dim() == 8);
  std::vector<float> f = reduced.extract(imgs[0]);
  REQUIRE(f.size() == 8);
  CHECK(l2_norm(f) == Catch::Approx(1.0).epsilon(1e-5));

  // Embedding in a model bundle preserves both the backbone and the PCA.
  Bundle b;
  reduced.put(b);
  PretrainedBackboneExtractor restored(b);
  CHECK(restored.dim() == 8);
  CHECK(restored.extractor_id() == reduced.extractor_id());
  for (const auto& im : imgs) CHECK(restored.extract(im) == reduced.extract(im));

  CHECK_THROWS_AS(PretrainedBackboneExtractor(path, 8, nullptr), DataError);
  fs::remove(path);
}
