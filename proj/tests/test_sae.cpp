#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <vector>

#include <ctxseg/common.hpp>
#include <ctxseg/eval.hpp>
#include <ctxseg/nn.hpp>
#include <ctxseg/sae.hpp>
#include <ctxseg/segnet.hpp>

using namespace ctxseg;

namespace {

// Filled ellipse with a randomized center and radii. Always leaves some
// background so the reconstruction target is never degenerate.
Mask blob_mask(int res, Rng& rng) {
  Mask m(res, res);
  double cy = res * (0.35 + 0.3 * rng.uniform());
  double cx = res * (0.35 + 0.3 * rng.uniform());
  double ry = res * (0.12 + 0.18 * rng.uniform());
  double rx = res * (0.12 + 0.18 * rng.uniform());
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double dy = (y - cy) / ry, dx = (x - cx) / rx;
      m.v[static_cast<std::size_t>(y) * res + x] = (dy * dy + dx * dx <= 1.0) ? 1 : 0;
    }
  return m;
}

float mean_loss(ShapeAutoEncoder<float>& sae, const std::vector<Mask>& masks) {
  std::vector<const Mask*> ptrs;
  for (const auto& m : masks) ptrs.push_back(&m);
  Tensor<float> x = masks_to_tensor<float>(ptrs);
  return sae.loss(x, false);
}

double median_recon_dice(ShapeAutoEncoder<float>& sae, const std::vector<Mask>& masks) {
  std::vector<double> scores;
  for (const auto& m : masks) scores.push_back(dice(m, sae.reconstruct(m)));
  return median(scores);
}

}  // namespace

TEST_CASE("latent width must be a positive multiple of 16") {
  CHECK_THROWS_AS(ShapeAutoEncoder<float>(0, 1), UsageError);
  CHECK_THROWS_AS(ShapeAutoEncoder<float>(8, 1), UsageError);
  CHECK_THROWS_AS(ShapeAutoEncoder<float>(100, 1), UsageError);
  CHECK_THROWS_AS(ShapeAutoEncoder<float>(-16, 1), UsageError);
  CHECK_NOTHROW(ShapeAutoEncoder<float>(16, 1));
  CHECK_NOTHROW(ShapeAutoEncoder<float>(256, 1));
}

TEST_CASE("parameter count sits in the compact-model window") {
  ShapeAutoEncoder<float> sae(kDefaultLatentDim, 1);
  std::size_t n = sae.param_count();
  CHECK(n == 7665);  // characterization: within 2x of the 10k budget
  CHECK(n >= 5000);
  CHECK(n <= 20000);

  // Only the two 1x1 projections depend on the latent width.
  ShapeAutoEncoder<float> narrow(16, 1);
  CHECK(narrow.param_count() < n);
}

TEST_CASE("encode produces a {N, latent, 1, 1} batch") {
  ShapeAutoEncoder<float> sae(64, 3);
  Rng rng(10);
  std::vector<Mask> masks{blob_mask(64, rng), blob_mask(64, rng)};
  std::vector<const Mask*> ptrs{&masks[0], &masks[1]};
  Tensor<float> latent = sae.encode_batch(masks_to_tensor<float>(ptrs));
  CHECK(latent.n == 2);
  CHECK(latent.c == 64);
  CHECK(latent.h == 1);
  CHECK(latent.w == 1);

  // The single-mask helper matches the batch path sample-for-sample.
  std::vector<float> one = sae.encode(masks[1]);
  REQUIRE(one.size() == 64);
  for (std::size_t i = 0; i < one.size(); ++i)
    CHECK(one[i] == latent.v[latent.sample_stride() + i]);
}

TEST_CASE("encode rejects resolutions not divisible by 32") {
  ShapeAutoEncoder<float> sae(16, 3);
  Rng rng(11);
  Mask m = blob_mask(48, rng);
  CHECK_THROWS_AS(sae.encode(m), DataError);
}

TEST_CASE("decode thresholds logits at zero") {
  ShapeAutoEncoder<float> sae(32, 5);
  Rng rng(12);
  std::vector<float> latent(32);
  for (auto& v : latent) v = static_cast<float>(rng.uniform() * 2 - 1);

  Tensor<float> l(1, 32, 1, 1);
  for (std::size_t i = 0; i < latent.size(); ++i) l.v[i] = latent[i];
  Tensor<float> logits = sae.decode_logits(l, 32, 32);
  Mask m = sae.decode(latent, 32);

  REQUIRE(m.h == 32);
  REQUIRE(m.w == 32);
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    CHECK((m.v[i] == 0 || m.v[i] == 1));
    CHECK(m.v[i] == (logits.v[i] >= 0.0f ? 1 : 0));
  }
}

TEST_CASE("decode validates latent width and output geometry") {
  ShapeAutoEncoder<float> sae(32, 5);
  Tensor<float> wrong(1, 16, 1, 1);
  CHECK_THROWS_AS(sae.decode_logits(wrong, 32, 32), DataError);
  Tensor<float> ok(1, 32, 1, 1);
  CHECK_THROWS_AS(sae.decode_logits(ok, 32, 64), DataError);
  CHECK_THROWS_AS(sae.decode_logits(ok, 48, 48), DataError);
  CHECK_NOTHROW(sae.decode_logits(ok, 64, 64));
}

TEST_CASE("identical seeds build identical autoencoders") {
  ShapeAutoEncoder<float> a(64, 9), b(64, 9), c(64, 10);
  Rng rng(13);
  Mask m = blob_mask(32, rng);
  CHECK(a.encode(m) == b.encode(m));
  CHECK(a.encode(m) != c.encode(m));
}

TEST_CASE("training improves reconstruction on held-in shapes") {
  const int res = 32;
  Rng rng(77);
  std::vector<Mask> masks;
  for (int i = 0; i < 16; ++i) masks.push_back(blob_mask(res, rng));

  ShapeAutoEncoder<float> sae(64, 21);
  float loss0 = mean_loss(sae, masks);
  double dice0 = median_recon_dice(sae, masks);

  std::vector<nn::Param<float>*> params = sae.params();
  nn::Adam<float> opt(params, 1e-2);
  std::vector<const Mask*> ptrs;
  for (const auto& m : masks) ptrs.push_back(&m);
  Tensor<float> x = masks_to_tensor<float>(ptrs);
  for (int step = 0; step < 120; ++step) {
    opt.zero_grad();
    sae.loss(x, true);
    opt.step();
  }

  float loss1 = mean_loss(sae, masks);
  double dice1 = median_recon_dice(sae, masks);
  CHECK(loss1 < 0.5f * loss0);
  CHECK(dice1 > dice0);
  CHECK(dice1 > 0.6);
}

TEST_CASE("reconstruct is decode of encode at the input resolution") {
  ShapeAutoEncoder<float> sae(64, 30);
  Rng rng(31);
  Mask m = blob_mask(64, rng);
  Mask direct = sae.decode(sae.encode(m), m.h);
  Mask via = sae.reconstruct(m);
  CHECK(direct.v == via.v);
}
