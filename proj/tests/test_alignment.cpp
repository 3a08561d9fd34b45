#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lap/alignment.hpp"

using namespace lap;
using namespace lap::align;
using D = double;

namespace {

AlignConfig toy_config(int H = 16) {
  AlignConfig cfg;
  cfg.H = H;
  cfg.k = 2;
  cfg.c1 = 16;
  cfg.c2 = 8;
  cfg.spade_hidden = 4;
  return cfg;
}

lm::FaceFrame random_frame(std::mt19937& rng, int h, int w) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  lm::FaceFrame f;
  f.pixels = img::Image(3, h, w);
  for (auto& v : f.pixels.data) v = dist(rng);
  return f;
}

lm::Sketch random_sketch(std::mt19937& rng, int h, int w) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  lm::Sketch s;
  s.pixels = img::Image(3, h, w);
  for (auto& v : s.pixels.data) v = dist(rng);
  return s;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937& rng, T lo = T(0), T hi = T(1)) {
  auto t = Tensor<T>::zeros(std::move(shape));
  std::uniform_real_distribution<T> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("warp with zero field is the identity at every scale") {
  std::mt19937 rng(1);
  MotionField<D> field;
  field.offsets = Tensor<D>::zeros({2, 16, 16});
  field.weight = Tensor<D>::full({16, 16}, 0.5);
  for (int h : {16, 8, 4}) {
    auto x = random_tensor<D>({3, h, h}, rng);
    auto y = warp(x, field);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]).margin(1e-6));
  }
}

TEST_CASE("constant -1 px x offset shifts a horizontal ramp right by one pixel") {
  // ramp image: value equals the column index
  auto x = Tensor<D>::zeros({1, 4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) x.data()[i * 4 + j] = j;
  MotionField<D> field;
  field.offsets = Tensor<D>::zeros({2, 4, 4});
  for (int p = 0; p < 16; ++p) field.offsets.data()[p] = -1.0;  // dx channel
  field.weight = Tensor<D>::full({4, 4}, 1.0);
  auto y = warp(x, field);
  // interior columns j >= 1 read input at column j-1
  for (int i = 0; i < 4; ++i)
    for (int j = 1; j < 4; ++j) REQUIRE(y.data()[i * 4 + j] == Catch::Approx(j - 1.0).margin(1e-12));
  // column 0 samples at x = -1, border-replicated to column 0
  for (int i = 0; i < 4; ++i) REQUIRE(y.data()[i * 4] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("-0.5 px x offset yields midpoint averages in the interior") {
  auto x = Tensor<D>::zeros({1, 1, 4});
  for (int j = 0; j < 4; ++j) x.data()[j] = j;  // [0,1,2,3]
  MotionField<D> field;
  field.offsets = Tensor<D>::zeros({2, 1, 4});
  for (int p = 0; p < 4; ++p) field.offsets.data()[p] = -0.5;
  field.weight = Tensor<D>::full({1, 4}, 1.0);
  auto y = warp(x, field);
  REQUIRE(y.data()[1] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(y.data()[2] == Catch::Approx(1.5).margin(1e-12));
  REQUIRE(y.data()[3] == Catch::Approx(2.5).margin(1e-12));
}

TEST_CASE("downsampled fields rescale their offsets with the feature size") {
  // -2 px at full resolution H=8 becomes -1 px on an H/2=4 feature: shift by 1
  auto x = Tensor<D>::zeros({1, 4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) x.data()[i * 4 + j] = j;
  MotionField<D> field;
  field.offsets = Tensor<D>::zeros({2, 8, 8});
  for (int p = 0; p < 64; ++p) field.offsets.data()[p] = -2.0;
  field.weight = Tensor<D>::full({8, 8}, 1.0);
  auto y = warp(x, field);
  for (int i = 0; i < 4; ++i)
    for (int j = 1; j < 4; ++j) REQUIRE(y.data()[i * 4 + j] == Catch::Approx(j - 1.0).margin(1e-9));
}

TEST_CASE("aggregate arithmetic oracles") {
  std::mt19937 rng(2);

  SECTION("N=1 returns the item regardless of its weight") {
    auto x = random_tensor<D>({3, 6, 6}, rng);
    auto w = random_tensor<D>({6, 6}, rng, 0.1, 5.0);
    auto y = aggregate<D>({x}, {w});
    for (std::size_t i = 0; i < x.size(); ++i)
      REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]).margin(1e-12));
  }

  SECTION("equal weights give the arithmetic mean") {
    auto a = random_tensor<D>({2, 5, 5}, rng);
    auto b = random_tensor<D>({2, 5, 5}, rng);
    auto w = Tensor<D>::full({5, 5}, 0.7);
    auto y = aggregate<D>({a, b}, {w, w});
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(y.data()[i] == Catch::Approx(0.5 * (a.data()[i] + b.data()[i])).margin(1e-12));
  }

  SECTION("0-image and 1-image with weights {1,3} give uniform 0.75") {
    auto zeros = Tensor<D>::zeros({3, 4, 4});
    auto ones = Tensor<D>::full({3, 4, 4}, 1.0);
    auto w1 = Tensor<D>::full({4, 4}, 1.0);
    auto w3 = Tensor<D>::full({4, 4}, 3.0);
    auto y = aggregate<D>({zeros, ones}, {w1, w3});
    for (std::size_t i = 0; i < y.size(); ++i)
      REQUIRE(y.data()[i] == Catch::Approx(0.75).margin(1e-6));
  }

  SECTION("invariant to simultaneous positive rescaling of all weights") {
    auto a = random_tensor<D>({3, 5, 5}, rng);
    auto b = random_tensor<D>({3, 5, 5}, rng);
    auto wa = random_tensor<D>({5, 5}, rng, 0.1, 2.0);
    auto wb = random_tensor<D>({5, 5}, rng, 0.1, 2.0);
    auto y1 = aggregate<D>({a, b}, {wa, wb});
    auto y2 = aggregate<D>({a, b}, {scale(wa, 17.3), scale(wb, 17.3)});
    for (std::size_t i = 0; i < y1.size(); ++i)
      REQUIRE(y2.data()[i] == Catch::Approx(y1.data()[i]).margin(1e-6));
  }

  SECTION("output stays inside the per-pixel min/max envelope") {
    std::vector<Tensor<D>> items, weights;
    for (int n = 0; n < 4; ++n) {
      items.push_back(random_tensor<D>({2, 6, 6}, rng, -1.0, 1.0));
      weights.push_back(random_tensor<D>({6, 6}, rng, 0.01, 3.0));
    }
    auto y = aggregate(items, weights);
    for (int c = 0; c < 2; ++c)
      for (int p = 0; p < 36; ++p) {
        double lo = 1e30, hi = -1e30;
        for (auto& it : items) {
          lo = std::min(lo, it.data()[c * 36 + p]);
          hi = std::max(hi, it.data()[c * 36 + p]);
        }
        REQUIRE(y.data()[c * 36 + p] >= lo - 1e-9);
        REQUIRE(y.data()[c * 36 + p] <= hi + 1e-9);
      }
  }

  SECTION("mismatched shapes are rejected") {
    auto a = Tensor<D>::zeros({2, 4, 4});
    auto b = Tensor<D>::zeros({2, 5, 5});
    auto w = Tensor<D>::full({4, 4}, 1.0);
    CHECK_THROWS(aggregate<D>({a, b}, {w, w}));
    CHECK_THROWS(aggregate<D>({}, {}));
  }
}

TEST_CASE("warp gradients match finite differences on 8x8 toys") {
  std::mt19937 rng(3);
  auto x = random_tensor<D>({2, 8, 8}, rng);
  x.set_requires_grad(true);
  // fractional offsets well away from the integer lattice, where bilinear
  // sampling is smooth
  auto off = Tensor<D>::zeros({2, 8, 8});
  std::uniform_real_distribution<D> od(0.25, 0.45);
  for (std::size_t i = 0; i < off.size(); ++i) off.data()[i] = od(rng) * (i % 2 ? -1.0 : 1.0);
  off.set_requires_grad(true);
  auto coeff = random_tensor<D>({2, 8, 8}, rng, -1.0, 1.0);

  MotionField<D> field;
  field.offsets = off;
  field.weight = Tensor<D>::full({8, 8}, 1.0);
  auto loss_fn = [&] { return sum_all(mul(warp(x, field), coeff)); };
  REQUIRE(finite_diff_max_rel_error<D>(loss_fn, {x, off}, 1e-4) < 1e-2);
}

TEST_CASE("aggregate gradients match finite differences") {
  std::mt19937 rng(4);
  auto a = random_tensor<D>({2, 4, 4}, rng);
  auto b = random_tensor<D>({2, 4, 4}, rng);
  auto wa = random_tensor<D>({4, 4}, rng, 0.2, 2.0);
  auto wb = random_tensor<D>({4, 4}, rng, 0.2, 2.0);
  for (auto* t : {&a, &b, &wa, &wb}) t->set_requires_grad(true);
  auto coeff = random_tensor<D>({2, 4, 4}, rng, -1.0, 1.0);
  auto loss_fn = [&] { return sum_all(mul(aggregate<D>({a, b}, {wa, wb}), coeff)); };
  REQUIRE(finite_diff_max_rel_error<D>(loss_fn, {a, b, wa, wb}, 1e-5) < 1e-2);
}

TEST_CASE("reference encoder produces the declared pyramid") {
  std::mt19937 rng(5);
  auto cfg = toy_config(32);
  AlignModel<D> model(cfg, rng);
  auto img1 = random_frame(rng, 32, 32);
  auto sk1 = random_sketch(rng, 32, 32);

  auto pyr = model.encode_reference_features(img1, sk1);
  REQUIRE(pyr.h1.shape() == std::vector<int>{16, 8, 8});
  REQUIRE(pyr.h2.shape() == std::vector<int>{8, 16, 16});

  // deterministic
  auto again = model.encode_reference_features(img1, sk1);
  for (std::size_t i = 0; i < pyr.h1.size(); ++i) REQUIRE(again.h1.data()[i] == pyr.h1.data()[i]);

  // distinct references give distinct features
  auto img2 = random_frame(rng, 32, 32);
  auto other = model.encode_reference_features(img2, sk1);
  double diff = 0.0;
  for (std::size_t i = 0; i < pyr.h1.size(); ++i)
    diff += std::abs(other.h1.data()[i] - pyr.h1.data()[i]);
  REQUIRE(diff > 0.0);

  // mismatched sizes rejected
  auto small = random_sketch(rng, 16, 16);
  CHECK_THROWS(model.encode_reference_features(img1, small));
}

TEST_CASE("predict_motion: shapes, positivity, sketch count") {
  std::mt19937 rng(6);
  auto cfg = toy_config(16);
  AlignModel<D> model(cfg, rng);
  auto ref_img = random_frame(rng, 16, 16);
  auto ref_sk = random_sketch(rng, 16, 16);
  std::vector<lm::Sketch> targets;
  for (int i = 0; i < 2 * cfg.k + 1; ++i) targets.push_back(random_sketch(rng, 16, 16));

  auto field = model.predict_motion(ref_img, ref_sk, targets);
  REQUIRE(field.offsets.shape() == std::vector<int>{2, 16, 16});
  REQUIRE(field.weight.shape() == std::vector<int>{16, 16});
  for (std::size_t i = 0; i < field.weight.size(); ++i) REQUIRE(field.weight.data()[i] > 0.0);
  for (std::size_t i = 0; i < field.offsets.size(); ++i)
    REQUIRE(std::isfinite(field.offsets.data()[i]));

  targets.pop_back();
  CHECK_THROWS_WITH(model.predict_motion(ref_img, ref_sk, targets),
                    Catch::Matchers::ContainsSubstring("5"));
}

TEST_CASE("target sketches reach the motion field (conditioning is live)") {
  std::mt19937 rng(7);
  auto cfg = toy_config(16);
  AlignModel<D> model(cfg, rng);
  auto ref_img = random_frame(rng, 16, 16);
  auto ref_sk = random_sketch(rng, 16, 16);
  std::vector<lm::Sketch> targets;
  for (int i = 0; i < 5; ++i) targets.push_back(random_sketch(rng, 16, 16));
  auto f1 = model.predict_motion(ref_img, ref_sk, targets);
  targets[2].pixels.at(0, 8, 8) += 0.5f;
  auto f2 = model.predict_motion(ref_img, ref_sk, targets);
  double diff = 0.0;
  for (std::size_t i = 0; i < f1.offsets.size(); ++i)
    diff += std::abs(f2.offsets.data()[i] - f1.offsets.data()[i]);
  REQUIRE(diff > 0.0);
}

TEST_CASE("full alignment forward aggregates at all three scales") {
  std::mt19937 rng(8);
  auto cfg = toy_config(16);
  AlignModel<D> model(cfg, rng);
  std::vector<lm::FaceFrame> refs;
  std::vector<lm::Sketch> ref_sks, targets;
  for (int i = 0; i < 3; ++i) {
    refs.push_back(random_frame(rng, 16, 16));
    ref_sks.push_back(random_sketch(rng, 16, 16));
  }
  for (int i = 0; i < 5; ++i) targets.push_back(random_sketch(rng, 16, 16));

  auto out = model.forward(refs, ref_sks, targets);
  REQUIRE(out.agg_image.shape() == std::vector<int>{3, 16, 16});
  REQUIRE(out.agg_h1.shape() == std::vector<int>{16, 4, 4});
  REQUIRE(out.agg_h2.shape() == std::vector<int>{8, 8, 8});
  // aggregated image stays within [0,1]: inputs are in [0,1] and both warping
  // and weighted averaging are convex combinations
  for (std::size_t i = 0; i < out.agg_image.size(); ++i) {
    REQUIRE(out.agg_image.data()[i] >= -1e-9);
    REQUIRE(out.agg_image.data()[i] <= 1.0 + 1e-9);
  }
  CHECK_THROWS(model.forward({}, {}, targets));
}
