#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lap/translation.hpp"

using namespace lap;
using namespace lap::xlate;
using D = double;

namespace {

TranslationConfig toy_config(int H = 16) {
  TranslationConfig cfg;
  cfg.H = H;
  cfg.k = 2;
  cfg.d = 16;
  cfg.c1 = 16;
  cfg.c2 = 8;
  cfg.base = 8;
  cfg.spade_hidden = 4;
  return cfg;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937& rng, T lo = T(0), T hi = T(1)) {
  auto t = Tensor<T>::zeros(std::move(shape));
  std::uniform_real_distribution<T> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

TranslationInputs<D> random_inputs(const TranslationConfig& cfg, std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  TranslationInputs<D> in;
  lm::FaceFrame face;
  face.pixels = img::Image(3, cfg.H, cfg.H);
  for (auto& v : face.pixels.data) v = dist(rng);
  in.masked_face = lm::mask_lower_half(face);
  for (int i = 0; i < 2 * cfg.k + 1; ++i) {
    lm::Sketch s;
    s.pixels = img::Image(3, cfg.H, cfg.H);
    for (auto& v : s.pixels.data) v = dist(rng);
    in.target_sketches.push_back(s);
  }
  in.agg_image = random_tensor<D>({3, cfg.H, cfg.H}, rng);
  in.agg_h1 = random_tensor<D>({cfg.c1, cfg.H / 4, cfg.H / 4}, rng);
  in.agg_h2 = random_tensor<D>({cfg.c2, cfg.H / 2, cfg.H / 2}, rng);
  in.audio_embed = random_tensor<D>({1, cfg.d}, rng, -1.0, 1.0);
  return in;
}

double abs_diff(const Tensor<D>& a, const Tensor<D>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a.data()[i] - b.data()[i]);
  return d;
}

}  // namespace

TEST_CASE("translate produces a full face in [0,1]") {
  std::mt19937 rng(1);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  auto in = random_inputs(cfg, rng);
  auto out = model.translate(in);
  REQUIRE(out.shape() == std::vector<int>{3, 16, 16});
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(std::isfinite(out.data()[i]));
    REQUIRE(out.data()[i] >= 0.0);
    REQUIRE(out.data()[i] <= 1.0);
  }
  // deterministic
  auto again = model.translate(in);
  REQUIRE(abs_diff(out, again) == 0.0);
}

TEST_CASE("translate validates its inputs") {
  std::mt19937 rng(2);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);

  SECTION("unmasked face rejected") {
    auto in = random_inputs(cfg, rng);
    in.masked_face.masked_lower_half = false;
    CHECK_THROWS_WITH(model.translate(in), Catch::Matchers::ContainsSubstring("masked"));
  }
  SECTION("wrong sketch count rejected") {
    auto in = random_inputs(cfg, rng);
    in.target_sketches.pop_back();
    CHECK_THROWS(model.translate(in));
  }
  SECTION("wrong aggregate shapes rejected") {
    auto in = random_inputs(cfg, rng);
    in.agg_h1 = Tensor<D>::zeros({cfg.c1, cfg.H / 2, cfg.H / 2});
    CHECK_THROWS(model.translate(in));
  }
  SECTION("wrong audio width rejected") {
    auto in = random_inputs(cfg, rng);
    in.audio_embed = Tensor<D>::zeros({1, cfg.d + 1});
    CHECK_THROWS(model.translate(in));
  }
}

TEST_CASE("zeroed audio affine parameters make output audio-independent") {
  std::mt19937 rng(3);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  model.ad4.freeze_identity();
  model.ad2.freeze_identity();
  model.ad1.freeze_identity();
  auto in = random_inputs(cfg, rng);
  auto out1 = model.translate(in);
  in.audio_embed = random_tensor<D>({1, cfg.d}, rng, -2.0, 2.0);
  auto out2 = model.translate(in);
  REQUIRE(abs_diff(out1, out2) == 0.0);
}

TEST_CASE("audio conditioning is live by default") {
  std::mt19937 rng(4);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  auto in = random_inputs(cfg, rng);
  auto out1 = model.translate(in);
  in.audio_embed = random_tensor<D>({1, cfg.d}, rng, -2.0, 2.0);
  auto out2 = model.translate(in);
  REQUIRE(abs_diff(out1, out2) > 0.0);
}

TEST_CASE("frozen spatial scale/shift makes output invariant to all aggregates") {
  std::mt19937 rng(5);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  model.sp4.freeze_identity();
  model.sp2.freeze_identity();
  model.sp1.freeze_identity();
  auto in = random_inputs(cfg, rng);
  auto out1 = model.translate(in);
  in.agg_image = random_tensor<D>({3, cfg.H, cfg.H}, rng);
  in.agg_h1 = random_tensor<D>({cfg.c1, cfg.H / 4, cfg.H / 4}, rng);
  in.agg_h2 = random_tensor<D>({cfg.c2, cfg.H / 2, cfg.H / 2}, rng);
  auto out2 = model.translate(in);
  REQUIRE(abs_diff(out1, out2) == 0.0);
}

TEST_CASE("perturbing agg_image changes the output") {
  std::mt19937 rng(6);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  auto in = random_inputs(cfg, rng);
  auto out1 = model.translate(in);
  in.agg_image.data()[0] += 0.25;
  auto out2 = model.translate(in);
  REQUIRE(abs_diff(out1, out2) > 0.0);
}

TEST_CASE("gradients flow to every input pathway") {
  std::mt19937 rng(7);
  auto cfg = toy_config();
  TranslationModel<D> model(cfg, rng);
  auto face = random_tensor<D>({3, cfg.H, cfg.H}, rng);
  std::vector<Tensor<D>> sketches;
  for (int i = 0; i < 2 * cfg.k + 1; ++i)
    sketches.push_back(random_tensor<D>({3, cfg.H, cfg.H}, rng));
  auto agg_image = random_tensor<D>({3, cfg.H, cfg.H}, rng);
  auto agg_h1 = random_tensor<D>({cfg.c1, cfg.H / 4, cfg.H / 4}, rng);
  auto agg_h2 = random_tensor<D>({cfg.c2, cfg.H / 2, cfg.H / 2}, rng);
  auto audio = random_tensor<D>({1, cfg.d}, rng, -1.0, 1.0);
  std::vector<Tensor<D>> inputs = {face, agg_image, agg_h1, agg_h2, audio};
  for (auto& s : sketches) inputs.push_back(s);
  for (auto& t : inputs) t.set_requires_grad(true);

  auto out = model.translate_core(face, sketches, agg_image, agg_h1, agg_h2, audio);
  auto loss = sum_all(square(out));
  loss.backward();
  const char* names[] = {"face", "agg_image", "agg_h1", "agg_h2", "audio"};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double norm = 0.0;
    for (double g : inputs[i].grad()) norm += g * g;
    INFO("pathway " << (i < 5 ? names[i] : "sketch"));
    REQUIRE(norm > 0.0);
  }
}

TEST_CASE("render audio encoder mirrors the landmark audio encoder contract") {
  std::mt19937 rng(8);
  RenderAudioEncoder<D> enc(16, rng);
  std::normal_distribution<float> nd(0.0f, 0.5f);
  audio::MelChunk a, b;
  a.values.resize(16 * 80);
  b.values.resize(16 * 80);
  for (auto& v : a.values) v = nd(rng);
  for (auto& v : b.values) v = nd(rng);

  auto ea = enc(a);
  REQUIRE(ea.shape() == std::vector<int>{1, 16});
  auto ea2 = enc(a);
  for (std::size_t i = 0; i < ea.size(); ++i) REQUIRE(ea2.data()[i] == ea.data()[i]);
  auto eb = enc(b);
  double diff = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) diff += std::abs(eb.data()[i] - ea.data()[i]);
  REQUIRE(diff > 0.0);
}
