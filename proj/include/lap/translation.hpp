#pragma once

// Stage 2b: translate the masked target face plus its sketch context into the
// final face image. Aggregated warped images/features modulate the decoder
// through spatially-adaptive per-pixel scale/shift at the matching scale, each
// followed by a per-channel scale/shift computed from the audio embedding.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lap/alignment.hpp"
#include "lap/generator.hpp"
#include "lap/image.hpp"
#include "lap/landmarks.hpp"
#include "lap/nn.hpp"
#include "lap/tensor.hpp"

namespace lap::xlate {

struct TranslationConfig {
  int H = 128;           // full square resolution
  int k = 2;             // sketch context radius
  int d = 512;           // audio embedding width
  int c1 = 256;          // aggregated feature width at H/4
  int c2 = 128;          // aggregated feature width at H/2
  int base = 64;         // decoder width at full resolution
  int spade_hidden = 32;

  void validate() const {
    check(H >= 8 && H % 8 == 0, "TranslationConfig: H must be a positive multiple of 8");
    check(k >= 0, "TranslationConfig: k must be >= 0");
    check(d > 0 && c1 > 0 && c2 > 0 && base > 0 && spade_hidden > 0,
          "TranslationConfig: widths must be positive");
  }
  int in_channels() const { return 3 + 3 * (2 * k + 1); }
};

template <typename T>
struct TranslationInputs {
  lm::FaceFrame masked_face;              // lower half zeroed
  std::vector<lm::Sketch> target_sketches;  // 2k+1 sketches
  Tensor<T> agg_image;                    // [3, H, W]
  Tensor<T> agg_h1;                       // [c1, H/4, W/4]
  Tensor<T> agg_h2;                       // [c2, H/2, W/2]
  Tensor<T> audio_embed;                  // [1, d]
};

// Per-channel scale/shift computed from the audio embedding, applied after a
// statistics-based normalization.
template <typename T>
struct AdaInBlock {
  Linear<T> to_scale, to_shift;
  int c = 0;

  AdaInBlock() = default;
  AdaInBlock(int d, int c_, std::mt19937& rng) : to_scale(d, c_, rng), to_shift(d, c_, rng), c(c_) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& audio_embed) const {
    auto g = add_scalar(reshape(to_scale(audio_embed), {c}), T(1));
    auto b = reshape(to_shift(audio_embed), {c});
    return channel_affine(instance_norm(x), g, b);
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    to_scale.register_params(m, p + ".to_scale");
    to_shift.register_params(m, p + ".to_shift");
  }
  // test hook: pin scale at 1 and shift at 0 so audio cannot influence output
  void freeze_identity() {
    to_scale.zero_init();
    to_shift.zero_init();
  }
};

template <typename T>
struct TranslationModel {
  TranslationConfig cfg;
  Conv2dLayer<T> enc1, enc2, enc3;        // H -> H/2 -> H/4 -> H/8
  Conv2dLayer<T> up1, up2, up3, head;     // mirrored channel-to-space decoder
  align::SpadeBlock<T> sp4, sp2, sp1;     // agg_h1 @ H/4, agg_h2 @ H/2, agg_image @ H
  AdaInBlock<T> ad4, ad2, ad1;

  TranslationModel() = default;
  TranslationModel(const TranslationConfig& cfg_, std::mt19937& rng)
      : cfg(cfg_),
        enc1(cfg_.in_channels(), cfg_.base, 3, 2, 1, rng),
        enc2(cfg_.base, 2 * cfg_.base, 3, 2, 1, rng),
        enc3(2 * cfg_.base, 4 * cfg_.base, 3, 2, 1, rng),
        up1(4 * cfg_.base, 4 * 2 * cfg_.base, 3, 1, 1, rng),
        up2(2 * cfg_.base, 4 * cfg_.base, 3, 1, 1, rng),
        up3(cfg_.base, 4 * cfg_.base, 3, 1, 1, rng),
        head(cfg_.base, 3, 3, 1, 1, rng),
        sp4(2 * cfg_.base, cfg_.c1, cfg_.spade_hidden, rng),
        sp2(cfg_.base, cfg_.c2, cfg_.spade_hidden, rng),
        sp1(cfg_.base, 3, cfg_.spade_hidden, rng),
        ad4(cfg_.d, 2 * cfg_.base, rng),
        ad2(cfg_.d, cfg_.base, rng),
        ad1(cfg_.d, cfg_.base, rng) {
    cfg.validate();
    up1.icnr_init(2);
    up2.icnr_init(2);
    up3.icnr_init(2);
  }

  Tensor<T> translate(const TranslationInputs<T>& in) const {
    validate_inputs(in);
    std::vector<Tensor<T>> sketches;
    for (const auto& s : in.target_sketches) sketches.push_back(img::to_tensor<T>(s.pixels));
    return translate_core(img::to_tensor<T>(in.masked_face.pixels), sketches, in.agg_image,
                          in.agg_h1, in.agg_h2, in.audio_embed);
  }

  // Tensor-level forward, shared by translate() and by gradient probes that
  // need the face/sketch pathways differentiable.
  Tensor<T> translate_core(const Tensor<T>& face, const std::vector<Tensor<T>>& sketches,
                           const Tensor<T>& agg_image, const Tensor<T>& agg_h1,
                           const Tensor<T>& agg_h2, const Tensor<T>& audio_embed) const {
    std::vector<Tensor<T>> parts = {face};
    for (const auto& s : sketches) parts.push_back(s);
    auto x = concat_channels(parts);  // [3 + 3(2k+1), H, W]
    check(x.dim(0) == cfg.in_channels(), "translate: input channel mismatch");

    auto e1 = relu(enc1(x));   // [b, H/2, W/2]
    auto e2 = relu(enc2(e1));  // [2b, H/4, W/4]
    x = relu(enc3(e2));        // [4b, H/8, W/8]

    // long skips from the encoder keep the unmasked content pixel-accurate;
    // the aggregates still enter only through the spatially-adaptive blocks
    x = add(pixel_shuffle(up1(x), 2), e2);      // [2b, H/4, W/4]
    x = relu(ad4(sp4(x, agg_h1), audio_embed));
    x = add(pixel_shuffle(up2(x), 2), e1);      // [b, H/2, W/2]
    x = relu(ad2(sp2(x, agg_h2), audio_embed));
    x = pixel_shuffle(up3(x), 2);               // [b, H, W]
    x = relu(ad1(sp1(x, agg_image), audio_embed));
    return sigmoid(head(x));                    // [3, H, W] in [0,1]
  }

  void register_params(ParamMap<T>& m, const std::string& p) const {
    enc1.register_params(m, p + ".enc1");
    enc2.register_params(m, p + ".enc2");
    enc3.register_params(m, p + ".enc3");
    up1.register_params(m, p + ".up1");
    up2.register_params(m, p + ".up2");
    up3.register_params(m, p + ".up3");
    head.register_params(m, p + ".head");
    sp4.register_params(m, p + ".sp4");
    sp2.register_params(m, p + ".sp2");
    sp1.register_params(m, p + ".sp1");
    ad4.register_params(m, p + ".ad4");
    ad2.register_params(m, p + ".ad2");
    ad1.register_params(m, p + ".ad1");
  }

 private:
  void validate_inputs(const TranslationInputs<T>& in) const {
    check(in.masked_face.masked_lower_half, "translate: face must have its lower half masked");
    check(in.masked_face.pixels.c == 3 && in.masked_face.pixels.h == cfg.H &&
              in.masked_face.pixels.w == cfg.H,
          "translate: masked face must be 3x" + std::to_string(cfg.H) + "x" + std::to_string(cfg.H));
    check(static_cast<int>(in.target_sketches.size()) == 2 * cfg.k + 1,
          "translate: expected " + std::to_string(2 * cfg.k + 1) + " target sketches");
    for (const auto& s : in.target_sketches)
      check(s.pixels.h == cfg.H && s.pixels.w == cfg.H, "translate: sketch size mismatch");
    check(in.agg_image.shape() == std::vector<int>{3, cfg.H, cfg.H},
          "translate: agg_image shape mismatch");
    check(in.agg_h1.shape() == std::vector<int>{cfg.c1, cfg.H / 4, cfg.H / 4},
          "translate: agg_h1 shape mismatch");
    check(in.agg_h2.shape() == std::vector<int>{cfg.c2, cfg.H / 2, cfg.H / 2},
          "translate: agg_h2 shape mismatch");
    check(in.audio_embed.shape() == std::vector<int>{1, cfg.d},
          "translate: audio embedding must be [1, d]");
  }
};

// Audio encoder for the renderer: same architecture family as the landmark
// generator's, with its own parameters.
template <typename T>
struct RenderAudioEncoder {
  gen::AudioEncoder<T> enc;

  RenderAudioEncoder() = default;
  RenderAudioEncoder(int d, std::mt19937& rng) : enc(d, rng) {}

  Tensor<T> operator()(const audio::MelChunk& chunk) const { return enc(chunk); }
  void register_params(ParamMap<T>& m, const std::string& p) const { enc.register_params(m, p); }
};

}  // namespace lap::xlate
