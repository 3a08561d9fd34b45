#pragma once

// Stage 2a: per-reference motion prediction and feature alignment. For each
// reference frame a small U-shaped network predicts a dense motion field and a
// confidence weight conditioned on the target sketches; reference images and
// their two-scale features are warped by the field and combined by weighted
// averaging.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lap/image.hpp"
#include "lap/landmarks.hpp"
#include "lap/nn.hpp"
#include "lap/tensor.hpp"

namespace lap::align {

inline constexpr double kWeightEps = 1e-6;

struct AlignConfig {
  int H = 128;           // full square resolution
  int k = 2;             // sketch context radius: 2k+1 target sketches
  int c1 = 256;          // feature width at H/4
  int c2 = 128;          // feature width at H/2
  int spade_hidden = 32;

  void validate() const {
    check(H >= 8 && H % 8 == 0, "AlignConfig: H must be a positive multiple of 8");
    check(k >= 0, "AlignConfig: k must be >= 0");
    check(c1 > 0 && c2 > 0 && spade_hidden > 0, "AlignConfig: widths must be positive");
  }
  int cond_channels() const { return 3 * (2 * k + 1); }
};

// Dense displacement field (pixel units at full resolution) plus a strictly
// positive confidence map.
template <typename T>
struct MotionField {
  Tensor<T> offsets;  // [2, H, W]: channel 0 = dx, channel 1 = dy
  Tensor<T> weight;   // [H, W], > 0 everywhere
};

template <typename T>
struct RefFeaturePyramid {
  Tensor<T> h1;  // [c1, H/4, W/4]
  Tensor<T> h2;  // [c2, H/2, W/2]
};

namespace detail {

// Channels [c0, c1) of a C×H×W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  int h = x.dim(1), w = x.dim(2);
  auto rows = reshape(x, {x.dim(0), h * w});
  return reshape(slice_rows(rows, c0, c1), {c1 - c0, h, w});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// warping and aggregation
// ---------------------------------------------------------------------------

// Bilinear warp of a C×h×w tensor by a motion field declared at full
// resolution: when scales differ, the offsets are resized and rescaled so a
// one-pixel displacement at H stays a proportional displacement at h.
template <typename T>
Tensor<T> warp(const Tensor<T>& x, const MotionField<T>& field) {
  check(x.shape().size() == 3, "warp: expects C×h×w");
  int h = x.dim(1), w = x.dim(2);
  auto off = field.offsets;
  if (off.dim(1) != h || off.dim(2) != w) {
    T sx = static_cast<T>(w) / off.dim(2);
    T sy = static_cast<T>(h) / off.dim(1);
    off = resize_bilinear(off, h, w);
    off = channel_affine(off, Tensor<T>::from({2}, {sx, sy}), Tensor<T>::zeros({2}));
  }
  return grid_sample_relative(x, off);
}

// The field's weight map resampled to h×w.
template <typename T>
Tensor<T> weight_at(const MotionField<T>& field, int h, int w) {
  auto wm = reshape(field.weight, {1, field.weight.dim(0), field.weight.dim(1)});
  if (wm.dim(1) != h || wm.dim(2) != w) wm = resize_bilinear(wm, h, w);
  return reshape(wm, {h, w});
}

// Pixel-wise Σ w_i·x_i / Σ w_i, the weight maps broadcast across channels.
template <typename T>
Tensor<T> aggregate(const std::vector<Tensor<T>>& items, const std::vector<Tensor<T>>& weights) {
  check(!items.empty() && items.size() == weights.size(),
        "aggregate: needs N >= 1 items with matching weights");
  for (std::size_t i = 0; i < items.size(); ++i) {
    check(items[i].shape() == items[0].shape(), "aggregate: item shape mismatch");
    check(weights[i].size() ==
              static_cast<std::size_t>(items[0].dim(1)) * items[0].dim(2),
          "aggregate: weight size mismatch");
  }
  auto num = mul_broadcast_channel(items[0], weights[0]);
  auto den = weights[0];
  for (std::size_t i = 1; i < items.size(); ++i) {
    num = add(num, mul_broadcast_channel(items[i], weights[i]));
    den = add(den, weights[i]);
  }
  return mul_broadcast_channel(num, recip(den));
}

// ---------------------------------------------------------------------------
// conditioning block: per-pixel scale/shift predicted from a conditioning map
// ---------------------------------------------------------------------------

template <typename T>
struct SpadeBlock {
  Conv2dLayer<T> shared, to_scale, to_shift;

  SpadeBlock() = default;
  SpadeBlock(int feat_c, int cond_c, int hidden, std::mt19937& rng)
      : shared(cond_c, hidden, 3, 1, 1, rng),
        to_scale(hidden, feat_c, 3, 1, 1, rng),
        to_shift(hidden, feat_c, 3, 1, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& cond) const {
    auto c = cond;
    if (c.dim(1) != x.dim(1) || c.dim(2) != x.dim(2)) c = resize_bilinear(c, x.dim(1), x.dim(2));
    auto hid = relu(shared(c));
    auto scale_map = add_scalar(to_scale(hid), T(1));
    auto shift_map = to_shift(hid);
    return add(mul(instance_norm(x), scale_map), shift_map);
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    shared.register_params(m, p + ".shared");
    to_scale.register_params(m, p + ".to_scale");
    to_shift.register_params(m, p + ".to_shift");
  }
  // test hook: pin scale at 1 and shift at 0 so the conditioning is inert
  void freeze_identity() {
    shared.zero_init();
    to_scale.zero_init();
    to_shift.zero_init();
  }
};

// ---------------------------------------------------------------------------
// reference encoder
// ---------------------------------------------------------------------------

template <typename T>
struct ReferenceEncoder {
  Conv2dLayer<T> down1, refine2, down2, refine1;

  ReferenceEncoder() = default;
  ReferenceEncoder(const AlignConfig& cfg, std::mt19937& rng)
      : down1(6, cfg.c2, 3, 2, 1, rng),
        refine2(cfg.c2, cfg.c2, 3, 1, 1, rng),
        down2(cfg.c2, cfg.c1, 3, 2, 1, rng),
        refine1(cfg.c1, cfg.c1, 3, 1, 1, rng) {}

  RefFeaturePyramid<T> operator()(const lm::FaceFrame& ref_img, const lm::Sketch& ref_sketch) const {
    check(ref_img.pixels.h == ref_sketch.pixels.h && ref_img.pixels.w == ref_sketch.pixels.w,
          "ReferenceEncoder: image/sketch size mismatch");
    auto x = concat_channels<T>({img::to_tensor<T>(ref_img.pixels), img::to_tensor<T>(ref_sketch.pixels)});
    auto a = relu(down1(x));
    RefFeaturePyramid<T> out;
    out.h2 = relu(refine2(a));
    out.h1 = relu(refine1(relu(down2(out.h2))));
    return out;
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    down1.register_params(m, p + ".down1");
    refine2.register_params(m, p + ".refine2");
    down2.register_params(m, p + ".down2");
    refine1.register_params(m, p + ".refine1");
  }
};

// ---------------------------------------------------------------------------
// motion network
// ---------------------------------------------------------------------------

// Encoder over the reference image+sketch; the target sketches enter only
// through the spatially-adaptive normalization layers in the decoder, which
// upsamples by channel-to-space rearrangement.
template <typename T>
struct MotionNet {
  AlignConfig cfg;
  Conv2dLayer<T> enc1, enc2, enc3;
  SpadeBlock<T> sp8, sp4, sp2, sp1;
  Conv2dLayer<T> up1, up2, up3, head;

  MotionNet() = default;
  MotionNet(const AlignConfig& cfg_, std::mt19937& rng)
      : cfg(cfg_),
        enc1(6, cfg_.c2, 3, 2, 1, rng),
        enc2(cfg_.c2, cfg_.c1, 3, 2, 1, rng),
        enc3(cfg_.c1, cfg_.c1, 3, 2, 1, rng),
        sp8(cfg_.c1, cfg_.cond_channels(), cfg_.spade_hidden, rng),
        sp4(cfg_.c1, cfg_.cond_channels(), cfg_.spade_hidden, rng),
        sp2(cfg_.c2, cfg_.cond_channels(), cfg_.spade_hidden, rng),
        sp1(cfg_.c2, cfg_.cond_channels(), cfg_.spade_hidden, rng),
        up1(cfg_.c1, 4 * cfg_.c1, 3, 1, 1, rng),
        up2(cfg_.c1, 4 * cfg_.c2, 3, 1, 1, rng),
        up3(cfg_.c2, 4 * cfg_.c2, 3, 1, 1, rng),
        head(cfg_.c2, 3, 3, 1, 1, rng) {
    up1.icnr_init(2);
    up2.icnr_init(2);
    up3.icnr_init(2);
  }

  MotionField<T> operator()(const lm::FaceFrame& ref_img, const lm::Sketch& ref_sketch,
                            const std::vector<lm::Sketch>& target_sketches) const {
    check(static_cast<int>(target_sketches.size()) == 2 * cfg.k + 1,
          "MotionNet: expected " + std::to_string(2 * cfg.k + 1) + " target sketches, got " +
              std::to_string(target_sketches.size()));
    std::vector<Tensor<T>> cond_parts;
    for (const auto& s : target_sketches) cond_parts.push_back(img::to_tensor<T>(s.pixels));
    auto cond = concat_channels(cond_parts);

    auto x = concat_channels<T>(
        {img::to_tensor<T>(ref_img.pixels), img::to_tensor<T>(ref_sketch.pixels)});
    x = relu(enc1(x));
    x = relu(enc2(x));
    x = relu(enc3(x));  // [c1, H/8, W/8]

    x = pixel_shuffle(up1(relu(sp8(x, cond))), 2);  // [c1, H/4, W/4]
    x = pixel_shuffle(up2(relu(sp4(x, cond))), 2);  // [c2, H/2, W/2]
    x = pixel_shuffle(up3(relu(sp2(x, cond))), 2);  // [c2, H, W]
    auto y = head(relu(sp1(x, cond)));              // [3, H, W]

    MotionField<T> out;
    out.offsets = detail::slice_channels(y, 0, 2);
    auto wlogit = detail::slice_channels(y, 2, 3);
    out.weight =
        reshape(add_scalar(sigmoid(wlogit), static_cast<T>(kWeightEps)), {y.dim(1), y.dim(2)});
    return out;
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    enc1.register_params(m, p + ".enc1");
    enc2.register_params(m, p + ".enc2");
    enc3.register_params(m, p + ".enc3");
    sp8.register_params(m, p + ".sp8");
    sp4.register_params(m, p + ".sp4");
    sp2.register_params(m, p + ".sp2");
    sp1.register_params(m, p + ".sp1");
    up1.register_params(m, p + ".up1");
    up2.register_params(m, p + ".up2");
    up3.register_params(m, p + ".up3");
    head.register_params(m, p + ".head");
  }
};

// ---------------------------------------------------------------------------
// full alignment model
// ---------------------------------------------------------------------------

template <typename T>
struct AlignOutputs {
  Tensor<T> agg_image;  // [3, H, W]
  Tensor<T> agg_h1;     // [c1, H/4, W/4]
  Tensor<T> agg_h2;     // [c2, H/2, W/2]
};

template <typename T>
struct AlignModel {
  AlignConfig cfg;
  ReferenceEncoder<T> enc;
  MotionNet<T> motion;

  AlignModel() = default;
  AlignModel(const AlignConfig& cfg_, std::mt19937& rng) : cfg(cfg_), enc(cfg_, rng), motion(cfg_, rng) {
    cfg.validate();
  }

  RefFeaturePyramid<T> encode_reference_features(const lm::FaceFrame& ref_img,
                                                 const lm::Sketch& ref_sketch) const {
    return enc(ref_img, ref_sketch);
  }
  MotionField<T> predict_motion(const lm::FaceFrame& ref_img, const lm::Sketch& ref_sketch,
                                const std::vector<lm::Sketch>& target_sketches) const {
    return motion(ref_img, ref_sketch, target_sketches);
  }

  AlignOutputs<T> forward(const std::vector<lm::FaceFrame>& ref_imgs,
                          const std::vector<lm::Sketch>& ref_sketches,
                          const std::vector<lm::Sketch>& target_sketches) const {
    check(!ref_imgs.empty() && ref_imgs.size() == ref_sketches.size(),
          "AlignModel: needs N >= 1 references with matching sketches");
    std::vector<Tensor<T>> imgs, f1, f2, w_full, w_half, w_quarter;
    for (std::size_t i = 0; i < ref_imgs.size(); ++i) {
      auto pyr = enc(ref_imgs[i], ref_sketches[i]);
      auto field = motion(ref_imgs[i], ref_sketches[i], target_sketches);
      imgs.push_back(warp(img::to_tensor<T>(ref_imgs[i].pixels), field));
      f1.push_back(warp(pyr.h1, field));
      f2.push_back(warp(pyr.h2, field));
      w_full.push_back(weight_at(field, cfg.H, cfg.H));
      w_half.push_back(weight_at(field, cfg.H / 2, cfg.H / 2));
      w_quarter.push_back(weight_at(field, cfg.H / 4, cfg.H / 4));
    }
    AlignOutputs<T> out;
    out.agg_image = aggregate(imgs, w_full);
    out.agg_h1 = aggregate(f1, w_quarter);
    out.agg_h2 = aggregate(f2, w_half);
    return out;
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    enc.register_params(m, p + ".enc");
    motion.register_params(m, p + ".motion");
  }
};

}  // namespace lap::align
