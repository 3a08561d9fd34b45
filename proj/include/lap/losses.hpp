#pragma once

// Stage-2 training losses (warp, reconstruction, style, least-squares
// adversarial, feature matching) behind a pluggable perceptual-feature
// backend, plus the evaluation metrics (PSNR, SSIM, LipLMD).

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lap/image.hpp"
#include "lap/landmarks.hpp"
#include "lap/nn.hpp"
#include "lap/tensor.hpp"

namespace lap::loss {

// ---------------------------------------------------------------------------
// perceptual backend
// ---------------------------------------------------------------------------

template <typename T>
struct PerceptualBackend {
  virtual ~PerceptualBackend() = default;
  virtual std::string name() const = 0;
  // Ordered feature maps extracted from a [3, H, W] image.
  virtual std::vector<Tensor<T>> features(const Tensor<T>& image) const = 0;
};

// Single level returning the image itself; turns the perceptual losses into
// plain pixel-space losses with hand-checkable values.
template <typename T>
struct IdentityBackend : PerceptualBackend<T> {
  std::string name() const override { return "identity-v1"; }
  std::vector<Tensor<T>> features(const Tensor<T>& image) const override { return {image}; }
};

// Fixed, randomly initialized 4-level convolutional pyramid with a frozen
// seed: deterministic across runs and non-trainable. Gradients still flow
// through it to the image. Feature maps are emitted at a calibrated
// magnitude: the Gram-based style term is quadratic in feature scale while
// the L1 terms are linear, so the scale sets the balance between them under
// the default loss weights (which were tuned against VGG-19 magnitudes).
template <typename T>
struct RandomConvBackend : PerceptualBackend<T> {
  std::vector<Conv2dLayer<T>> convs;
  T feature_scale = T(0.1);

  RandomConvBackend() {
    std::mt19937 rng(0x1a9f00d);
    int widths[4] = {8, 16, 32, 64};
    int in = 3;
    for (int i = 0; i < 4; ++i) {
      // level 0 stays at full resolution so pixel-scale error is penalized
      // directly; deeper levels halve, mirroring the usual conv pyramid
      convs.emplace_back(in, widths[i], 3, i == 0 ? 1 : 2, 1, rng);
      convs.back().w.set_requires_grad(false);
      convs.back().b.set_requires_grad(false);
      in = widths[i];
    }
  }
  std::string name() const override { return "random-pyramid-v2"; }
  std::vector<Tensor<T>> features(const Tensor<T>& image) const override {
    std::vector<Tensor<T>> out;
    auto x = image;
    for (const auto& c : convs) {
      x = leaky_relu(c(x), T(0.2));
      out.push_back(scale(x, feature_scale));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// perceptual losses
// ---------------------------------------------------------------------------

// Σ_i mean |φ_i(a) − φ_i(b)|.
template <typename T>
Tensor<T> loss_warp(const Tensor<T>& agg_image, const Tensor<T>& gt_image,
                    const PerceptualBackend<T>& backend) {
  check(agg_image.shape() == gt_image.shape(), "loss_warp: image shape mismatch");
  auto fa = backend.features(agg_image);
  auto fb = backend.features(gt_image);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < fa.size(); ++i)
    total = add(total, mean_all(abs_t(sub(fa[i], fb[i]))));
  return total;
}

template <typename T>
Tensor<T> loss_recon(const Tensor<T>& gen_image, const Tensor<T>& gt_image,
                     const PerceptualBackend<T>& backend) {
  return loss_warp(gen_image, gt_image, backend);
}

// Gram matrix G(f) = (1/(c·h·w)) · F·Fᵀ with f flattened to c×(h·w).
template <typename T>
Tensor<T> gram(const Tensor<T>& f) {
  check(f.shape().size() == 3, "gram: expects C×H×W");
  int c = f.dim(0), hw = f.dim(1) * f.dim(2);
  auto flat = reshape(f, {c, hw});
  return scale(matmul(flat, transpose(flat)), T(1) / static_cast<T>(c) / static_cast<T>(hw));
}

// Σ_i ‖G(φ_i(gen)) − G(φ_i(gt))‖₁ (entry-wise L1).
template <typename T>
Tensor<T> loss_style(const Tensor<T>& gen_image, const Tensor<T>& gt_image,
                     const PerceptualBackend<T>& backend) {
  check(gen_image.shape() == gt_image.shape(), "loss_style: image shape mismatch");
  auto fa = backend.features(gen_image);
  auto fb = backend.features(gt_image);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < fa.size(); ++i)
    total = add(total, sum_all(abs_t(sub(gram(fa[i]), gram(fb[i])))));
  return total;
}

// ---------------------------------------------------------------------------
// multi-scale patch discriminator (least-squares objective)
// ---------------------------------------------------------------------------

template <typename T>
struct PatchDiscriminator {
  struct ScaleNet {
    Conv2dLayer<T> c1, c2, c3, out;
  };
  std::vector<ScaleNet> scales;  // index 0 = full resolution, 1 = half
  int ndf = 16;

  PatchDiscriminator() = default;
  PatchDiscriminator(int ndf_, std::mt19937& rng) : ndf(ndf_) {
    for (int s = 0; s < 2; ++s) {
      ScaleNet n{Conv2dLayer<T>(3, ndf_, 3, 2, 1, rng),
                 Conv2dLayer<T>(ndf_, 2 * ndf_, 3, 2, 1, rng),
                 Conv2dLayer<T>(2 * ndf_, 4 * ndf_, 3, 2, 1, rng),
                 Conv2dLayer<T>(4 * ndf_, 1, 3, 1, 1, rng)};
      scales.push_back(n);
    }
  }

  struct Response {
    std::vector<Tensor<T>> features;  // 3 intermediate maps
    Tensor<T> patches;                // [1, h', w'] patch scores
  };

  // Responses at both scales; the input must be at least 8×8.
  std::vector<Response> run(const Tensor<T>& image) const {
    check(image.shape().size() == 3 && image.dim(0) == 3, "PatchDiscriminator: expects 3×H×W");
    check(image.dim(1) >= 8 && image.dim(2) >= 8, "PatchDiscriminator: image too small");
    std::vector<Response> out;
    for (std::size_t s = 0; s < scales.size(); ++s) {
      auto x = s == 0 ? image : resize_bilinear(image, image.dim(1) / 2, image.dim(2) / 2);
      Response r;
      x = leaky_relu(scales[s].c1(x), T(0.2));
      r.features.push_back(x);
      x = leaky_relu(scales[s].c2(x), T(0.2));
      r.features.push_back(x);
      x = leaky_relu(scales[s].c3(x), T(0.2));
      r.features.push_back(x);
      r.patches = scales[s].out(x);
      out.push_back(std::move(r));
    }
    return out;
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    for (std::size_t s = 0; s < scales.size(); ++s) {
      std::string q = p + ".scale" + std::to_string(s);
      scales[s].c1.register_params(m, q + ".c1");
      scales[s].c2.register_params(m, q + ".c2");
      scales[s].c3.register_params(m, q + ".c3");
      scales[s].out.register_params(m, q + ".out");
    }
  }
};

// Least-squares objectives over per-scale patch maps.
template <typename T>
Tensor<T> lsgan_generator_loss(const std::vector<Tensor<T>>& fake_patches) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const auto& p : fake_patches) total = add(total, mean_all(square(add_scalar(p, T(-1)))));
  return total;
}

template <typename T>
Tensor<T> lsgan_discriminator_loss(const std::vector<Tensor<T>>& real_patches,
                                   const std::vector<Tensor<T>>& fake_patches) {
  check(real_patches.size() == fake_patches.size(), "lsgan: scale count mismatch");
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t s = 0; s < real_patches.size(); ++s) {
    auto real_term = mean_all(square(add_scalar(real_patches[s], T(-1))));
    auto fake_term = mean_all(square(fake_patches[s]));
    total = add(total, scale(add(real_term, fake_term), T(0.5)));
  }
  return total;
}

template <typename T>
struct AdversarialLosses {
  Tensor<T> g_loss, d_loss;
};

template <typename T>
AdversarialLosses<T> loss_adversarial(const Tensor<T>& gen_image, const Tensor<T>& gt_image,
                                      const PatchDiscriminator<T>& d) {
  check(gen_image.shape() == gt_image.shape(), "loss_adversarial: image shape mismatch");
  auto gen_resp = d.run(gen_image);
  auto real_resp = d.run(gt_image);
  // the discriminator objective sees the generated image as a constant
  auto fake_const_resp = d.run(gen_image.detach());
  std::vector<Tensor<T>> gen_p, real_p, fake_p;
  for (auto& r : gen_resp) gen_p.push_back(r.patches);
  for (auto& r : real_resp) real_p.push_back(r.patches);
  for (auto& r : fake_const_resp) fake_p.push_back(r.patches);
  return {lsgan_generator_loss(gen_p), lsgan_discriminator_loss(real_p, fake_p)};
}

// Mean absolute difference of discriminator features between generated and
// ground truth, summed over the 3 layers of both scales.
template <typename T>
Tensor<T> loss_feature_matching(const Tensor<T>& gen_image, const Tensor<T>& gt_image,
                                const PatchDiscriminator<T>& d) {
  check(gen_image.shape() == gt_image.shape(), "loss_feature_matching: image shape mismatch");
  auto gen_resp = d.run(gen_image);
  auto real_resp = d.run(gt_image);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t s = 0; s < gen_resp.size(); ++s)
    for (std::size_t l = 0; l < gen_resp[s].features.size(); ++l)
      total = add(total,
                  mean_all(abs_t(sub(gen_resp[s].features[l], real_resp[s].features[l].detach()))));
  return total;
}

// ---------------------------------------------------------------------------
// weighted total
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_w = 2.5;
  double lambda_r = 4.0;
  double lambda_s = 1000.0;
  double lambda_g = 0.25;
  double lambda_f = 2.5;

  void validate() const {
    check(lambda_w >= 0 && lambda_r >= 0 && lambda_s >= 0 && lambda_g >= 0 && lambda_f >= 0,
          "LossWeights: weights must be nonnegative");
  }
};

template <typename T>
Tensor<T> stage2_loss(const LossWeights& w, const Tensor<T>& lw, const Tensor<T>& lr,
                      const Tensor<T>& ls, const Tensor<T>& lg, const Tensor<T>& lf) {
  w.validate();
  auto total = scale(lw, static_cast<T>(w.lambda_w));
  total = add(total, scale(lr, static_cast<T>(w.lambda_r)));
  total = add(total, scale(ls, static_cast<T>(w.lambda_s)));
  total = add(total, scale(lg, static_cast<T>(w.lambda_g)));
  total = add(total, scale(lf, static_cast<T>(w.lambda_f)));
  return total;
}

// ---------------------------------------------------------------------------
// metrics (plain floats, not differentiable)
// ---------------------------------------------------------------------------

inline double psnr(const img::Image& a, const img::Image& b) {
  check(a.c == b.c && a.h == b.h && a.w == b.w, "psnr: image shape mismatch");
  check(!a.data.empty(), "psnr: empty image");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

// SSIM with an 11×11 Gaussian window (σ = 1.5), C1 = 0.01², C2 = 0.03²,
// averaged over channels and pixels (reflect borders).
inline double ssim(const img::Image& a, const img::Image& b) {
  check(a.c == b.c && a.h == b.h && a.w == b.w, "ssim: image shape mismatch");
  check(!a.data.empty(), "ssim: empty image");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  auto blur = [](const img::Image& x) {
    // 11×11 window: radius 5; gaussian_blur uses ceil(3σ) so build it here
    const int radius = 5;
    const float sigma = 1.5f;
    std::vector<float> k(2 * radius + 1);
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i)
      sum += k[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    auto reflect = [](int i, int n) {
      while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
      return i;
    };
    img::Image tmp(x.c, x.h, x.w), out(x.c, x.h, x.w);
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) {
          float acc = 0.0f;
          for (int t = -radius; t <= radius; ++t)
            acc += k[t + radius] * x.at(ci, i, reflect(j + t, x.w));
          tmp.at(ci, i, j) = acc;
        }
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) {
          float acc = 0.0f;
          for (int t = -radius; t <= radius; ++t)
            acc += k[t + radius] * tmp.at(ci, reflect(i + t, x.h), j);
          out.at(ci, i, j) = acc;
        }
    return out;
  };

  img::Image aa(a.c, a.h, a.w), bb(a.c, a.h, a.w), ab(a.c, a.h, a.w);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  auto mu_a = blur(a), mu_b = blur(b);
  auto s_aa = blur(aa), s_bb = blur(bb), s_ab = blur(ab);

  double total = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double ma = mu_a.data[i], mb = mu_b.data[i];
    double va = s_aa.data[i] - ma * ma;
    double vb = s_bb.data[i] - mb * mb;
    double cov = s_ab.data[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(a.data.size());
}

// Mean Euclidean distance over the 41 lip points, normalized by the
// ground-truth face bounding-box diagonal (same coordinate units).
inline double lip_lmd(const std::vector<lm::Point>& gen_lip, const std::vector<lm::Point>& gt_lip,
                      double face_diag) {
  check(gen_lip.size() == lm::kLipCount && gt_lip.size() == lm::kLipCount,
        "lip_lmd: expects 41 lip points per side");
  check(face_diag > 0.0, "lip_lmd: face diagonal must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < gen_lip.size(); ++i) {
    double dx = static_cast<double>(gen_lip[i].x) - gt_lip[i].x;
    double dy = static_cast<double>(gen_lip[i].y) - gt_lip[i].y;
    total += std::sqrt(dx * dx + dy * dy);
  }
  return total / static_cast<double>(gen_lip.size()) / face_diag;
}

}  // namespace lap::loss
