#pragma once

// Stage 1: audio-to-landmark generation. A transformer over reference, audio,
// and pose tokens predicts lip and jaw landmarks for T adjacent frames.
// Includes the training losses, the landmark-error metric, and a bidirectional
// LSTM baseline sharing the same encoders and heads.

#include <cmath>
#include <random>
#include <vector>

#include "lap/audio.hpp"
#include "lap/landmarks.hpp"
#include "lap/nn.hpp"
#include "lap/tensor.hpp"

namespace lap::gen {

struct GeneratorConfig {
  int T = 5;          // frames predicted per window
  int n_refs = 15;    // reference landmark sets (N_l)
  int d = 512;        // token width
  int depth = 4;      // transformer blocks (L)
  int heads = 8;
  double mlp_ratio = 4.0;

  void validate() const {
    check(T >= 2, "GeneratorConfig: T must be >= 2 (continuity loss needs pairs)");
    check(n_refs > 0 && d > 0 && depth >= 0 && heads > 0 && mlp_ratio > 0,
          "GeneratorConfig: all dimensions must be positive");
    check(d % heads == 0, "GeneratorConfig: d must be divisible by heads");
  }
  int token_count() const { return n_refs + 2 * T; }
};

// ---------------------------------------------------------------------------
// encoders
// ---------------------------------------------------------------------------

// Strided 2-D convolutions over a 16×80 mel chunk down to a d-vector.
template <typename T>
struct AudioEncoder {
  std::vector<Conv2dLayer<T>> convs;
  Linear<T> proj;
  int d = 0;

  AudioEncoder() = default;
  AudioEncoder(int d_, std::mt19937& rng) : d(d_) {
    int widths[4] = {std::max(4, d_ / 8), std::max(8, d_ / 4), std::max(16, d_ / 2),
                     std::max(16, d_ / 2)};
    int in = 1;
    for (int i = 0; i < 4; ++i) {
      convs.emplace_back(in, widths[i], 3, 2, 1, rng);
      in = widths[i];
    }
    // 16×80 → 8×40 → 4×20 → 2×10 → 1×5
    proj = Linear<T>(in * 5, d_, rng);
  }

  Tensor<T> operator()(const audio::MelChunk& chunk) const {
    check(chunk.values.size() == 16u * 80u, "AudioEncoder: chunk must be 16x80");
    auto x = Tensor<T>::zeros({1, 16, 80});
    for (std::size_t i = 0; i < chunk.values.size(); ++i)
      x.data()[i] = static_cast<T>(chunk.values[i]);
    for (const auto& conv : convs) x = relu(conv(x));
    return proj(reshape(x, {1, static_cast<int>(x.size())}));  // [1, d]
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    for (std::size_t i = 0; i < convs.size(); ++i)
      convs[i].register_params(m, p + ".conv" + std::to_string(i));
    proj.register_params(m, p + ".proj");
  }
};

// 1-D convolutions over the point axis, global average pooling, projection.
template <typename T>
struct PointEncoder {
  Conv1dLayer<T> c1, c2;
  Linear<T> proj;
  int n_points = 0;

  PointEncoder() = default;
  PointEncoder(int n_points_, int d, std::mt19937& rng) : n_points(n_points_) {
    int w1 = std::max(8, d / 4), w2 = std::max(16, d / 2);
    c1 = Conv1dLayer<T>(2, w1, 3, 1, 1, rng);
    c2 = Conv1dLayer<T>(w1, w2, 3, 1, 1, rng);
    proj = Linear<T>(w2, d, rng);
  }

  Tensor<T> operator()(const std::vector<lm::Point>& pts) const {
    check(static_cast<int>(pts.size()) == n_points,
          "PointEncoder: expected " + std::to_string(n_points) + " points, got " +
              std::to_string(pts.size()));
    auto x = Tensor<T>::zeros({2, n_points});
    for (int i = 0; i < n_points; ++i) {
      x.data()[i] = static_cast<T>(pts[i].x);
      x.data()[n_points + i] = static_cast<T>(pts[i].y);
    }
    auto h = relu(c2(relu(c1(x))));  // [w2, n]
    return proj(mean_over_points(h));
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    c1.register_params(m, p + ".c1");
    c2.register_params(m, p + ".c2");
    proj.register_params(m, p + ".proj");
  }

 private:
  // mean over the point axis: [c, n] -> [1, c]
  static Tensor<T> mean_over_points(const Tensor<T>& h) {
    auto ones = Tensor<T>::full({h.dim(1), 1}, T(1) / static_cast<T>(h.dim(1)));
    return transpose(matmul(h, ones));
  }
};

// Learned type encodings plus the fixed sinusoidal positional table.
template <typename T>
struct ModalityEncodings {
  Tensor<T> e_audio, e_pose, e_ref;  // [1, d]
  Tensor<T> positions;               // [max_T, d], fixed

  ModalityEncodings() = default;
  ModalityEncodings(int d, int max_t, std::mt19937& rng) {
    T bound = std::sqrt(T(1) / static_cast<T>(d));
    e_audio = param_uniform<T>({1, d}, bound, rng);
    e_pose = param_uniform<T>({1, d}, bound, rng);
    e_ref = param_uniform<T>({1, d}, bound, rng);
    positions = sinusoidal_positions<T>(max_t, d);
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    m.add(p + ".e_audio", e_audio);
    m.add(p + ".e_pose", e_pose);
    m.add(p + ".e_ref", e_ref);
  }
};

// Token layout: [references | audio(T) | pose(T)]. References carry only the
// type encoding; audio/pose tokens get type plus per-frame positional terms.
template <typename T>
Tensor<T> assemble_tokens(const std::vector<Tensor<T>>& refs, const std::vector<Tensor<T>>& audio,
                          const std::vector<Tensor<T>>& pose, const ModalityEncodings<T>& enc) {
  check(!refs.empty() && !audio.empty() && audio.size() == pose.size(),
        "assemble_tokens: counts do not match config");
  std::vector<Tensor<T>> rows;
  for (const auto& r : refs) rows.push_back(add(r, enc.e_ref));
  for (std::size_t t = 0; t < audio.size(); ++t) {
    auto pos = slice_rows(enc.positions, static_cast<int>(t), static_cast<int>(t) + 1);
    rows.push_back(add(add(audio[t], enc.e_audio), pos));
  }
  for (std::size_t t = 0; t < pose.size(); ++t) {
    auto pos = slice_rows(enc.positions, static_cast<int>(t), static_cast<int>(t) + 1);
    rows.push_back(add(add(pose[t], enc.e_pose), pos));
  }
  return concat_rows(rows);
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

template <typename T>
struct LandmarkPrediction {
  Tensor<T> lip;  // [T, 2*41]
  Tensor<T> jaw;  // [T, 2*16]
};

template <typename T>
struct LandmarkGenerator {
  GeneratorConfig cfg;
  AudioEncoder<T> audio_enc;
  PointEncoder<T> pose_enc, ref_enc;
  ModalityEncodings<T> enc;
  std::vector<TransformerBlock<T>> blocks;
  Linear<T> lip_h1, lip_h2, jaw_h1, jaw_h2;  // two-layer MLP heads, shared across t

  LandmarkGenerator() = default;
  LandmarkGenerator(const GeneratorConfig& c, std::mt19937& rng) : cfg(c) {
    cfg.validate();
    audio_enc = AudioEncoder<T>(cfg.d, rng);
    pose_enc = PointEncoder<T>(lm::kPoseCount, cfg.d, rng);
    ref_enc = PointEncoder<T>(lm::kTotal, cfg.d, rng);
    enc = ModalityEncodings<T>(cfg.d, std::max(cfg.T, 64), rng);
    for (int i = 0; i < cfg.depth; ++i)
      blocks.emplace_back(cfg.d, cfg.heads, static_cast<T>(cfg.mlp_ratio), rng);
    lip_h1 = Linear<T>(cfg.d, cfg.d, rng);
    lip_h2 = Linear<T>(cfg.d, 2 * lm::kLipCount, rng);
    jaw_h1 = Linear<T>(cfg.d, cfg.d, rng);
    jaw_h2 = Linear<T>(cfg.d, 2 * lm::kJawCount, rng);
  }

  Tensor<T> encode_and_fuse(const std::vector<audio::MelChunk>& chunks,
                            const std::vector<lm::LandmarkSet>& pose_frames,
                            const std::vector<lm::LandmarkSet>& refs) const {
    check(static_cast<int>(chunks.size()) == cfg.T, "forward: need T mel chunks");
    check(static_cast<int>(pose_frames.size()) == cfg.T, "forward: need T pose frames");
    check(static_cast<int>(refs.size()) == cfg.n_refs, "forward: need N_l reference frames");
    std::vector<Tensor<T>> a, p, r;
    for (const auto& c : chunks) a.push_back(audio_enc(c));
    for (const auto& f : pose_frames) p.push_back(pose_enc(f.pose()));
    for (const auto& f : refs) {
      std::vector<lm::Point> pts(f.points.begin(), f.points.end());
      r.push_back(ref_enc(pts));
    }
    return assemble_tokens(r, a, p, enc);
  }

  Tensor<T> transformer_forward(Tensor<T> tokens) const {
    for (const auto& b : blocks) tokens = b(tokens);
    return tokens;
  }

  LandmarkPrediction<T> predict_from_tokens(const Tensor<T>& tokens) const {
    int nl = cfg.n_refs;
    auto lip_tok = slice_rows(tokens, nl, nl + cfg.T);
    auto jaw_tok = slice_rows(tokens, nl + cfg.T, nl + 2 * cfg.T);
    return {lip_h2(relu(lip_h1(lip_tok))), jaw_h2(relu(jaw_h1(jaw_tok)))};
  }

  LandmarkPrediction<T> forward(const std::vector<audio::MelChunk>& chunks,
                                const std::vector<lm::LandmarkSet>& pose_frames,
                                const std::vector<lm::LandmarkSet>& refs) const {
    return predict_from_tokens(transformer_forward(encode_and_fuse(chunks, pose_frames, refs)));
  }

  void register_params(ParamMap<T>& m, const std::string& p = "gen") const {
    audio_enc.register_params(m, p + ".audio_enc");
    pose_enc.register_params(m, p + ".pose_enc");
    ref_enc.register_params(m, p + ".ref_enc");
    enc.register_params(m, p + ".enc");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].register_params(m, p + ".block" + std::to_string(i));
    lip_h1.register_params(m, p + ".lip_h1");
    lip_h2.register_params(m, p + ".lip_h2");
    jaw_h1.register_params(m, p + ".jaw_h1");
    jaw_h2.register_params(m, p + ".jaw_h2");
  }
};

// ---------------------------------------------------------------------------
// LSTM ablation baseline: mean-pooled references, per-frame concatenation,
// bidirectional recurrence, identical head structure.
// ---------------------------------------------------------------------------

template <typename T>
struct LstmBaseline {
  GeneratorConfig cfg;
  AudioEncoder<T> audio_enc;
  PointEncoder<T> pose_enc, ref_enc;
  BiLSTM<T> lstm;
  Linear<T> lip_h1, lip_h2, jaw_h1, jaw_h2;

  LstmBaseline() = default;
  LstmBaseline(const GeneratorConfig& c, std::mt19937& rng) : cfg(c) {
    cfg.validate();
    audio_enc = AudioEncoder<T>(cfg.d, rng);
    pose_enc = PointEncoder<T>(lm::kPoseCount, cfg.d, rng);
    ref_enc = PointEncoder<T>(lm::kTotal, cfg.d, rng);
    lstm = BiLSTM<T>(3 * cfg.d, cfg.d, rng);
    lip_h1 = Linear<T>(2 * cfg.d, cfg.d, rng);
    lip_h2 = Linear<T>(cfg.d, 2 * lm::kLipCount, rng);
    jaw_h1 = Linear<T>(2 * cfg.d, cfg.d, rng);
    jaw_h2 = Linear<T>(cfg.d, 2 * lm::kJawCount, rng);
  }

  LandmarkPrediction<T> forward(const std::vector<audio::MelChunk>& chunks,
                                const std::vector<lm::LandmarkSet>& pose_frames,
                                const std::vector<lm::LandmarkSet>& refs) const {
    check(static_cast<int>(chunks.size()) == cfg.T && pose_frames.size() == chunks.size(),
          "LstmBaseline: need T chunks and pose frames");
    check(!refs.empty(), "LstmBaseline: need at least one reference");
    Tensor<T> ref_mean;
    for (const auto& f : refs) {
      std::vector<lm::Point> pts(f.points.begin(), f.points.end());
      auto r = ref_enc(pts);
      ref_mean = ref_mean.defined() ? add(ref_mean, r) : r;
    }
    ref_mean = scale(ref_mean, T(1) / static_cast<T>(refs.size()));

    std::vector<Tensor<T>> steps;
    for (int t = 0; t < cfg.T; ++t) {
      auto a = audio_enc(chunks[t]);
      auto p = pose_enc(pose_frames[t].pose());
      steps.push_back(transpose(concat_rows(
          std::vector<Tensor<T>>{transpose(a), transpose(p), transpose(ref_mean)})));
    }
    auto h = lstm(concat_rows(steps));  // [T, 2d]
    return {lip_h2(relu(lip_h1(h))), jaw_h2(relu(jaw_h1(h)))};
  }

  void register_params(ParamMap<T>& m, const std::string& p = "lstm") const {
    audio_enc.register_params(m, p + ".audio_enc");
    pose_enc.register_params(m, p + ".pose_enc");
    ref_enc.register_params(m, p + ".ref_enc");
    lstm.register_params(m, p + ".lstm");
    lip_h1.register_params(m, p + ".lip_h1");
    lip_h2.register_params(m, p + ".lip_h2");
    jaw_h1.register_params(m, p + ".jaw_h1");
    jaw_h2.register_params(m, p + ".jaw_h2");
  }
};

// ---------------------------------------------------------------------------
// losses and metric
// ---------------------------------------------------------------------------

// (1/T)·Σ_t (‖Δlip_t‖₁ + ‖Δjaw_t‖₁)
template <typename T>
Tensor<T> loss_l1(const Tensor<T>& pred_lip, const Tensor<T>& pred_jaw, const Tensor<T>& gt_lip,
                  const Tensor<T>& gt_jaw) {
  check(pred_lip.shape() == gt_lip.shape() && pred_jaw.shape() == gt_jaw.shape(),
        "loss_l1: prediction/target shape mismatch");
  int t = pred_lip.dim(0);
  auto total = add(sum_all(abs_t(sub(pred_lip, gt_lip))), sum_all(abs_t(sub(pred_jaw, gt_jaw))));
  return scale(total, T(1) / static_cast<T>(t));
}

// (1/(T−1))·Σ_t (‖Δ²lip‖₂ + ‖Δ²jaw‖₂) on first differences of pred vs gt.
template <typename T>
Tensor<T> loss_continuity(const Tensor<T>& pred_lip, const Tensor<T>& pred_jaw,
                          const Tensor<T>& gt_lip, const Tensor<T>& gt_jaw) {
  int t = pred_lip.dim(0);
  check(t >= 2, "loss_continuity: needs at least two frames");
  check(pred_lip.shape() == gt_lip.shape() && pred_jaw.shape() == gt_jaw.shape(),
        "loss_continuity: prediction/target shape mismatch");
  auto diff_term = [t](const Tensor<T>& pred, const Tensor<T>& gt) {
    Tensor<T> acc;
    for (int i = 0; i + 1 < t; ++i) {
      auto dp = sub(slice_rows(pred, i + 1, i + 2), slice_rows(pred, i, i + 1));
      auto dg = sub(slice_rows(gt, i + 1, i + 2), slice_rows(gt, i, i + 1));
      auto n = l2_norm(sub(dp, dg));
      acc = acc.defined() ? add(acc, n) : n;
    }
    return acc;
  };
  auto total = add(diff_term(pred_lip, gt_lip), diff_term(pred_jaw, gt_jaw));
  return scale(total, T(1) / static_cast<T>(t - 1));
}

template <typename T>
Tensor<T> stage1_loss(const Tensor<T>& pred_lip, const Tensor<T>& pred_jaw,
                      const Tensor<T>& gt_lip, const Tensor<T>& gt_jaw,
                      T lambda_c = T(1)) {
  return add(loss_l1(pred_lip, pred_jaw, gt_lip, gt_jaw),
             scale(loss_continuity(pred_lip, pred_jaw, gt_lip, gt_jaw), lambda_c));
}

// Mean Euclidean distance over lip+jaw points, in pixels at canvas resolution.
template <typename T>
double landmark_error(const std::vector<LandmarkPrediction<T>>& pred,
                      const std::vector<std::pair<Tensor<T>, Tensor<T>>>& gt, int canvas = 128) {
  check(pred.size() == gt.size() && !pred.empty(), "landmark_error: sequence length mismatch");
  double total = 0.0;
  long count = 0;
  for (std::size_t w = 0; w < pred.size(); ++w) {
    auto accum = [&](const Tensor<T>& p, const Tensor<T>& g) {
      int frames = p.dim(0), coords = p.dim(1);
      for (int t = 0; t < frames; ++t)
        for (int i = 0; i < coords; i += 2) {
          double dx = p.data()[t * coords + i] - g.data()[t * coords + i];
          double dy = p.data()[t * coords + i + 1] - g.data()[t * coords + i + 1];
          total += std::sqrt(dx * dx + dy * dy);
          ++count;
        }
    };
    accum(pred[w].lip, gt[w].first);
    accum(pred[w].jaw, gt[w].second);
  }
  return total / count * canvas;
}

// Flatten a landmark group of one frame window into a [T, 2n] target tensor.
template <typename T>
Tensor<T> group_targets(const std::vector<lm::LandmarkSet>& frames, int start, int count) {
  auto t = Tensor<T>::zeros({static_cast<int>(frames.size()), 2 * count});
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (int i = 0; i < count; ++i) {
      t.data()[f * 2 * count + 2 * i] = static_cast<T>(frames[f][start + i].x);
      t.data()[f * 2 * count + 2 * i + 1] = static_cast<T>(frames[f][start + i].y);
    }
  return t;
}

// Write a [T, 2n] prediction back into landmark sets (clipping to [0,1]).
template <typename T>
void apply_group(std::vector<lm::LandmarkSet>& frames, const Tensor<T>& pred, int start,
                 int count) {
  check(pred.dim(0) == static_cast<int>(frames.size()) && pred.dim(1) == 2 * count,
        "apply_group: shape mismatch");
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (int i = 0; i < count; ++i) {
      frames[f][start + i].x =
          std::clamp(static_cast<float>(pred.data()[f * 2 * count + 2 * i]), 0.0f, 1.0f);
      frames[f][start + i].y =
          std::clamp(static_cast<float>(pred.data()[f * 2 * count + 2 * i + 1]), 0.0f, 1.0f);
    }
}

}  // namespace lap::gen
