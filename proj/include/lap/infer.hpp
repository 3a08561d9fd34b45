#pragma once

// End-to-end inference: stage 1 predicts lip/jaw landmarks from the driving
// audio in non-overlapping windows of T frames; stage 2 renders each face from
// sketches, warped references, and the audio embedding; paste-back composites
// the result into the source frame. Also hosts the frame-level evaluation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lap/checkpoint.hpp"
#include "lap/config.hpp"
#include "lap/dataset.hpp"
#include "lap/generator.hpp"
#include "lap/losses.hpp"
#include "lap/train.hpp"
#include "lap/translation.hpp"

namespace lap::infer {

using F = float;

// n indices uniformly strided over [0, len).
inline std::vector<int> uniform_stride_indices(int len, int n) {
  check(len > 0 && n > 0, "uniform_stride_indices: need positive sizes");
  n = std::min(n, len);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<int>((i + 0.5) * len / n));
  for (int& i : out) i = std::clamp(i, 0, len - 1);
  return out;
}

struct InferResult {
  std::string frames_dir;
  std::string landmarks_path;
  int frame_count = 0;
};

// Stage-1 only: predicted full landmark sets for every frame.
inline lm::LandmarkSequence predict_landmarks(const cfg::RunConfig& rc,
                                              const gen::LandmarkGenerator<F>& model,
                                              const lm::LandmarkSequence& source,
                                              const audio::MelSpectrogram& mel) {
  int len = static_cast<int>(source.frames.size());
  check(len > 0, "predict_landmarks: empty source sequence");

  // reference landmark sets: uniform stride, fixed count n_refs
  std::vector<lm::LandmarkSet> refs;
  for (int i : uniform_stride_indices(len, rc.n_refs)) refs.push_back(source.frames[i]);
  while (static_cast<int>(refs.size()) < rc.n_refs) refs.push_back(refs.back());

  lm::LandmarkSequence out = source;  // pose landmarks carried over from the source
  // non-overlapping windows of T; the last window is shifted back to end at len
  for (int t0 = 0; t0 < len; t0 += rc.T) {
    int start = std::min(t0, std::max(0, len - rc.T));
    std::vector<audio::MelChunk> chunks;
    std::vector<lm::LandmarkSet> pose;
    for (int t = start; t < start + rc.T; ++t) {
      int tc = std::min(t, len - 1);
      chunks.push_back(audio::chunk_for_frame(mel, tc));
      pose.push_back(source.frames[tc]);
    }
    NoGradGuard ng;
    auto pred = model.forward(chunks, pose, refs);
    std::vector<lm::LandmarkSet> window(out.frames.begin() + start,
                                        out.frames.begin() + start + rc.T);
    gen::apply_group(window, pred.lip, lm::kLipStart, lm::kLipCount);
    gen::apply_group(window, pred.jaw, lm::kJawStart, lm::kJawCount);
    for (int t = 0; t < rc.T; ++t) out.frames[start + t] = window[t];
    if (start + rc.T >= len) break;
  }
  return out;
}

// Allow driving audio shorter than the video by up to half a second (mel
// chunks edge-replicate); reject anything shorter.
inline void check_audio_length(const audio::AudioClip& a, int frame_count) {
  double audio_s = static_cast<double>(a.samples.size()) / a.sample_rate;
  double video_s = frame_count / data::kFps;
  if (audio_s + 0.5 < video_s)
    throw std::runtime_error("driving audio is " + std::to_string(video_s - audio_s) +
                             "s shorter than the video (at most 0.5s is tolerated)");
}

inline InferResult run_inference(const std::string& stage1_ckpt, const std::string& stage2_ckpt,
                                 const data::ClipRecord& record, const std::string& audio_path,
                                 const std::string& out_dir, int ref_count_override = -1) {
  namespace fs = std::filesystem;
  auto c1 = ckpt::load_checkpoint(stage1_ckpt);
  auto c2 = ckpt::load_checkpoint(stage2_ckpt);
  check(c1.kind == "stage1", "run_inference: " + stage1_ckpt + " is not a stage-1 checkpoint");
  check(c2.kind == "stage2", "run_inference: " + stage2_ckpt + " is not a stage-2 checkpoint");
  auto rc1 = cfg::RunConfig::from_json(c1.config);
  auto rc2 = cfg::RunConfig::from_json(c2.config);

  std::mt19937 tmp_rng(rc1.seed);
  gen::LandmarkGenerator<F> generator(rc1.generator_config(), tmp_rng);
  ParamMap<F> gen_params;
  generator.register_params(gen_params, "gen");
  c1.load_params(gen_params);

  train::Stage2Models m(rc2);
  ParamMap<F> all2;
  for (auto& [n, t] : m.gen_params.items) all2.add(n, t);
  c2.load_params(all2);

  auto clip = data::load_clip(record);
  int len = static_cast<int>(clip.frames.size());
  auto driving = audio_path == record.audio ? clip.clip_audio : audio::read_wav(audio_path);
  check_audio_length(driving, len);
  audio::AudioClip driving_clip = driving;
  auto mel = audio::compute_mel(driving_clip);

  // stage 1: landmarks
  auto predicted = predict_landmarks(rc1, generator, clip.landmarks, mel);

  fs::create_directories(fs::path(out_dir) / "frames");
  InferResult res;
  res.frames_dir = (fs::path(out_dir) / "frames").string();
  res.landmarks_path = (fs::path(out_dir) / "landmarks.jsonl").string();
  res.frame_count = len;
  lm::write_landmark_file(predicted, res.landmarks_path);

  // stage 2: reference images with their source sketches
  int n_refs = ref_count_override > 0
                   ? ref_count_override
                   : static_cast<int>(std::ceil(rc2.inference_ref_fraction * len));
  std::vector<lm::FaceFrame> ref_imgs;
  std::vector<lm::Sketch> ref_sketches;
  for (int i : uniform_stride_indices(len, n_refs)) {
    lm::FaceFrame rf;
    rf.pixels = train::face_crop(clip, i, rc2.H);
    ref_imgs.push_back(rf);
    ref_sketches.push_back(lm::rasterize_sketch(clip.landmarks.frames[i], rc2.H, rc2.H));
  }

  for (int t = 0; t < len; ++t) {
    NoGradGuard ng;
    auto target_sketches = train::sketches_around(predicted, t, rc2.k, rc2.H);
    auto agg = m.aligner.forward(ref_imgs, ref_sketches, target_sketches);

    lm::FaceFrame source_face;
    source_face.pixels = train::face_crop(clip, t, rc2.H);
    auto masked = lm::mask_lower_half(source_face);

    xlate::TranslationInputs<F> tin;
    tin.masked_face = masked;
    tin.target_sketches = target_sketches;
    tin.agg_image = agg.agg_image;
    tin.agg_h1 = agg.agg_h1;
    tin.agg_h2 = agg.agg_h2;
    tin.audio_embed = m.audio_enc(audio::chunk_for_frame(mel, t));
    auto gen_img = m.translator.translate(tin);

    lm::FaceFrame generated;
    generated.pixels = img::from_tensor(gen_img);
    auto composed = lm::paste_back(generated, clip.frames[t], clip.boxes[t], predicted.frames[t],
                                   static_cast<float>(rc2.paste_sigma));
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", t);
    img::write_png((fs::path(res.frames_dir) / name).string(), composed);
  }
  return res;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

inline nlohmann::json evaluate_frames(const std::string& pred_frames_dir,
                                      const std::string& gt_frames_dir,
                                      const std::string& pred_landmarks = "",
                                      const std::string& gt_landmarks = "") {
  auto pred_files = data::list_frame_files(pred_frames_dir);
  auto gt_files = data::list_frame_files(gt_frames_dir);
  check(!pred_files.empty(), "eval: no predicted frames in " + pred_frames_dir);
  check(pred_files.size() == gt_files.size(),
        "eval: frame count mismatch (" + std::to_string(pred_files.size()) + " vs " +
            std::to_string(gt_files.size()) + ")");

  nlohmann::json frames = nlohmann::json::array();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < pred_files.size(); ++i) {
    auto p = img::read_png(pred_files[i]);
    auto g = img::read_png(gt_files[i]);
    check(p.h == g.h && p.w == g.w, "eval: frame size mismatch at index " + std::to_string(i));
    double ps = loss::psnr(p, g), ss = loss::ssim(p, g);
    psnr_sum += ps;
    ssim_sum += ss;
    frames.push_back({{"frame", i}, {"psnr", ps}, {"ssim", ss}});
  }

  nlohmann::json out;
  out["frames"] = frames;
  out["mean_psnr"] = psnr_sum / pred_files.size();
  out["mean_ssim"] = ssim_sum / pred_files.size();

  if (!pred_landmarks.empty() && !gt_landmarks.empty()) {
    auto ps = lm::read_landmark_file(pred_landmarks);
    auto gs = lm::read_landmark_file(gt_landmarks);
    check(ps.frames.size() == gs.frames.size(), "eval: landmark count mismatch");
    double lmd_sum = 0.0;
    for (std::size_t i = 0; i < ps.frames.size(); ++i)
      lmd_sum += loss::lip_lmd(ps.frames[i].lip(), gs.frames[i].lip(), std::sqrt(2.0));
    out["mean_lip_lmd"] = lmd_sum / ps.frames.size();
  }
  return out;
}

}  // namespace lap::infer
