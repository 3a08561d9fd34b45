#pragma once

// Training loops for both stages: windowed landmark-sequence training for the
// generator, and joint alignment + translation + audio-encoder training with
// an adversarial discriminator for the renderer. Both loops log JSONL step
// records, checkpoint periodically, abort on NaN losses, and resume exactly
// (optimizer moments and sampler state ride in the checkpoint).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lap/checkpoint.hpp"
#include "lap/config.hpp"
#include "lap/dataset.hpp"
#include "lap/generator.hpp"
#include "lap/losses.hpp"
#include "lap/translation.hpp"

namespace lap::train {

using F = float;

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

inline std::string rng_to_string(const std::mt19937& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_from_string(std::mt19937& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
}

// Mel spectrogram with an optional on-disk cache (LAP_CACHE_DIR).
inline audio::MelSpectrogram mel_for(const data::LoadedClip& clip) {
  const char* cache_dir = std::getenv("LAP_CACHE_DIR");
  std::string path;
  if (cache_dir) {
    std::filesystem::create_directories(cache_dir);
    path = std::string(cache_dir) + "/" + clip.record.clip_id + "_" +
           std::to_string(clip.clip_audio.samples.size()) + ".mel";
    std::ifstream f(path, std::ios::binary);
    if (f) {
      audio::MelSpectrogram mel;
      f.read(reinterpret_cast<char*>(&mel.num_steps), sizeof(int));
      f.read(reinterpret_cast<char*>(&mel.n_mels), sizeof(int));
      f.read(reinterpret_cast<char*>(&mel.hop_seconds), sizeof(double));
      mel.values.resize(static_cast<std::size_t>(mel.num_steps) * mel.n_mels);
      f.read(reinterpret_cast<char*>(mel.values.data()),
             static_cast<std::streamsize>(mel.values.size() * sizeof(float)));
      if (f) return mel;
    }
  }
  auto mel = audio::compute_mel(clip.clip_audio);
  if (cache_dir) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(&mel.num_steps), sizeof(int));
    f.write(reinterpret_cast<const char*>(&mel.n_mels), sizeof(int));
    f.write(reinterpret_cast<const char*>(&mel.hop_seconds), sizeof(double));
    f.write(reinterpret_cast<const char*>(mel.values.data()),
            static_cast<std::streamsize>(mel.values.size() * sizeof(float)));
  }
  return mel;
}

// Face crop for frame t, resized to H×H.
inline img::Image face_crop(const data::LoadedClip& clip, int t, int H) {
  const auto& box = clip.boxes[t];
  check(box.width() > 0 && box.height() > 0, "face_crop: degenerate box");
  const auto& frame = clip.frames[t];
  check(box.x0 >= 0 && box.y0 >= 0 && box.x1 <= frame.w && box.y1 <= frame.h,
        "face_crop: box outside frame");
  img::Image crop(3, box.height(), box.width());
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < box.height(); ++i)
      for (int j = 0; j < box.width(); ++j) crop.at(c, i, j) = frame.at(c, box.y0 + i, box.x0 + j);
  return img::resize_bilinear(crop, H, H);
}

inline void log_jsonl(std::ofstream& log, const nlohmann::json& rec) {
  if (log) log << rec.dump() << "\n" << std::flush;
}

inline void abort_on_nan(double loss, long step) {
  if (!std::isfinite(loss))
    throw std::runtime_error("training aborted: non-finite loss at step " + std::to_string(step));
}

// Reference frame indices excluding [t0, t0+T): uniform with replacement.
inline std::vector<int> sample_refs_excluding(std::mt19937& rng, int len, int t0, int T, int n) {
  std::vector<int> pool;
  for (int i = 0; i < len; ++i)
    if (i < t0 || i >= t0 + T) pool.push_back(i);
  if (pool.empty()) pool.push_back(0);  // degenerate clip: fall back to frame 0
  std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

// ---------------------------------------------------------------------------
// stage 1
// ---------------------------------------------------------------------------

struct Stage1Result {
  std::string checkpoint_path;
  double final_loss = 0.0;
  long steps_run = 0;
};

template <typename Model>
Stage1Result train_stage1_model(Model& model, ParamMap<F>& params, const cfg::RunConfig& rc,
                                const std::vector<data::LoadedClip>& clips,
                                const std::vector<audio::MelSpectrogram>& mels,
                                const std::string& out_dir, const std::string& ckpt_name,
                                const std::string& resume_path = "") {
  check(!clips.empty(), "train_stage1: no clips");
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);

  Adam<F> opt(params.tensors(), static_cast<F>(rc.lr), static_cast<F>(rc.beta1),
              static_cast<F>(rc.beta2));
  std::mt19937 rng(rc.seed);
  if (!resume_path.empty()) {
    auto c = ckpt::load_checkpoint(resume_path);
    c.load_params(params);
    ckpt::restore_adam_state(c, params, opt);
    if (c.config.contains("rng_state"))
      rng_from_string(rng, c.config.at("rng_state").get<std::string>());
  }

  auto save = [&](const std::string& path) {
    ckpt::Checkpoint c;
    c.kind = "stage1";
    c.config = rc.to_json();
    c.config["rng_state"] = rng_to_string(rng);
    c.add_params(params);
    ckpt::add_adam_state(c, params, opt);
    ckpt::save_checkpoint(c, path);
  };

  std::uniform_int_distribution<int> pick_clip(0, static_cast<int>(clips.size()) - 1);
  double last_loss = 0.0;
  while (opt.step_count() < rc.steps) {
    long step = opt.step_count() + 1;
    const auto& clip = clips[pick_clip(rng)];
    const auto& mel = mels[&clip - clips.data()];
    int len = static_cast<int>(clip.landmarks.frames.size());
    check(len >= rc.T, "train_stage1: clip shorter than T");
    std::uniform_int_distribution<int> pick_start(0, len - rc.T);
    int t0 = pick_start(rng);

    std::vector<audio::MelChunk> chunks;
    std::vector<lm::LandmarkSet> pose, targets;
    for (int t = t0; t < t0 + rc.T; ++t) {
      chunks.push_back(audio::chunk_for_frame(mel, t));
      pose.push_back(clip.landmarks.frames[t]);
      targets.push_back(clip.landmarks.frames[t]);
    }
    std::vector<lm::LandmarkSet> refs;
    for (int i : sample_refs_excluding(rng, len, t0, rc.T, rc.n_refs))
      refs.push_back(clip.landmarks.frames[i]);

    auto gt_lip = gen::group_targets<F>(targets, lm::kLipStart, lm::kLipCount);
    auto gt_jaw = gen::group_targets<F>(targets, lm::kJawStart, lm::kJawCount);

    for (auto& p : params.items) p.second.zero_grad();
    auto out = model.forward(chunks, pose, refs);
    auto l1 = gen::loss_l1(out.lip, out.jaw, gt_lip, gt_jaw);
    auto lc = gen::loss_continuity(out.lip, out.jaw, gt_lip, gt_jaw);
    auto total = add(l1, scale(lc, static_cast<F>(rc.lambda_c)));
    last_loss = total.item();
    abort_on_nan(last_loss, step);
    total.backward();
    opt.step();

    if (step % rc.log_every == 0 || step == rc.steps)
      log_jsonl(log, {{"step", step},
                      {"loss", last_loss},
                      {"l1", l1.item()},
                      {"continuity", lc.item()}});
    if (step % rc.ckpt_every == 0 && step != rc.steps)
      save(out_dir + "/" + ckpt_name + "_step" + std::to_string(step) + ".ckpt");
  }

  Stage1Result res;
  res.checkpoint_path = out_dir + "/" + ckpt_name + ".ckpt";
  res.final_loss = last_loss;
  res.steps_run = opt.step_count();
  save(res.checkpoint_path);
  return res;
}

inline Stage1Result train_stage1(const cfg::RunConfig& rc, const std::vector<data::ClipRecord>& records,
                                 const std::string& out_dir, const std::string& resume_path = "") {
  std::vector<data::LoadedClip> clips;
  std::vector<audio::MelSpectrogram> mels;
  for (const auto& r : records) {
    clips.push_back(data::load_clip(r));
    mels.push_back(mel_for(clips.back()));
  }
  std::mt19937 init_rng(rc.seed);
  gen::LandmarkGenerator<F> model(rc.generator_config(), init_rng);
  ParamMap<F> params;
  model.register_params(params, "gen");
  return train_stage1_model(model, params, rc, clips, mels, out_dir, "stage1", resume_path);
}

// Identical harness around the LSTM baseline.
inline Stage1Result train_stage1_baseline(const cfg::RunConfig& rc,
                                          const std::vector<data::ClipRecord>& records,
                                          const std::string& out_dir) {
  std::vector<data::LoadedClip> clips;
  std::vector<audio::MelSpectrogram> mels;
  for (const auto& r : records) {
    clips.push_back(data::load_clip(r));
    mels.push_back(mel_for(clips.back()));
  }
  std::mt19937 init_rng(rc.seed);
  gen::LstmBaseline<F> model(rc.generator_config(), init_rng);
  ParamMap<F> params;
  model.register_params(params, "lstm");
  return train_stage1_model(model, params, rc, clips, mels, out_dir, "stage1_lstm");
}

// ---------------------------------------------------------------------------
// stage 2
// ---------------------------------------------------------------------------

struct Stage2Models {
  align::AlignModel<F> aligner;
  xlate::TranslationModel<F> translator;
  xlate::RenderAudioEncoder<F> audio_enc;
  loss::PatchDiscriminator<F> disc;
  ParamMap<F> gen_params;   // aligner + translator + audio encoder
  ParamMap<F> disc_params;

  explicit Stage2Models(const cfg::RunConfig& rc) {
    std::mt19937 rng(rc.seed);
    aligner = align::AlignModel<F>(rc.align_config(), rng);
    translator = xlate::TranslationModel<F>(rc.translation_config(), rng);
    audio_enc = xlate::RenderAudioEncoder<F>(rc.d, rng);
    disc = loss::PatchDiscriminator<F>(rc.ndf, rng);
    aligner.register_params(gen_params, "align");
    translator.register_params(gen_params, "xlate");
    audio_enc.register_params(gen_params, "aud");
    disc.register_params(disc_params, "disc");
  }
};

// Conditioning sketches for frame t (indices clamped to the clip).
inline std::vector<lm::Sketch> sketches_around(const lm::LandmarkSequence& seq, int t, int k, int H) {
  std::vector<lm::Sketch> out;
  int len = static_cast<int>(seq.frames.size());
  for (int i = t - k; i <= t + k; ++i) {
    int j = std::clamp(i, 0, len - 1);
    out.push_back(lm::rasterize_sketch(seq.frames[j], H, H));
  }
  return out;
}

struct Stage2Result {
  std::string checkpoint_path;
  double final_loss = 0.0;
  long steps_run = 0;
};

inline Stage2Result train_stage2(const cfg::RunConfig& rc, const std::vector<data::ClipRecord>& records,
                                 const std::string& out_dir, const std::string& resume_path = "",
                                 const loss::PerceptualBackend<F>* backend_override = nullptr) {
  check(!records.empty(), "train_stage2: no clips");
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);

  std::vector<data::LoadedClip> clips;
  std::vector<audio::MelSpectrogram> mels;
  for (const auto& r : records) {
    clips.push_back(data::load_clip(r));
    mels.push_back(mel_for(clips.back()));
  }

  Stage2Models m(rc);
  loss::RandomConvBackend<F> default_backend;
  const loss::PerceptualBackend<F>& backend =
      backend_override ? *backend_override : static_cast<loss::PerceptualBackend<F>&>(default_backend);

  Adam<F> g_opt(m.gen_params.tensors(), static_cast<F>(rc.lr), static_cast<F>(rc.beta1),
                static_cast<F>(rc.beta2));
  Adam<F> d_opt(m.disc_params.tensors(), static_cast<F>(rc.lr), static_cast<F>(rc.beta1),
                static_cast<F>(rc.beta2));
  std::mt19937 rng(rc.seed);
  if (!resume_path.empty()) {
    auto c = ckpt::load_checkpoint(resume_path);
    // generator and discriminator states are stored in one container; split by prefix
    ParamMap<F> all;
    for (auto& [n, t] : m.gen_params.items) all.add(n, t);
    for (auto& [n, t] : m.disc_params.items) all.add(n, t);
    c.load_params(all);
    // Adam moments were saved per sub-map with prefixed names
    ckpt::Checkpoint cg, cd;
    cg.step = c.config.at("g_step").get<long>();
    cd.step = c.config.at("d_step").get<long>();
    for (std::size_t i = 0; i < c.names.size(); ++i) {
      cg.add(c.names[i].first, c.names[i].second, c.blobs[i]);
      cd.add(c.names[i].first, c.names[i].second, c.blobs[i]);
    }
    ckpt::restore_adam_state(cg, m.gen_params, g_opt);
    ckpt::restore_adam_state(cd, m.disc_params, d_opt);
    if (c.config.contains("rng_state"))
      rng_from_string(rng, c.config.at("rng_state").get<std::string>());
  }

  auto save = [&](const std::string& path) {
    ckpt::Checkpoint c;
    c.kind = "stage2";
    c.config = rc.to_json();
    c.config["rng_state"] = rng_to_string(rng);
    c.config["g_step"] = g_opt.step_count();
    c.config["d_step"] = d_opt.step_count();
    c.add_params(m.gen_params);
    c.add_params(m.disc_params);
    ckpt::add_adam_state(c, m.gen_params, g_opt);
    ckpt::add_adam_state(c, m.disc_params, d_opt);
    c.step = g_opt.step_count();
    ckpt::save_checkpoint(c, path);
  };

  std::uniform_int_distribution<int> pick_clip(0, static_cast<int>(clips.size()) - 1);
  double last_loss = 0.0;
  while (g_opt.step_count() < rc.steps) {
    long step = g_opt.step_count() + 1;
    int ci = pick_clip(rng);
    const auto& clip = clips[ci];
    const auto& mel = mels[ci];
    int len = static_cast<int>(clip.frames.size());
    std::uniform_int_distribution<int> pick_t(0, len - 1);
    int t = pick_t(rng);

    // target and conditioning
    auto gt = img::to_tensor<F>(face_crop(clip, t, rc.H));
    lm::FaceFrame full;
    full.pixels = img::from_tensor(gt);
    auto masked = lm::mask_lower_half(full);
    auto target_sketches = sketches_around(clip.landmarks, t, rc.k, rc.H);

    // references (never the target frame)
    std::vector<lm::FaceFrame> ref_imgs;
    std::vector<lm::Sketch> ref_sketches;
    for (int ri : sample_refs_excluding(rng, len, t, 1, rc.n_train_refs)) {
      lm::FaceFrame rf;
      rf.pixels = face_crop(clip, ri, rc.H);
      ref_imgs.push_back(rf);
      ref_sketches.push_back(lm::rasterize_sketch(clip.landmarks.frames[ri], rc.H, rc.H));
    }

    auto agg = m.aligner.forward(ref_imgs, ref_sketches, target_sketches);
    auto a_embed = m.audio_enc(audio::chunk_for_frame(mel, t));

    xlate::TranslationInputs<F> tin;
    tin.masked_face = masked;
    tin.target_sketches = target_sketches;
    tin.agg_image = agg.agg_image;
    tin.agg_h1 = agg.agg_h1;
    tin.agg_h2 = agg.agg_h2;
    tin.audio_embed = a_embed;
    auto gen_img = m.translator.translate(tin);

    auto lw = loss::loss_warp(agg.agg_image, gt, backend);
    auto lr = loss::loss_recon(gen_img, gt, backend);
    auto ls = loss::loss_style(gen_img, gt, backend);
    auto adv = loss::loss_adversarial(gen_img, gt, m.disc);
    auto lf = loss::loss_feature_matching(gen_img, gt, m.disc);
    auto total = loss::stage2_loss(rc.weights, lw, lr, ls, adv.g_loss, lf);

    last_loss = total.item();
    abort_on_nan(last_loss, step);
    abort_on_nan(adv.d_loss.item(), step);

    for (auto& p : m.gen_params.items) p.second.zero_grad();
    total.backward();
    g_opt.step();

    for (auto& p : m.disc_params.items) p.second.zero_grad();
    adv.d_loss.backward();
    d_opt.step();

    if (step % rc.log_every == 0 || step == rc.steps)
      log_jsonl(log, {{"step", step},
                      {"loss", last_loss},
                      {"warp", lw.item()},
                      {"recon", lr.item()},
                      {"style", ls.item()},
                      {"gan", adv.g_loss.item()},
                      {"fm", lf.item()},
                      {"d_loss", adv.d_loss.item()}});
    if (step % rc.ckpt_every == 0 && step != rc.steps)
      save(out_dir + "/stage2_step" + std::to_string(step) + ".ckpt");
  }

  Stage2Result res;
  res.checkpoint_path = out_dir + "/stage2.ckpt";
  res.final_loss = last_loss;
  res.steps_run = g_opt.step_count();
  save(res.checkpoint_path);
  return res;
}

}  // namespace lap::train
