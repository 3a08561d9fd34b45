#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lap/config.hpp"
#include "lap/infer.hpp"
#include "lap/synth.hpp"
#include "lap/train.hpp"

using namespace lap;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lap_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny stage-1 configuration used throughout; everything fits one CPU core.
cfg::RunConfig tiny_stage1() {
  cfg::RunConfig rc;
  rc.d = 32;
  rc.depth = 1;
  rc.heads = 2;
  rc.n_refs = 4;
  rc.lr = 1e-3;
  rc.log_every = 1;
  rc.ckpt_every = 1000;
  return rc;
}

// Tiny stage-2 configuration on 16×16 crops.
cfg::RunConfig tiny_stage2() {
  cfg::RunConfig rc;
  rc.stage = "render";
  rc.d = 32;
  rc.depth = 1;
  rc.heads = 2;
  rc.H = 16;
  rc.c1 = 16;
  rc.c2 = 8;
  rc.base = 8;
  rc.spade_hidden = 4;
  rc.ndf = 4;
  rc.n_train_refs = 2;
  rc.log_every = 1;
  rc.ckpt_every = 1000;
  return rc;
}

std::vector<nlohmann::json> read_log(const fs::path& dir) {
  std::ifstream f(dir / "train_log.jsonl");
  REQUIRE(f.good());
  std::vector<nlohmann::json> recs;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) recs.push_back(nlohmann::json::parse(line));
  return recs;
}

}  // namespace

TEST_CASE("config: defaults, file parsing, and strict keys") {
  cfg::RunConfig d;
  REQUIRE(d.T == 5);
  REQUIRE(d.n_refs == 15);
  REQUIRE(d.d == 512);
  REQUIRE(d.H == 128);
  REQUIRE(d.k == 2);
  REQUIRE(d.n_train_refs == 3);
  REQUIRE(d.inference_ref_fraction == Catch::Approx(0.2));
  REQUIRE(d.weights.lambda_w == Catch::Approx(2.5));
  REQUIRE(d.weights.lambda_r == Catch::Approx(4.0));
  REQUIRE(d.weights.lambda_s == Catch::Approx(1000.0));
  REQUIRE(d.weights.lambda_g == Catch::Approx(0.25));
  REQUIRE(d.weights.lambda_f == Catch::Approx(2.5));
  REQUIRE_NOTHROW(d.validate());

  auto c = cfg::parse_config_text(
      "# a comment\n"
      "[model]\n"
      "d = 64\n"
      "lambda_s = 500  # inline comment\n"
      "stage = \"render\"\n"
      "seed = 11\n");
  REQUIRE(c.d == 64);
  REQUIRE(c.weights.lambda_s == Catch::Approx(500.0));
  REQUIRE(c.stage == "render");
  REQUIRE(c.seed == 11u);
  REQUIRE(c.T == 5);  // untouched keys keep their defaults

  REQUIRE_THROWS_WITH(cfg::parse_config_text("dd = 64\n"),
                      Catch::Matchers::ContainsSubstring("unknown key"));
  REQUIRE_THROWS_WITH(cfg::parse_config_text("just some words\n"),
                      Catch::Matchers::ContainsSubstring("key = value"));

  // round trip through JSON preserves every field
  auto j = c.to_json();
  auto c2 = cfg::RunConfig::from_json(j);
  REQUIRE(c2.to_json() == j);

  // runtime bookkeeping keys stored by checkpoints are tolerated
  j["rng_state"] = "1 2 3";
  j["g_step"] = 4;
  j["d_step"] = 4;
  REQUIRE_NOTHROW(cfg::RunConfig::from_json(j));

  cfg::RunConfig bad;
  bad.lr = -1.0;
  REQUIRE_THROWS(bad.validate());
  bad = cfg::RunConfig{};
  bad.weights.lambda_s = -1.0;
  REQUIRE_THROWS(bad.validate());
}

TEST_CASE("checkpoint: round trip with optimizer state") {
  auto dir = fresh_dir("ckpt");
  std::mt19937 rng(3);

  ParamMap<float> params;
  params.add("a.w", param_uniform<float>({3, 4}, 0.5f, rng));
  params.add("b.b", param_const<float>({4}, 0.25f));
  Adam<float> opt(params.tensors(), 1e-2f);

  // take a couple of optimizer steps so the moments are nontrivial
  for (int s = 0; s < 3; ++s) {
    for (auto& [n, t] : params.items) t.zero_grad();
    auto loss = sum_all(square(params.items[0].second));
    loss = add(loss, sum_all(square(params.items[1].second)));
    loss.backward();
    opt.step();
  }

  ckpt::Checkpoint c;
  c.kind = "stage1";
  c.config = {{"d", 32}, {"seed", 7}};
  c.add_params(params);
  ckpt::add_adam_state(c, params, opt);
  auto path = (dir / "t.ckpt").string();
  ckpt::save_checkpoint(c, path);

  auto c2 = ckpt::load_checkpoint(path);
  REQUIRE(c2.kind == "stage1");
  REQUIRE(c2.step == 3);
  REQUIRE(c2.config.at("d").get<int>() == 32);
  REQUIRE(c2.contains("a.w"));
  REQUIRE(c2.contains("adam.m.a.w"));
  REQUIRE(c2.contains("adam.v.b.b"));
  REQUIRE_THROWS_WITH(c2.find("missing"), Catch::Matchers::ContainsSubstring("missing"));

  // restored parameters and moments match the originals exactly
  ParamMap<float> params2;
  params2.add("a.w", Tensor<float>::zeros({3, 4}));
  params2.add("b.b", Tensor<float>::zeros({4}));
  c2.load_params(params2);
  for (std::size_t i = 0; i < params.items.size(); ++i)
    for (std::size_t k = 0; k < params.items[i].second.size(); ++k)
      REQUIRE(params2.items[i].second.data()[k] == params.items[i].second.data()[k]);

  Adam<float> opt2(params2.tensors(), 1e-2f);
  ckpt::restore_adam_state(c2, params2, opt2);
  REQUIRE(opt2.step_count() == 3);
  for (std::size_t i = 0; i < opt.moments1().size(); ++i)
    for (std::size_t k = 0; k < opt.moments1()[i].size(); ++k) {
      REQUIRE(opt2.moments1()[i][k] == opt.moments1()[i][k]);
      REQUIRE(opt2.moments2()[i][k] == opt.moments2()[i][k]);
    }

  // shape mismatch on load is an error
  ParamMap<float> wrong;
  wrong.add("a.w", Tensor<float>::zeros({2, 2}));
  REQUIRE_THROWS_WITH(c2.load_params(wrong), Catch::Matchers::ContainsSubstring("size mismatch"));

  // corrupt magic is rejected
  {
    std::ofstream f(dir / "bad.ckpt", std::ios::binary);
    f << "NOPEgarbage";
  }
  REQUIRE_THROWS_WITH(ckpt::load_checkpoint((dir / "bad.ckpt").string()),
                      Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("synthetic clips pass validation") {
  auto root = fresh_dir("synth");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 20, 32);
  REQUIRE(rec.frame_count == 20);
  REQUIRE(fs::exists(rec.audio));
  REQUIRE(fs::exists(rec.landmarks));
  REQUIRE(fs::exists(rec.face_boxes));
  REQUIRE(data::list_frame_files(rec.frames_dir).size() == 20);

  auto seq = lm::read_landmark_file(rec.landmarks);
  REQUIRE(seq.frames.size() == 20);
  // the mouth opens and closes: lip extent varies across the clip
  auto extent = [](const lm::LandmarkSet& s) {
    float lo = 1.0f, hi = 0.0f;
    for (const auto& p : s.lip()) {
      lo = std::min(lo, p.y);
      hi = std::max(hi, p.y);
    }
    return hi - lo;
  };
  float mn = 1.0f, mx = 0.0f;
  for (const auto& f : seq.frames) {
    mn = std::min(mn, extent(f));
    mx = std::max(mx, extent(f));
  }
  REQUIRE(mx > 1.5f * mn);
}

TEST_CASE("ingest: valid clips load, defective clips land in the skip report") {
  auto root = fresh_dir("ingest");
  synth::make_synthetic_clip(root.string(), "good", 16, 32);

  // clip with frames but a truncated landmark file
  synth::make_synthetic_clip(root.string(), "short_landmarks", 16, 32);
  {
    auto seq = lm::read_landmark_file((root / "short_landmarks/landmarks.jsonl").string());
    seq.frames.pop_back();
    lm::write_landmark_file(seq, (root / "short_landmarks/landmarks.jsonl").string());
  }

  // clip directory with no frames at all
  fs::create_directories(root / "empty/frames");

  auto report = data::ingest(root.string());
  REQUIRE(report.records.size() == 1);
  REQUIRE(report.records[0].clip_id == "good");
  REQUIRE(report.skipped.size() == 2);
  for (const auto& s : report.skipped) {
    if (s.clip_id == "short_landmarks")
      REQUIRE_THAT(s.reason, Catch::Matchers::ContainsSubstring("count mismatch"));
    else {
      REQUIRE(s.clip_id == "empty");
      REQUIRE_THAT(s.reason, Catch::Matchers::ContainsSubstring("no frames"));
    }
  }

  REQUIRE_THROWS_WITH(data::ingest((root / "nowhere").string()),
                      Catch::Matchers::ContainsSubstring("not a directory"));
  auto only_bad = fresh_dir("ingest_bad");
  fs::create_directories(only_bad / "broken/frames");
  REQUIRE_THROWS_WITH(data::ingest(only_bad.string()),
                      Catch::Matchers::ContainsSubstring("zero valid clips"));
}

TEST_CASE("mel cache: second computation is read back bit-exactly") {
  auto root = fresh_dir("melcache");
  auto cache = fresh_dir("melcache_cache");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 16, 32);
  auto clip = data::load_clip(rec);

  setenv("LAP_CACHE_DIR", cache.string().c_str(), 1);
  auto m1 = train::mel_for(clip);
  bool cached = false;
  for (const auto& e : fs::directory_iterator(cache))
    if (e.path().extension() == ".mel") cached = true;
  REQUIRE(cached);
  auto m2 = train::mel_for(clip);
  unsetenv("LAP_CACHE_DIR");

  REQUIRE(m1.num_steps == m2.num_steps);
  REQUIRE(m1.n_mels == m2.n_mels);
  REQUIRE(m1.values == m2.values);

  // without the cache directory the values are the same
  auto m3 = train::mel_for(clip);
  REQUIRE(m1.values == m3.values);
}

TEST_CASE("stage-1 training: loss goes down and logs every component") {
  auto root = fresh_dir("s1_data");
  auto out = fresh_dir("s1_out");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 24, 32);

  auto rc = tiny_stage1();
  rc.steps = 60;
  auto res = train::train_stage1(rc, {rec}, out.string());
  REQUIRE(res.steps_run == 60);
  REQUIRE(std::isfinite(res.final_loss));
  REQUIRE(fs::exists(res.checkpoint_path));

  auto log = read_log(out);
  REQUIRE(log.size() == 60);
  for (const auto& r : log) {
    REQUIRE(r.contains("l1"));
    REQUIRE(r.contains("continuity"));
    REQUIRE(std::isfinite(r.at("loss").get<double>()));
  }
  auto mean_of = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += log[i].at("loss").get<double>();
    return s / (b - a);
  };
  REQUIRE(mean_of(55, 60) < mean_of(0, 5));
}

TEST_CASE("stage-1 resume reproduces the uninterrupted run") {
  auto root = fresh_dir("resume_data");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 24, 32);

  auto rc = tiny_stage1();
  rc.steps = 12;
  rc.ckpt_every = 6;

  auto out_a = fresh_dir("resume_a");
  auto res_a = train::train_stage1(rc, {rec}, out_a.string());

  auto out_b = fresh_dir("resume_b");
  auto mid = (out_a / "stage1_step6.ckpt").string();
  REQUIRE(fs::exists(mid));
  auto res_b = train::train_stage1(rc, {rec}, out_b.string(), mid);

  REQUIRE(res_b.steps_run == 12);
  REQUIRE(res_b.final_loss == Catch::Approx(res_a.final_loss).margin(1e-5));

  // final parameters agree as well
  auto ca = ckpt::load_checkpoint(res_a.checkpoint_path);
  auto cb = ckpt::load_checkpoint(res_b.checkpoint_path);
  REQUIRE(ca.names.size() == cb.names.size());
  double max_diff = 0;
  for (std::size_t i = 0; i < ca.names.size(); ++i) {
    const auto& vb = cb.find(ca.names[i].first);
    for (std::size_t k = 0; k < ca.blobs[i].size(); ++k)
      max_diff = std::max(max_diff, std::abs(double(ca.blobs[i][k]) - double(vb[k])));
  }
  REQUIRE(max_diff < 1e-5);
}

TEST_CASE("recurrent baseline trains without divergence") {
  auto root = fresh_dir("lstm_data");
  auto out = fresh_dir("lstm_out");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 24, 32);

  auto rc = tiny_stage1();
  rc.steps = 20;
  auto res = train::train_stage1_baseline(rc, {rec}, out.string());
  REQUIRE(res.steps_run == 20);
  REQUIRE(std::isfinite(res.final_loss));
  for (const auto& r : read_log(out)) REQUIRE(std::isfinite(r.at("loss").get<double>()));
}

TEST_CASE("non-finite losses abort with a diagnosable message") {
  REQUIRE_NOTHROW(train::abort_on_nan(1.25, 3));
  REQUIRE_THROWS_WITH(train::abort_on_nan(std::nan(""), 17),
                      Catch::Matchers::ContainsSubstring("non-finite loss at step 17"));
  REQUIRE_THROWS_WITH(train::abort_on_nan(std::numeric_limits<double>::infinity(), 2),
                      Catch::Matchers::ContainsSubstring("training aborted"));
}

TEST_CASE("stage-2 joint training updates every parameter of all four nets") {
  auto root = fresh_dir("s2_data");
  auto out = fresh_dir("s2_out");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 16, 32);

  auto rc = tiny_stage2();
  rc.steps = 10;
  loss::IdentityBackend<float> id;
  auto res = train::train_stage2(rc, {rec}, out.string(), "", &id);
  REQUIRE(res.steps_run == 10);
  REQUIRE(std::isfinite(res.final_loss));

  auto log = read_log(out);
  REQUIRE(log.size() == 10);
  for (const char* key : {"warp", "recon", "style", "gan", "fm", "d_loss"})
    REQUIRE(log.back().contains(key));

  // reconstruct the seeded initialization and diff against the checkpoint
  train::Stage2Models fresh(rc);
  auto c = ckpt::load_checkpoint(res.checkpoint_path);
  auto all_changed = [&](const ParamMap<float>& params) {
    for (const auto& [name, t] : params.items) {
      const auto& trained = c.find(name);
      bool changed = false;
      for (std::size_t i = 0; i < t.size() && !changed; ++i)
        if (trained[i] != t.data()[i]) changed = true;
      INFO("parameter unchanged after training: " << name);
      REQUIRE(changed);
    }
  };
  all_changed(fresh.gen_params);
  all_changed(fresh.disc_params);
}

TEST_CASE("stage-2 resume reproduces the uninterrupted run") {
  auto root = fresh_dir("s2r_data");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 16, 32);

  auto rc = tiny_stage2();
  rc.steps = 6;
  rc.ckpt_every = 3;
  loss::IdentityBackend<float> id;

  auto out_a = fresh_dir("s2r_a");
  auto res_a = train::train_stage2(rc, {rec}, out_a.string(), "", &id);
  auto out_b = fresh_dir("s2r_b");
  auto mid = (out_a / "stage2_step3.ckpt").string();
  REQUIRE(fs::exists(mid));
  auto res_b = train::train_stage2(rc, {rec}, out_b.string(), mid, &id);

  REQUIRE(res_b.steps_run == 6);
  REQUIRE(res_b.final_loss == Catch::Approx(res_a.final_loss).margin(1e-4));
}

TEST_CASE("uniform reference stride covers the clip") {
  auto idx = infer::uniform_stride_indices(20, 4);
  REQUIRE(idx == std::vector<int>{2, 7, 12, 17});
  REQUIRE(infer::uniform_stride_indices(10, 1) == std::vector<int>{5});
  // more references than frames clamps to one per frame
  REQUIRE(infer::uniform_stride_indices(3, 10) == std::vector<int>{0, 1, 2});
  for (int i : infer::uniform_stride_indices(7, 5)) {
    REQUIRE(i >= 0);
    REQUIRE(i < 7);
  }
  REQUIRE_THROWS(infer::uniform_stride_indices(0, 3));
}

TEST_CASE("driving audio may run short by at most half a second") {
  audio::AudioClip a;
  a.sample_rate = 16000;
  a.samples.assign(16000, 0.0f);  // 1 s of audio
  REQUIRE_NOTHROW(infer::check_audio_length(a, 25));        // exact
  REQUIRE_NOTHROW(infer::check_audio_length(a, 35));        // 0.4 s short
  REQUIRE_THROWS_WITH(infer::check_audio_length(a, 50),     // 1 s short
                      Catch::Matchers::ContainsSubstring("shorter"));
}

TEST_CASE("end-to-end inference: frame count, sizes, and untouched background") {
  auto root = fresh_dir("e2e_data");
  auto rec = synth::make_synthetic_clip(root.string(), "clip_a", 20, 32);

  auto rc1 = tiny_stage1();
  rc1.steps = 5;
  auto s1 = train::train_stage1(rc1, {rec}, fresh_dir("e2e_s1").string());

  auto rc2 = tiny_stage2();
  rc2.steps = 2;
  auto s2 = train::train_stage2(rc2, {rec}, fresh_dir("e2e_s2").string());

  auto out = fresh_dir("e2e_out");
  auto res = infer::run_inference(s1.checkpoint_path, s2.checkpoint_path, rec, rec.audio,
                                  out.string());
  REQUIRE(res.frame_count == 20);
  auto files = data::list_frame_files(res.frames_dir);
  REQUIRE(files.size() == 20);

  auto predicted = lm::read_landmark_file(res.landmarks_path);
  REQUIRE(predicted.frames.size() == 20);
  auto source = lm::read_landmark_file(rec.landmarks);
  // pose landmarks are carried over from the source verbatim
  for (std::size_t t = 0; t < 20; ++t)
    for (int i = lm::kPoseStart; i < lm::kTotal; ++i) {
      REQUIRE(predicted.frames[t][i].x == source.frames[t][i].x);
      REQUIRE(predicted.frames[t][i].y == source.frames[t][i].y);
    }

  // compositing leaves pixels untouched wherever the predicted-landmark mask
  // is zero (the 1/255 margin absorbs the PNG round trip)
  auto clip = data::load_clip(rec);
  for (std::size_t t : {std::size_t(0), std::size_t(12)}) {
    auto composed = img::read_png(files[t]);
    REQUIRE(composed.h == 32);
    REQUIRE(composed.w == 32);
    auto mask = lm::face_mask(predicted.frames[t], 32, 32, 2.0f);
    int checked = 0;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        if (mask.at(0, i, j) == 0.0f) {
          ++checked;
          for (int c = 0; c < 3; ++c)
            REQUIRE(composed.at(c, i, j) ==
                    Catch::Approx(clip.frames[t].at(c, i, j)).margin(1.0 / 255));
        }
    REQUIRE(checked > 0);
  }

  // rejections: swapped checkpoints and a too-short driving track
  REQUIRE_THROWS_WITH(infer::run_inference(s2.checkpoint_path, s1.checkpoint_path, rec, rec.audio,
                                           fresh_dir("e2e_bad").string()),
                      Catch::Matchers::ContainsSubstring("stage-1"));

  // the reference-count override is honored (still completes with one reference)
  auto out1 = fresh_dir("e2e_one_ref");
  auto res1 = infer::run_inference(s1.checkpoint_path, s2.checkpoint_path, rec, rec.audio,
                                   out1.string(), 1);
  REQUIRE(res1.frame_count == 20);

  // evaluation runs over the produced frames and reports sane metrics
  auto ev = infer::evaluate_frames(res.frames_dir, rec.frames_dir, res.landmarks_path,
                                   rec.landmarks);
  REQUIRE(ev.at("frames").size() == 20);
  REQUIRE(ev.at("mean_psnr").get<double>() > 0.0);
  REQUIRE(ev.at("mean_ssim").get<double>() <= 1.0);
  REQUIRE(ev.at("mean_lip_lmd").get<double>() >= 0.0);
}
