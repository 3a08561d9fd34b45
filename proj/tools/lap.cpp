// Command-line front end: dataset validation, training for both stages,
// end-to-end inference, metric evaluation, and a synthetic-clip helper.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lap/config.hpp"
#include "lap/dataset.hpp"
#include "lap/infer.hpp"
#include "lap/synth.hpp"
#include "lap/train.hpp"

namespace {

int cmd_prep(const std::string& root) {
  auto report = lap::data::ingest(root);
  nlohmann::json j;
  j["valid_clips"] = report.records.size();
  auto skipped = nlohmann::json::array();
  for (const auto& s : report.skipped) skipped.push_back({{"clip", s.clip_id}, {"reason", s.reason}});
  j["skipped"] = skipped;
  auto clips = nlohmann::json::array();
  for (const auto& r : report.records)
    clips.push_back({{"clip", r.clip_id}, {"frames", r.frame_count}});
  j["clips"] = clips;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& stage, const std::string& data_root, const std::string& out_dir,
              const std::string& config_path, const std::string& resume, bool baseline) {
  lap::cfg::RunConfig rc;
  if (!config_path.empty()) rc = lap::cfg::parse_config(config_path);
  rc.stage = stage == "landmark" ? "landmark" : "render";
  rc.validate();
  auto report = lap::data::ingest(data_root);

  nlohmann::json j;
  if (stage == "landmark") {
    auto res = baseline ? lap::train::train_stage1_baseline(rc, report.records, out_dir)
                        : lap::train::train_stage1(rc, report.records, out_dir, resume);
    j["checkpoint"] = res.checkpoint_path;
    j["final_loss"] = res.final_loss;
    j["steps"] = res.steps_run;
  } else if (stage == "render") {
    auto res = lap::train::train_stage2(rc, report.records, out_dir, resume);
    j["checkpoint"] = res.checkpoint_path;
    j["final_loss"] = res.final_loss;
    j["steps"] = res.steps_run;
  } else {
    throw std::runtime_error("train: stage must be 'landmark' or 'render'");
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_infer(const std::string& clip_dir, const std::string& audio_path,
              const std::string& stage1, const std::string& stage2, const std::string& out_dir,
              int refs, bool mux) {
  auto record = lap::data::validate_clip(clip_dir);
  std::string driving = audio_path.empty() ? record.audio : audio_path;
  auto res = lap::infer::run_inference(stage1, stage2, record, driving, out_dir, refs);

  nlohmann::json j;
  j["frames_dir"] = res.frames_dir;
  j["landmarks"] = res.landmarks_path;
  j["frame_count"] = res.frame_count;
  if (mux) {
    if (std::system("ffmpeg -version > /dev/null 2>&1") == 0) {
      std::string cmd = "ffmpeg -y -loglevel error -framerate 25 -i '" + res.frames_dir +
                        "/%06d.png' -i '" + driving + "' -c:v libx264 -pix_fmt yuv420p -shortest '" +
                        out_dir + "/video.mp4'";
      int rc = std::system(cmd.c_str());
      if (rc == 0)
        j["video"] = out_dir + "/video.mp4";
      else
        j["mux_skipped"] = "ffmpeg failed with exit code " + std::to_string(rc);
    } else {
      j["mux_skipped"] = "ffmpeg not available; frames on disk are the canonical output";
    }
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& pred_lm,
             const std::string& gt_lm) {
  auto j = lap::infer::evaluate_frames(pred, gt, pred_lm, gt_lm);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_synth(const std::string& out_root, const std::string& clip_id, int frames, int size) {
  auto record = lap::synth::make_synthetic_clip(out_root, clip_id, frames, size);
  nlohmann::json j;
  j["clip"] = record.clip_id;
  j["frames"] = record.frame_count;
  j["frames_dir"] = record.frames_dir;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-driven talking-face pipeline"};
  app.require_subcommand(1);

  std::string data_root, out_dir, config_path, resume, stage;
  std::string clip_dir, audio_path, stage1_ckpt, stage2_ckpt, pred, gt, pred_lm, gt_lm, clip_id;
  int refs = -1, frames = 64, size = 128;
  bool baseline = false, mux = false;

  auto* prep = app.add_subcommand("prep", "validate a dataset directory");
  prep->add_option("root", data_root, "dataset root")->required();

  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--stage", stage, "landmark | render")
      ->required()
      ->check(CLI::IsMember({"landmark", "render"}));
  train->add_option("--data", data_root, "dataset root")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_flag("--baseline", baseline, "train the LSTM baseline (landmark stage only)");

  auto* infer = app.add_subcommand("infer", "run end-to-end inference on a clip");
  infer->add_option("--clip", clip_dir, "clip directory")->required();
  infer->add_option("--audio", audio_path, "driving audio WAV (defaults to the clip's own)");
  infer->add_option("--stage1", stage1_ckpt, "stage-1 checkpoint")->required();
  infer->add_option("--stage2", stage2_ckpt, "stage-2 checkpoint")->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_option("--refs", refs, "override the reference image count");
  infer->add_flag("--mux", mux, "mux frames and audio into video.mp4 when ffmpeg is available");

  auto* eval = app.add_subcommand("eval", "compare predicted frames against ground truth");
  eval->add_option("--pred", pred, "predicted frames directory")->required();
  eval->add_option("--gt", gt, "ground-truth frames directory")->required();
  eval->add_option("--pred-landmarks", pred_lm, "predicted landmark JSONL");
  eval->add_option("--gt-landmarks", gt_lm, "ground-truth landmark JSONL");

  auto* synth = app.add_subcommand("synth", "generate a synthetic toy clip");
  synth->add_option("--out", out_dir, "dataset root to write into")->required();
  synth->add_option("--clip-id", clip_id, "clip directory name")->required();
  synth->add_option("--frames", frames, "frame count");
  synth->add_option("--size", size, "square frame size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prep->parsed()) return cmd_prep(data_root);
    if (train->parsed()) return cmd_train(stage, data_root, out_dir, config_path, resume, baseline);
    if (infer->parsed())
      return cmd_infer(clip_dir, audio_path, stage1_ckpt, stage2_ckpt, out_dir, refs, mux);
    if (eval->parsed()) return cmd_eval(pred, gt, pred_lm, gt_lm);
    if (synth->parsed()) return cmd_synth(out_dir, clip_id, frames, size);
  } catch (const std::exception& ex) {
    nlohmann::json err;
    err["error"] = ex.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
