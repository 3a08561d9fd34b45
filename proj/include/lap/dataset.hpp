#pragma once

// Dataset plumbing: clip records, directory validation, and loading of the
// per-clip artifacts (numbered PNG frames, 16 kHz WAV, landmark JSONL, face
// boxes).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lap/audio.hpp"
#include "lap/image.hpp"
#include "lap/landmarks.hpp"
#include "lap/tensor.hpp"

namespace lap::data {

inline constexpr double kFps = 25.0;

struct ClipRecord {
  std::string clip_id;
  std::string frames_dir;
  std::string audio;
  std::string landmarks;
  std::string face_boxes;
  int frame_count = 0;
};

struct SkipEntry {
  std::string clip_id;
  std::string reason;
};

struct IngestReport {
  std::vector<ClipRecord> records;
  std::vector<SkipEntry> skipped;
};

inline std::vector<std::string> list_frame_files(const std::string& frames_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(frames_dir)) return files;
  for (const auto& e : fs::directory_iterator(frames_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<lm::FaceBox> read_boxes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("boxes: cannot read " + path);
  auto j = nlohmann::json::parse(f);
  check(j.is_array(), "boxes: expected a JSON array");
  std::vector<lm::FaceBox> boxes;
  for (const auto& b : j) {
    lm::FaceBox box{b.at("x0").get<int>(), b.at("y0").get<int>(), b.at("x1").get<int>(),
                    b.at("y1").get<int>()};
    boxes.push_back(box);
  }
  return boxes;
}

inline void write_boxes(const std::vector<lm::FaceBox>& boxes, const std::string& path) {
  auto j = nlohmann::json::array();
  for (const auto& b : boxes) j.push_back({{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("boxes: cannot write " + path);
  f << j.dump(2) << "\n";
}

// Validate one clip directory; throws with the reason on any defect.
inline ClipRecord validate_clip(const std::string& clip_dir) {
  namespace fs = std::filesystem;
  ClipRecord r;
  r.clip_id = fs::path(clip_dir).filename().string();
  r.frames_dir = (fs::path(clip_dir) / "frames").string();
  r.audio = (fs::path(clip_dir) / "audio.wav").string();
  r.landmarks = (fs::path(clip_dir) / "landmarks.jsonl").string();
  r.face_boxes = (fs::path(clip_dir) / "boxes.json").string();

  auto frames = list_frame_files(r.frames_dir);
  if (frames.empty()) throw std::runtime_error("no frames");
  r.frame_count = static_cast<int>(frames.size());

  auto lms = lm::read_landmark_file(r.landmarks);
  if (static_cast<int>(lms.frames.size()) != r.frame_count)
    throw std::runtime_error("count mismatch: " + std::to_string(r.frame_count) + " frames vs " +
                             std::to_string(lms.frames.size()) + " landmark records");

  auto boxes = read_boxes(r.face_boxes);
  if (static_cast<int>(boxes.size()) != r.frame_count)
    throw std::runtime_error("count mismatch: " + std::to_string(r.frame_count) + " frames vs " +
                             std::to_string(boxes.size()) + " face boxes");

  auto clip_audio = audio::read_wav(r.audio);
  double audio_s = static_cast<double>(clip_audio.samples.size()) / clip_audio.sample_rate;
  double video_s = r.frame_count / kFps;
  if (std::abs(audio_s - video_s) > 1.0 / kFps)
    throw std::runtime_error("audio/video duration mismatch: " + std::to_string(audio_s) +
                             "s audio vs " + std::to_string(video_s) + "s video");
  return r;
}

// Scan `<root>/<clip_id>/` directories; invalid clips land in the skip report
// with their reason. Zero valid clips is an error.
inline IngestReport ingest(const std::string& dataset_root) {
  namespace fs = std::filesystem;
  IngestReport report;
  if (!fs::is_directory(dataset_root))
    throw std::runtime_error("ingest: not a directory: " + dataset_root);
  std::vector<std::string> clip_dirs;
  for (const auto& e : fs::directory_iterator(dataset_root))
    if (e.is_directory()) clip_dirs.push_back(e.path().string());
  std::sort(clip_dirs.begin(), clip_dirs.end());

  for (const auto& dir : clip_dirs) {
    try {
      report.records.push_back(validate_clip(dir));
    } catch (const std::exception& ex) {
      report.skipped.push_back({fs::path(dir).filename().string(), ex.what()});
    }
  }
  if (report.records.empty())
    throw std::runtime_error("ingest: zero valid clips under " + dataset_root + " (" +
                             std::to_string(report.skipped.size()) + " skipped)");
  return report;
}

// Fully loaded clip, ready for training or inference.
struct LoadedClip {
  ClipRecord record;
  std::vector<img::Image> frames;
  lm::LandmarkSequence landmarks;
  std::vector<lm::FaceBox> boxes;
  audio::AudioClip clip_audio;
};

inline LoadedClip load_clip(const ClipRecord& r) {
  LoadedClip c;
  c.record = r;
  for (const auto& f : list_frame_files(r.frames_dir)) c.frames.push_back(img::read_png(f));
  c.landmarks = lm::read_landmark_file(r.landmarks);
  c.boxes = read_boxes(r.face_boxes);
  c.clip_audio = audio::read_wav(r.audio);
  return c;
}

}  // namespace lap::data
