#pragma once

// Procedural toy clips for overfit experiments and end-to-end tests: a
// parametric face whose mouth opening follows a sinusoid, a tone whose
// frequency tracks the same opening, and matching landmarks/boxes on disk in
// the standard clip layout.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lap/audio.hpp"
#include "lap/dataset.hpp"
#include "lap/image.hpp"
#include "lap/landmarks.hpp"

namespace lap::synth {

inline constexpr double kPi = 3.14159265358979323846;

// Mouth opening for frame t: a slow sinusoid in [0, 1].
inline double opening_at(int t) { return 0.5 * (1.0 + std::sin(2.0 * kPi * t / 16.0)); }

// Tone frequency keyed to the mouth opening.
inline double tone_hz(double opening) { return 220.0 + 440.0 * opening; }

namespace detail {

inline void ellipse(std::vector<lm::Point>& pts, int start, int count, double cx, double cy,
                    double rx, double ry, bool full = true, double a0 = 0.0, double a1 = 2.0 * kPi) {
  for (int i = 0; i < count; ++i) {
    double t = full ? a0 + (a1 - a0) * i / count : a0 + (a1 - a0) * i / (count - 1);
    pts[start + i] = {static_cast<float>(cx + rx * std::cos(t)),
                      static_cast<float>(cy + ry * std::sin(t))};
  }
}

}  // namespace detail

// Canonical face landmarks at a given mouth opening; only lip and jaw points
// depend on the opening.
inline lm::LandmarkSet face_template(double opening) {
  lm::LandmarkSet s;
  auto& p = s.points;
  std::vector<lm::Point> pts(lm::kTotal);

  double mouth_cy = 0.70;
  double lip_ry = 0.025 + 0.05 * opening;
  detail::ellipse(pts, 0, 21, 0.5, mouth_cy, 0.13, lip_ry);                 // lip outer
  detail::ellipse(pts, 21, 20, 0.5, mouth_cy, 0.085, 0.6 * lip_ry);        // lip inner
  // jaw: lower arc following the chin, dropping slightly as the mouth opens
  detail::ellipse(pts, 41, 16, 0.5, 0.55 + 0.02 * opening, 0.30, 0.34 + 0.02 * opening,
                  /*full=*/false, 0.15 * kPi, 0.85 * kPi);
  detail::ellipse(pts, 57, 17, 0.5, 0.52, 0.34, 0.40, /*full=*/false, -0.1 * kPi, 1.1 * kPi);
  detail::ellipse(pts, 74, 8, 0.36, 0.36, 0.09, 0.02, /*full=*/false, kPi, 2.0 * kPi);   // brow L
  detail::ellipse(pts, 82, 8, 0.64, 0.36, 0.09, 0.02, /*full=*/false, kPi, 2.0 * kPi);   // brow R
  for (int i = 0; i < 6; ++i)                                                            // nose bridge
    pts[90 + i] = {0.5f, static_cast<float>(0.40 + 0.03 * i)};
  detail::ellipse(pts, 96, 7, 0.5, 0.585, 0.055, 0.02, /*full=*/false, 0.0, kPi);        // nose base
  detail::ellipse(pts, 103, 12, 0.40, 0.45, 0.055, 0.028);                               // eye L
  detail::ellipse(pts, 115, 12, 0.60, 0.45, 0.055, 0.028);                               // eye R
  pts[127] = {0.40f, 0.45f};  // pupils and anchors
  pts[128] = {0.60f, 0.45f};
  pts[129] = {0.5f, 0.585f};
  pts[130] = {0.5f, 0.30f};

  for (int i = 0; i < lm::kTotal; ++i) p[i] = pts[i];
  return s;
}

// Procedural face image consistent with the template's geometry.
inline img::Image render_face(double opening, int H) {
  img::Image im(3, H, H);
  double mouth_cy = 0.70;
  double lip_ry = 0.025 + 0.05 * opening;
  auto inside = [](double x, double y, double cx, double cy, double rx, double ry) {
    double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy;
  };
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < H; ++j) {
      double y = (i + 0.5) / H, x = (j + 0.5) / H;
      // background gradient
      double r = 0.16 + 0.10 * y, g = 0.22 + 0.10 * x, b = 0.35;
      double face = inside(x, y, 0.5, 0.52, 0.34, 0.40);
      if (face < 1.0) {
        double shade = 0.9 - 0.25 * face;
        r = 0.80 * shade;
        g = 0.62 * shade;
        b = 0.50 * shade;
        if (inside(x, y, 0.40, 0.45, 0.055, 0.028) < 1.0 ||
            inside(x, y, 0.60, 0.45, 0.055, 0.028) < 1.0) {
          r = g = b = 0.08;  // eyes
        }
        double mouth = inside(x, y, 0.5, mouth_cy, 0.13, lip_ry);
        if (mouth < 1.0) {
          double dark = 0.15 + 0.5 * mouth;
          r = 0.55 * dark + 0.25;
          g = 0.15 * dark;
          b = 0.18 * dark;
        }
      }
      im.at(0, i, j) = static_cast<float>(r);
      im.at(1, i, j) = static_cast<float>(g);
      im.at(2, i, j) = static_cast<float>(b);
    }
  return im;
}

// Phase-continuous tone whose frequency follows the per-frame opening.
inline audio::AudioClip make_tone(int n_frames, double fps = 25.0, int rate = 16000) {
  audio::AudioClip clip;
  clip.sample_rate = rate;
  int per_frame = static_cast<int>(rate / fps);
  double phase = 0.0;
  for (int t = 0; t < n_frames; ++t) {
    double f = tone_hz(opening_at(t));
    for (int i = 0; i < per_frame; ++i) {
      phase += 2.0 * kPi * f / rate;
      clip.samples.push_back(static_cast<float>(0.5 * std::sin(phase)));
    }
  }
  return clip;
}

// Write a full clip in the standard layout; returns its validated record.
inline data::ClipRecord make_synthetic_clip(const std::string& root, const std::string& clip_id,
                                            int n_frames, int H) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(root) / clip_id;
  fs::create_directories(dir / "frames");

  lm::LandmarkSequence seq;
  std::vector<lm::FaceBox> boxes;
  for (int t = 0; t < n_frames; ++t) {
    double o = opening_at(t);
    seq.frames.push_back(face_template(o));
    boxes.push_back({0, 0, H, H});
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", t);
    img::write_png((dir / "frames" / name).string(), render_face(o, H));
  }
  lm::write_landmark_file(seq, (dir / "landmarks.jsonl").string());
  data::write_boxes(boxes, (dir / "boxes.json").string());
  audio::write_wav((dir / "audio.wav").string(), make_tone(n_frames));
  return data::validate_clip(dir.string());
}

}  // namespace lap::synth
