#pragma once

// Facial landmark schema (131 points: lip 41 / jaw 16 / pose 74), JSON-lines
// sequence I/O, sketch rasterization, lower-half masking, and paste-back
// compositing.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lap/image.hpp"

namespace lap::lm {

constexpr int kLipCount = 41;
constexpr int kJawCount = 16;
constexpr int kPoseCount = 74;
constexpr int kTotal = kLipCount + kJawCount + kPoseCount;  // 131
static_assert(kTotal == 131);

// Contiguous group layout: lip [0,41), jaw [41,57), pose [57,131).
constexpr int kLipStart = 0;
constexpr int kJawStart = kLipCount;
constexpr int kPoseStart = kLipCount + kJawCount;

struct Point {
  float x = 0.0f, y = 0.0f;
};

struct LandmarkSet {
  std::array<Point, kTotal> points{};  // normalized [0,1] image coordinates

  Point& operator[](int i) { return points[static_cast<std::size_t>(i)]; }
  const Point& operator[](int i) const { return points[static_cast<std::size_t>(i)]; }

  void validate() const {
    for (const auto& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw std::invalid_argument("LandmarkSet: non-finite coordinate");
  }

  std::vector<Point> lip() const { return group(kLipStart, kLipCount); }
  std::vector<Point> jaw() const { return group(kJawStart, kJawCount); }
  std::vector<Point> pose() const { return group(kPoseStart, kPoseCount); }

 private:
  std::vector<Point> group(int start, int count) const {
    return {points.begin() + start, points.begin() + start + count};
  }
};

inline LandmarkSet assemble_full(const std::vector<Point>& lip, const std::vector<Point>& jaw,
                                 const std::vector<Point>& pose) {
  if (lip.size() != kLipCount)
    throw std::invalid_argument("assemble_full: lip group must have 41 points, got " +
                                std::to_string(lip.size()));
  if (jaw.size() != kJawCount)
    throw std::invalid_argument("assemble_full: jaw group must have 16 points, got " +
                                std::to_string(jaw.size()));
  if (pose.size() != kPoseCount)
    throw std::invalid_argument("assemble_full: pose group must have 74 points, got " +
                                std::to_string(pose.size()));
  LandmarkSet out;
  std::copy(lip.begin(), lip.end(), out.points.begin() + kLipStart);
  std::copy(jaw.begin(), jaw.end(), out.points.begin() + kJawStart);
  std::copy(pose.begin(), pose.end(), out.points.begin() + kPoseStart);
  return out;
}

struct LandmarkSequence {
  std::vector<LandmarkSet> frames;
  int fps = 25;
};

// ---------------------------------------------------------------------------
// connectivity (versioned; mirrored in assets/landmark_connectivity_v1.json)
// ---------------------------------------------------------------------------

struct Polyline {
  std::string name;
  std::vector<int> indices;
  bool closed = false;
};

constexpr int kConnectivityVersion = 1;

inline const std::vector<Polyline>& connectivity() {
  static const std::vector<Polyline> table = [] {
    auto range = [](int start, int count) {
      std::vector<int> v(count);
      for (int i = 0; i < count; ++i) v[i] = start + i;
      return v;
    };
    std::vector<Polyline> t;
    t.push_back({"lip_outer", range(0, 21), true});
    t.push_back({"lip_inner", range(21, 20), true});
    t.push_back({"jaw_line", range(kJawStart, 16), false});
    t.push_back({"face_contour", range(57, 17), false});
    t.push_back({"brow_left", range(74, 8), false});
    t.push_back({"brow_right", range(82, 8), false});
    t.push_back({"nose_bridge", range(90, 6), false});
    t.push_back({"nose_base", range(96, 7), false});
    t.push_back({"eye_left", range(103, 12), true});
    t.push_back({"eye_right", range(115, 12), true});
    // indices 127..130 (pupils + forehead anchors) carry no polyline
    return t;
  }();
  return table;
}

inline nlohmann::json connectivity_json() {
  nlohmann::json j;
  j["version"] = kConnectivityVersion;
  j["groups"] = {{"lip", {kLipStart, kLipCount}},
                 {"jaw", {kJawStart, kJawCount}},
                 {"pose", {kPoseStart, kPoseCount}}};
  j["polylines"] = nlohmann::json::array();
  for (const auto& p : connectivity())
    j["polylines"].push_back({{"name", p.name}, {"indices", p.indices}, {"closed", p.closed}});
  return j;
}

// ---------------------------------------------------------------------------
// JSON-lines sequence I/O
// ---------------------------------------------------------------------------

inline LandmarkSequence read_landmark_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_landmark_file: cannot open " + path);
  LandmarkSequence seq;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_landmark_file: invalid JSON at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    int frame = j.value("frame", static_cast<int>(seq.frames.size()));
    const auto& pts = j.at("points");
    if (pts.size() != kTotal)
      throw std::runtime_error("read_landmark_file: frame " + std::to_string(frame) + " has " +
                               std::to_string(pts.size()) + " points, expected 131");
    LandmarkSet set;
    for (int i = 0; i < kTotal; ++i) {
      set[i].x = pts[i][0].get<float>();
      set[i].y = pts[i][1].get<float>();
    }
    set.validate();
    seq.frames.push_back(set);
  }
  if (seq.frames.empty()) throw std::runtime_error("read_landmark_file: no frames in " + path);
  return seq;
}

inline void write_landmark_file(const LandmarkSequence& seq, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_landmark_file: cannot open " + path);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    nlohmann::json j;
    j["frame"] = t;
    auto pts = nlohmann::json::array();
    for (const auto& p : seq.frames[t].points) pts.push_back({p.x, p.y});
    j["points"] = std::move(pts);
    f << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// sketch rasterization
// ---------------------------------------------------------------------------

struct Sketch {
  img::Image pixels;  // 3×H×W in [0,1]
};

struct FaceFrame {
  img::Image pixels;  // 3×H×W in [0,1]
  bool masked_lower_half = false;
};

namespace detail {

// Distance from pixel center to segment; coverage falls off linearly within
// one pixel, which keeps the drawing equivariant under integer shifts.
inline void draw_segment(img::Image& im, float x0, float y0, float x1, float y1) {
  float minx = std::min(x0, x1) - 1.5f, maxx = std::max(x0, x1) + 1.5f;
  float miny = std::min(y0, y1) - 1.5f, maxy = std::max(y0, y1) + 1.5f;
  int j0 = std::max(0, static_cast<int>(std::floor(minx)));
  int j1 = std::min(im.w - 1, static_cast<int>(std::ceil(maxx)));
  int i0 = std::max(0, static_cast<int>(std::floor(miny)));
  int i1 = std::min(im.h - 1, static_cast<int>(std::ceil(maxy)));
  float dx = x1 - x0, dy = y1 - y0;
  float len2 = dx * dx + dy * dy;
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      float px = j + 0.5f, py = i + 0.5f;
      float t = len2 > 0.0f ? std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0f, 1.0f)
                            : 0.0f;
      float qx = x0 + t * dx - px, qy = y0 + t * dy - py;
      float cov = std::clamp(1.0f - std::sqrt(qx * qx + qy * qy), 0.0f, 1.0f);
      if (cov <= 0.0f) continue;
      for (int c = 0; c < 3; ++c) im.at(c, i, j) = std::max(im.at(c, i, j), cov);
    }
}

}  // namespace detail

inline Sketch rasterize_sketch(const LandmarkSet& lm, int h = 128, int w = 128) {
  lm.validate();
  Sketch sk;
  sk.pixels = img::Image(3, h, w, 0.0f);
  auto px = [&](const Point& p) {
    // clip out-of-range coordinates to the canvas
    return std::clamp(p.x, 0.0f, 1.0f) * w;
  };
  auto py = [&](const Point& p) { return std::clamp(p.y, 0.0f, 1.0f) * h; };
  for (const auto& poly : connectivity()) {
    int n = static_cast<int>(poly.indices.size());
    int segs = poly.closed ? n : n - 1;
    for (int s = 0; s < segs; ++s) {
      const Point& a = lm[poly.indices[s]];
      const Point& b = lm[poly.indices[(s + 1) % n]];
      detail::draw_segment(sk.pixels, px(a), py(a), px(b), py(b));
    }
  }
  return sk;
}

inline FaceFrame mask_lower_half(const FaceFrame& frame) {
  FaceFrame out = frame;
  for (int c = 0; c < out.pixels.c; ++c)
    for (int i = out.pixels.h / 2; i < out.pixels.h; ++i)
      for (int j = 0; j < out.pixels.w; ++j) out.pixels.at(c, i, j) = 0.0f;
  out.masked_lower_half = true;
  return out;
}

// ---------------------------------------------------------------------------
// paste-back compositing
// ---------------------------------------------------------------------------

struct FaceBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel box in the original frame

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

namespace detail {

// Andrew's monotone chain; returns the hull in counterclockwise order.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  int n = static_cast<int>(pts.size());
  if (n < 3) return pts;
  std::vector<Point> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline bool inside_hull(const std::vector<Point>& hull, float x, float y) {
  int n = static_cast<int>(hull.size());
  if (n < 3) return false;
  for (int i = 0; i < n; ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % n];
    if ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) < 0.0f) return false;
  }
  return true;
}

}  // namespace detail

// Face-shaped mask for compositing: convex hull of the landmark set filled at
// box resolution, Gaussian-blurred, and renormalized to peak 1.
inline img::Image face_mask(const LandmarkSet& lm, int h, int w, float sigma) {
  std::vector<Point> pts(lm.points.begin(), lm.points.end());
  for (auto& p : pts) {
    p.x *= w;
    p.y *= h;
  }
  auto hull = detail::convex_hull(pts);
  img::Image mask(1, h, w, 0.0f);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (detail::inside_hull(hull, j + 0.5f, i + 0.5f)) mask.at(0, i, j) = 1.0f;
  mask = img::gaussian_blur(mask, sigma);
  float mx = *std::max_element(mask.data.begin(), mask.data.end());
  if (mx > 0.0f)
    for (auto& v : mask.data) v /= mx;
  return mask;
}

// Composite the generated face into the original frame through the smoothed
// face mask: box region = m·resized(generated) + (1−m)·original.
inline img::Image paste_back(const FaceFrame& generated, const img::Image& original,
                             const FaceBox& box, const LandmarkSet& lm, float sigma) {
  if (box.width() <= 0 || box.height() <= 0)
    throw std::invalid_argument("paste_back: degenerate face box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > original.w || box.y1 > original.h)
    throw std::invalid_argument("paste_back: face box outside the frame");
  img::Image out = original;
  img::Image face = img::resize_bilinear(generated.pixels, box.height(), box.width());
  img::Image mask = face_mask(lm, box.height(), box.width(), sigma);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < box.height(); ++i)
      for (int j = 0; j < box.width(); ++j) {
        float m = mask.at(0, i, j);
        float& o = out.at(c, box.y0 + i, box.x0 + j);
        o = m * face.at(c, i, j) + (1.0f - m) * o;
      }
  return out;
}

}  // namespace lap::lm
