#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "lap/landmarks.hpp"

using namespace lap::lm;

namespace {

LandmarkSet random_set(std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(0.05f, 0.95f);
  LandmarkSet s;
  for (auto& p : s.points) {
    p.x = dist(rng);
    p.y = dist(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("group sizes partition the schema") {
  STATIC_REQUIRE(kLipCount + kJawCount + kPoseCount == 131);
  std::mt19937 rng(1);
  auto s = random_set(rng);
  REQUIRE(s.lip().size() == 41);
  REQUIRE(s.jaw().size() == 16);
  REQUIRE(s.pose().size() == 74);
}

TEST_CASE("split then assemble is the identity (property)") {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_set(rng);
    auto back = assemble_full(s.lip(), s.jaw(), s.pose());
    for (int i = 0; i < kTotal; ++i) {
      REQUIRE(back[i].x == s[i].x);
      REQUIRE(back[i].y == s[i].y);
    }
  }
}

TEST_CASE("assemble rejects wrong group sizes") {
  std::mt19937 rng(3);
  auto s = random_set(rng);
  auto lip = s.lip();
  lip.pop_back();
  CHECK_THROWS_WITH(assemble_full(lip, s.jaw(), s.pose()),
                    Catch::Matchers::ContainsSubstring("41"));
}

TEST_CASE("shifting the lip group touches only lip indices") {
  std::mt19937 rng(4);
  auto s = random_set(rng);
  auto lip = s.lip();
  for (auto& p : lip) p.x += 0.1f;
  auto shifted = assemble_full(lip, s.jaw(), s.pose());
  for (int i = 0; i < kTotal; ++i) {
    bool is_lip = i >= kLipStart && i < kLipStart + kLipCount;
    if (is_lip) {
      REQUIRE(shifted[i].x == Catch::Approx(s[i].x + 0.1f));
    } else {
      REQUIRE(shifted[i].x == s[i].x);
      REQUIRE(shifted[i].y == s[i].y);
    }
  }
}

TEST_CASE("landmark file round trip is lossless") {
  std::mt19937 rng(5);
  LandmarkSequence seq;
  for (int t = 0; t < 5; ++t) seq.frames.push_back(random_set(rng));
  std::string path = "test_lm_tmp.jsonl";
  write_landmark_file(seq, path);
  auto back = read_landmark_file(path);
  REQUIRE(back.frames.size() == 5);
  for (int t = 0; t < 5; ++t)
    for (int i = 0; i < kTotal; ++i) {
      REQUIRE(back.frames[t][i].x == Catch::Approx(seq.frames[t][i].x).margin(1e-6));
      REQUIRE(back.frames[t][i].y == Catch::Approx(seq.frames[t][i].y).margin(1e-6));
    }
  std::remove(path.c_str());
}

TEST_CASE("short frame is reported with its index") {
  std::mt19937 rng(6);
  LandmarkSequence seq;
  for (int t = 0; t < 5; ++t) seq.frames.push_back(random_set(rng));
  std::string path = "test_lm_bad.jsonl";
  write_landmark_file(seq, path);
  // drop one point from frame 3
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  auto j = nlohmann::json::parse(lines[3]);
  j["points"].erase(j["points"].size() - 1);
  lines[3] = j.dump();
  std::ofstream out(path);
  for (auto& l : lines) out << l << "\n";
  out.close();
  CHECK_THROWS_WITH(read_landmark_file(path), Catch::Matchers::ContainsSubstring("frame 3"));
  std::remove(path.c_str());
}

TEST_CASE("empty landmark file is rejected") {
  std::string path = "test_lm_empty.jsonl";
  std::ofstream(path).close();
  CHECK_THROWS_WITH(read_landmark_file(path), Catch::Matchers::ContainsSubstring("no frames"));
  std::remove(path.c_str());
}

TEST_CASE("connectivity covers every polyline index once and matches the asset") {
  std::vector<int> seen(kTotal, 0);
  for (const auto& poly : connectivity())
    for (int i : poly.indices) {
      REQUIRE(i >= 0);
      REQUIRE(i < kTotal);
      seen[i]++;
    }
  // every index belongs to at most one polyline; 127..130 are free points
  for (int i = 0; i < kTotal; ++i) REQUIRE(seen[i] == (i >= 127 ? 0 : 1));

#ifdef LAP_CONNECTIVITY_ASSET
  std::ifstream f(LAP_CONNECTIVITY_ASSET);
  REQUIRE(f.good());
  auto asset = nlohmann::json::parse(f);
  REQUIRE(asset == connectivity_json());
#endif
}

TEST_CASE("identical landmark sets rasterize to identical sketches") {
  std::mt19937 rng(7);
  auto s = random_set(rng);
  auto a = rasterize_sketch(s, 128, 128);
  auto b = rasterize_sketch(s, 128, 128);
  REQUIRE(a.pixels.data == b.pixels.data);
  for (float v : a.pixels.data) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("degenerate sketch concentrates at the canvas center") {
  LandmarkSet s;
  for (auto& p : s.points) p = {0.5f, 0.5f};
  auto sk = rasterize_sketch(s, 128, 128);
  for (int i = 0; i < 128; ++i)
    for (int j = 0; j < 128; ++j)
      if (sk.pixels.at(0, i, j) > 0.0f) {
        REQUIRE(std::abs(i - 63.5) <= 1.5);
        REQUIRE(std::abs(j - 63.5) <= 1.5);
      }
  // something was drawn
  float sum = 0.0f;
  for (float v : sk.pixels.data) sum += v;
  REQUIRE(sum > 0.0f);
}

TEST_CASE("translating by one pixel shifts the sketch by one pixel") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<float> dist(0.2f, 0.8f);
  LandmarkSet s;
  for (auto& p : s.points) p = {dist(rng), dist(rng)};
  int w = 128;
  auto base = rasterize_sketch(s, 128, w);
  auto shifted_lm = s;
  for (auto& p : shifted_lm.points) p.x += 1.0f / w;
  auto shifted = rasterize_sketch(shifted_lm, 128, w);
  double diff = 0.0;
  int count = 0;
  for (int i = 0; i < 128; ++i)
    for (int j = 1; j < w; ++j) {
      diff += std::abs(shifted.pixels.at(0, i, j) - base.pixels.at(0, i, j - 1));
      ++count;
    }
  REQUIRE(diff / count < 0.02);
}

TEST_CASE("mask_lower_half zeroes exactly the lower half") {
  FaceFrame f;
  f.pixels = lap::img::Image(3, 128, 128, 1.0f);
  auto m = mask_lower_half(f);
  REQUIRE(m.masked_lower_half);
  int zeros = 0;
  for (float v : m.pixels.data)
    if (v == 0.0f) ++zeros;
  REQUIRE(zeros == 3 * 64 * 128);
  REQUIRE(m.pixels.at(0, 10, 10) == 1.0f);

  auto twice = mask_lower_half(m);
  REQUIRE(twice.pixels.data == m.pixels.data);
}

TEST_CASE("paste_back composes per the smoothed mask") {
  std::mt19937 rng(9);
  auto lm = random_set(rng);

  SECTION("identity composite: generated equals the crop") {
    lap::img::Image original(3, 64, 64);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : original.data) v = dist(rng);
    FaceBox box{8, 8, 40, 40};
    FaceFrame gen;
    gen.pixels = lap::img::Image(3, 32, 32);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) gen.pixels.at(c, i, j) = original.at(c, 8 + i, 8 + j);
    auto out = paste_back(gen, original, box, lm, 1.0f);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      REQUIRE(out.data[i] == Catch::Approx(original.data[i]).margin(1e-6));
  }

  SECTION("sigma 0: hull region equals resized generated, outside untouched") {
    lap::img::Image original(3, 64, 64, 0.25f);
    FaceBox box{0, 0, 64, 64};
    FaceFrame gen;
    gen.pixels = lap::img::Image(3, 64, 64, 0.75f);
    auto out = paste_back(gen, original, box, lm, 0.0f);
    auto mask = face_mask(lm, 64, 64, 0.0f);
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        float expected = mask.at(0, i, j) > 0.5f ? 0.75f : 0.25f;
        REQUIRE(out.at(0, i, j) == Catch::Approx(expected).margin(1e-6));
      }
  }

  SECTION("degenerate box is rejected") {
    lap::img::Image original(3, 64, 64);
    FaceFrame gen;
    gen.pixels = lap::img::Image(3, 8, 8);
    CHECK_THROWS_WITH(paste_back(gen, original, FaceBox{5, 5, 5, 9}, lm, 1.0f),
                      Catch::Matchers::ContainsSubstring("degenerate"));
  }
}

TEST_CASE("paste_back equals original wherever the smoothed mask is zero") {
  std::mt19937 rng(10);
  auto lm = random_set(rng);
  lap::img::Image original(3, 80, 80, 0.5f);
  FaceBox box{10, 10, 74, 74};
  FaceFrame gen;
  gen.pixels = lap::img::Image(3, 64, 64, 1.0f);
  float sigma = 2.0f;
  auto out = paste_back(gen, original, box, lm, sigma);
  auto mask = face_mask(lm, 64, 64, sigma);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (mask.at(0, i, j) == 0.0f)
        REQUIRE(out.at(0, 10 + i, 10 + j) == 0.5f);
  // pixels entirely outside the box are untouched
  REQUIRE(out.at(0, 0, 0) == 0.5f);
}
