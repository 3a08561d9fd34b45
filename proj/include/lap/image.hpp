#pragma once

// Plain (non-differentiable) planar float image in [0,1], with PNG I/O and
// the resize/blur helpers used by compositing and dataset plumbing.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lap/tensor.hpp"

namespace lap::img {

struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;  // planar, [c][h][w]

  Image() = default;
  Image(int c_, int h_, int w_, float fill = 0.0f)
      : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

  float& at(int ci, int i, int j) { return data[(static_cast<std::size_t>(ci) * h + i) * w + j]; }
  float at(int ci, int i, int j) const {
    return data[(static_cast<std::size_t>(ci) * h + i) * w + j];
  }
  std::size_t size() const { return data.size(); }
};

template <typename T>
Tensor<T> to_tensor(const Image& im) {
  auto t = Tensor<T>::zeros({im.c, im.h, im.w});
  for (std::size_t i = 0; i < im.data.size(); ++i) t.data()[i] = static_cast<T>(im.data[i]);
  return t;
}

template <typename T>
Image from_tensor(const Tensor<T>& t) {
  check(t.shape().size() == 3, "from_tensor: expects C×H×W");
  Image im(t.dim(0), t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < im.data.size(); ++i) im.data[i] = static_cast<float>(t.data()[i]);
  return im;
}

inline Image read_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("read_png: cannot read " + path);
  Image im(3, m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      auto px = m.at<cv::Vec3b>(i, j);  // BGR
      im.at(0, i, j) = px[2] / 255.0f;
      im.at(1, i, j) = px[1] / 255.0f;
      im.at(2, i, j) = px[0] / 255.0f;
    }
  return im;
}

inline void write_png(const std::string& path, const Image& im) {
  check(im.c == 3, "write_png: expects a 3-channel image");
  cv::Mat m(im.h, im.w, CV_8UC3);
  for (int i = 0; i < im.h; ++i)
    for (int j = 0; j < im.w; ++j) {
      auto clampb = [](float v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      };
      m.at<cv::Vec3b>(i, j) = {clampb(im.at(2, i, j)), clampb(im.at(1, i, j)),
                               clampb(im.at(0, i, j))};
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("write_png: cannot write " + path);
}

inline Image resize_bilinear(const Image& im, int h2, int w2) {
  if (h2 == im.h && w2 == im.w) return im;
  Image out(im.c, h2, w2);
  for (int ci = 0; ci < im.c; ++ci)
    for (int i = 0; i < h2; ++i) {
      float sy = (i + 0.5f) * im.h / h2 - 0.5f;
      sy = std::clamp(sy, 0.0f, static_cast<float>(im.h - 1));
      int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, im.h - 1);
      float fy = sy - y0;
      for (int j = 0; j < w2; ++j) {
        float sx = (j + 0.5f) * im.w / w2 - 0.5f;
        sx = std::clamp(sx, 0.0f, static_cast<float>(im.w - 1));
        int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, im.w - 1);
        float fx = sx - x0;
        out.at(ci, i, j) = im.at(ci, y0, x0) * (1 - fy) * (1 - fx) +
                           im.at(ci, y0, x1) * (1 - fy) * fx +
                           im.at(ci, y1, x0) * fy * (1 - fx) + im.at(ci, y1, x1) * fy * fx;
      }
    }
  return out;
}

// Separable Gaussian blur, reflect borders.
inline Image gaussian_blur(const Image& im, float sigma) {
  if (sigma <= 0.0f) return im;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float sum = 0.0f;
  for (int i = -radius; i <= radius; ++i)
    sum += kernel[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  Image tmp(im.c, im.h, im.w), out(im.c, im.h, im.w);
  for (int ci = 0; ci < im.c; ++ci)
    for (int i = 0; i < im.h; ++i)
      for (int j = 0; j < im.w; ++j) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * im.at(ci, i, reflect(j + k, im.w));
        tmp.at(ci, i, j) = acc;
      }
  for (int ci = 0; ci < im.c; ++ci)
    for (int i = 0; i < im.h; ++i)
      for (int j = 0; j < im.w; ++j) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * tmp.at(ci, reflect(i + k, im.h), j);
        out.at(ci, i, j) = acc;
      }
  return out;
}

}  // namespace lap::img
