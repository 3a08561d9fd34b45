#pragma once

// Audio front end: WAV reading, log-mel spectrograms (window 800 / hop 200 at
// 16 kHz), and per-video-frame 16×80 chunk extraction.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lap::audio {

struct AudioClip {
  std::vector<float> samples;  // amplitude in [-1, 1]
  int sample_rate = 16000;

  void validate() const {
    if (samples.empty()) throw std::invalid_argument("AudioClip: empty audio");
    if (sample_rate != 16000)
      throw std::invalid_argument("AudioClip: sample rate must be 16000 Hz, got " +
                                  std::to_string(sample_rate) + " (resampling is not performed)");
    for (float s : samples)
      if (!std::isfinite(s)) throw std::invalid_argument("AudioClip: non-finite sample");
  }
};

struct MelSpectrogram {
  std::vector<float> values;  // [num_steps, n_mels] row-major, natural-log energies
  int num_steps = 0;
  int n_mels = 80;
  double hop_seconds = 200.0 / 16000.0;

  float at(int step, int mel) const { return values[static_cast<std::size_t>(step) * n_mels + mel]; }
};

struct MelChunk {
  std::vector<float> values;  // [16, 80]
  int frame_index = 0;
  static constexpr int kSteps = 16;
  static constexpr int kMels = 80;
};

namespace detail {

// Iterative radix-2 FFT, in place. n must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j];
        auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filterbank over n_fft/2+1 power-spectrum bins.
inline std::vector<std::vector<float>> mel_filterbank(int n_mels, int n_fft, int sample_rate,
                                                      double fmin, double fmax) {
  int n_bins = n_fft / 2 + 1;
  std::vector<double> peaks(n_mels + 2);
  double m0 = hz_to_mel(fmin), m1 = hz_to_mel(fmax);
  for (int i = 0; i < n_mels + 2; ++i)
    peaks[i] = mel_to_hz(m0 + (m1 - m0) * i / (n_mels + 1));
  std::vector<std::vector<float>> fb(n_mels, std::vector<float>(n_bins, 0.0f));
  for (int m = 0; m < n_mels; ++m) {
    double lo = peaks[m], mid = peaks[m + 1], hi = peaks[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f < mid) w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
      fb[m][k] = static_cast<float>(w);
    }
  }
  return fb;
}

}  // namespace detail

// Center frequency (Hz) of a mel band under the default layout; test support.
inline double mel_band_center_hz(int band, int n_mels = 80, double fmin = 55.0,
                                 double fmax = 7600.0) {
  double m0 = detail::hz_to_mel(fmin), m1 = detail::hz_to_mel(fmax);
  return detail::mel_to_hz(m0 + (m1 - m0) * (band + 1) / (n_mels + 1));
}

struct MelOptions {
  int window = 800;
  int hop = 200;
  int n_mels = 80;
  double fmin = 55.0;
  double fmax = 7600.0;
  float energy_floor = 1e-5f;  // clamp before the natural log
};

inline MelSpectrogram compute_mel(const AudioClip& clip, const MelOptions& opt = {}) {
  clip.validate();
  if (!(opt.window >= opt.hop && opt.hop > 0))
    throw std::invalid_argument("compute_mel: require window >= hop > 0");

  // reflect-pad by window/2 on each side
  int pad = opt.window / 2;
  const auto& s = clip.samples;
  int n = static_cast<int>(s.size());
  std::vector<double> padded(static_cast<std::size_t>(n) + 2 * pad);
  for (int i = 0; i < n + 2 * pad; ++i) {
    int j = i - pad;
    if (j < 0) j = std::min(-j, n - 1);
    else if (j >= n) j = std::max(0, n - 1 - (j - n + 1));
    padded[i] = s[j];
  }

  int num_steps = (n + 2 * pad - opt.window) / opt.hop + 1;
  int n_fft = 1;
  while (n_fft < opt.window) n_fft <<= 1;
  int n_bins = n_fft / 2 + 1;

  std::vector<double> hann(opt.window);
  for (int i = 0; i < opt.window; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (opt.window - 1));

  auto fb = detail::mel_filterbank(opt.n_mels, n_fft, clip.sample_rate, opt.fmin, opt.fmax);

  MelSpectrogram mel;
  mel.num_steps = num_steps;
  mel.n_mels = opt.n_mels;
  mel.hop_seconds = static_cast<double>(opt.hop) / clip.sample_rate;
  mel.values.resize(static_cast<std::size_t>(num_steps) * opt.n_mels);

  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_bins);
  for (int t = 0; t < num_steps; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0));
    for (int i = 0; i < opt.window; ++i)
      buf[i] = padded[static_cast<std::size_t>(t) * opt.hop + i] * hann[i];
    detail::fft(buf);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < opt.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) e += fb[m][k] * power[k];
      mel.values[static_cast<std::size_t>(t) * opt.n_mels + m] =
          std::log(std::max(e, static_cast<double>(opt.energy_floor)));
    }
  }
  return mel;
}

// 16 consecutive steps centered on the step nearest frame_index/fps; steps
// outside the spectrogram are edge-replicated.
inline MelChunk chunk_for_frame(const MelSpectrogram& mel, int frame_index, int fps = 25) {
  if (frame_index < 0) throw std::invalid_argument("chunk_for_frame: negative frame index");
  if (mel.n_mels != MelChunk::kMels)
    throw std::invalid_argument("chunk_for_frame: spectrogram must have 80 mel bands");
  int center = static_cast<int>(std::lround(frame_index / (static_cast<double>(fps) * mel.hop_seconds)));
  MelChunk chunk;
  chunk.frame_index = frame_index;
  chunk.values.resize(MelChunk::kSteps * MelChunk::kMels);
  for (int r = 0; r < MelChunk::kSteps; ++r) {
    int step = std::clamp(center - 8 + r, 0, mel.num_steps - 1);
    std::copy_n(mel.values.begin() + static_cast<std::size_t>(step) * mel.n_mels, mel.n_mels,
                chunk.values.begin() + static_cast<std::size_t>(r) * MelChunk::kMels);
  }
  return chunk;
}

// ---------------------------------------------------------------------------
// WAV I/O (uncompressed PCM, mono, 16-bit or float32)
// ---------------------------------------------------------------------------

inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  auto read_u32 = [&] {
    std::uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto read_u16 = [&] {
    std::uint8_t b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  };
  char tag[5] = {};
  f.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw std::runtime_error("read_wav: not a RIFF file");
  read_u32();
  f.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw std::runtime_error("read_wav: not a WAVE file");

  int format = 0, channels = 0, rate = 0, bits = 0;
  std::vector<char> data;
  while (f.read(tag, 4)) {
    std::uint32_t sz = read_u32();
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      format = read_u16();
      channels = read_u16();
      rate = static_cast<int>(read_u32());
      read_u32();
      read_u16();
      bits = read_u16();
      f.seekg(sz - 16, std::ios::cur);
    } else if (std::strncmp(tag, "data", 4) == 0) {
      data.resize(sz);
      f.read(data.data(), sz);
    } else {
      f.seekg(sz + (sz & 1), std::ios::cur);
    }
  }
  if (channels != 1) throw std::runtime_error("read_wav: only mono audio is accepted");
  if (rate != 16000)
    throw std::runtime_error("read_wav: sample rate must be 16000 Hz, got " +
                             std::to_string(rate) + " (resampling is not performed)");
  AudioClip clip;
  clip.sample_rate = rate;
  if (format == 1 && bits == 16) {
    std::size_t count = data.size() / 2;
    clip.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::int16_t v;
      std::memcpy(&v, data.data() + 2 * i, 2);
      clip.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    std::size_t count = data.size() / 4;
    clip.samples.resize(count);
    std::memcpy(clip.samples.data(), data.data(), data.size());
  } else {
    throw std::runtime_error("read_wav: unsupported encoding (need 16-bit PCM or float32)");
  }
  clip.validate();
  return clip;
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  auto w_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto w_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * 2);
  f.write("RIFF", 4);
  w_u32(36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  w_u32(16);
  w_u16(1);
  w_u16(1);
  w_u32(static_cast<std::uint32_t>(clip.sample_rate));
  w_u32(static_cast<std::uint32_t>(clip.sample_rate * 2));
  w_u16(2);
  w_u16(16);
  f.write("data", 4);
  w_u32(data_size);
  for (float s : clip.samples) {
    std::int16_t v = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
}

}  // namespace lap::audio
