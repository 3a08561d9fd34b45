#pragma once

// Versioned checkpoint container: a small JSON header (format version, kind
// tag, embedded run configuration, named tensor table) followed by a raw
// float32 blob. Optimizer state rides along as ordinary named tensors so a
// resumed run reproduces an uninterrupted one.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lap/nn.hpp"
#include "lap/tensor.hpp"

namespace lap::ckpt {

inline constexpr char kMagic[4] = {'L', 'A', 'P', '1'};
inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  std::string kind;                // "stage1", "stage2", ...
  nlohmann::json config;           // embedded run configuration
  long step = 0;                   // optimizer step count at save time
  std::vector<std::pair<std::string, std::vector<int>>> names;  // tensor table
  std::vector<std::vector<float>> blobs;

  void add(const std::string& name, const std::vector<int>& shape, std::vector<float> values) {
    names.emplace_back(name, shape);
    blobs.push_back(std::move(values));
  }
  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t) {
    std::vector<float> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(t.data()[i]);
    add(name, t.shape(), std::move(v));
  }
  template <typename T>
  void add_params(const ParamMap<T>& params) {
    for (const auto& [name, t] : params.items) add_tensor(name, t);
  }

  const std::vector<float>& find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i].first == name) return blobs[i];
    throw std::runtime_error("checkpoint: no tensor named " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& [n, s] : names)
      if (n == name) return true;
    return false;
  }

  // Copy stored values into every parameter of the map, by name.
  template <typename T>
  void load_params(ParamMap<T>& params) const {
    for (auto& [name, t] : params.items) {
      const auto& src = find(name);
      check(src.size() == t.size(),
            "checkpoint: size mismatch for " + name + " (" + std::to_string(src.size()) + " vs " +
                std::to_string(t.size()) + ")");
      for (std::size_t i = 0; i < src.size(); ++i) t.data()[i] = static_cast<T>(src[i]);
    }
  }
};

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = c.kind;
  header["config"] = c.config;
  header["step"] = c.step;
  auto tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < c.names.size(); ++i) {
    nlohmann::json t;
    t["name"] = c.names[i].first;
    t["shape"] = c.names[i].second;
    t["offset"] = offset;
    t["count"] = c.blobs[i].size();
    tensors.push_back(t);
    offset += c.blobs[i].size();
  }
  header["tensors"] = tensors;
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 4);
  std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& b : c.blobs)
    f.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(float)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  auto header = nlohmann::json::parse(hs);
  check(header.at("format_version").get<int>() == kFormatVersion,
        "checkpoint: unsupported format version");

  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.config = header.value("config", nlohmann::json::object());
  c.step = header.value("step", 0L);
  for (const auto& t : header.at("tensors")) {
    std::vector<float> blob(t.at("count").get<std::size_t>());
    f.read(reinterpret_cast<char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint: truncated blob in " + path);
    c.add(t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>(), std::move(blob));
  }
  return c;
}

// Adam state serialization: moments stored per parameter under reserved names.
template <typename T>
void add_adam_state(Checkpoint& c, const ParamMap<T>& params, const Adam<T>& opt) {
  c.step = opt.step_count();
  const auto& m = opt.moments1();
  const auto& v = opt.moments2();
  check(m.size() == params.items.size(), "checkpoint: optimizer/param count mismatch");
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const auto& [name, t] = params.items[i];
    std::vector<float> mf(m[i].begin(), m[i].end()), vf(v[i].begin(), v[i].end());
    c.add("adam.m." + name, t.shape(), std::move(mf));
    c.add("adam.v." + name, t.shape(), std::move(vf));
  }
}

template <typename T>
void restore_adam_state(const Checkpoint& c, const ParamMap<T>& params, Adam<T>& opt) {
  std::vector<std::vector<T>> m, v;
  for (const auto& [name, t] : params.items) {
    const auto& mf = c.find("adam.m." + name);
    const auto& vf = c.find("adam.v." + name);
    m.emplace_back(mf.begin(), mf.end());
    v.emplace_back(vf.begin(), vf.end());
  }
  opt.restore(c.step, std::move(m), std::move(v));
}

}  // namespace lap::ckpt
