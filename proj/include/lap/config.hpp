#pragma once

// Run configuration: every training/inference constant is a named key with
// its default. Configs load from a flat TOML-style `key = value` file;
// unknown keys are rejected rather than silently ignored.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lap/alignment.hpp"
#include "lap/generator.hpp"
#include "lap/losses.hpp"
#include "lap/tensor.hpp"
#include "lap/translation.hpp"

namespace lap::cfg {

struct RunConfig {
  std::string stage = "landmark";  // landmark | render | infer

  // stage 1 (landmark generator)
  int T = 5;
  int n_refs = 15;
  int d = 512;
  int depth = 4;
  int heads = 8;
  double mlp_ratio = 4.0;
  double lambda_c = 1.0;  // continuity weight

  // stage 2 (renderer)
  int H = 128;
  int k = 2;
  int c1 = 256;
  int c2 = 128;
  int base = 64;
  int spade_hidden = 32;
  int ndf = 16;
  int n_train_refs = 3;
  double inference_ref_fraction = 0.2;
  loss::LossWeights weights;

  // optimizer / loop
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int steps = 1000;
  int log_every = 50;
  int ckpt_every = 500;
  unsigned seed = 7;

  // compositing
  double paste_sigma = 2.0;

  gen::GeneratorConfig generator_config() const {
    gen::GeneratorConfig g;
    g.T = T;
    g.n_refs = n_refs;
    g.d = d;
    g.depth = depth;
    g.heads = heads;
    g.mlp_ratio = mlp_ratio;
    return g;
  }
  align::AlignConfig align_config() const {
    align::AlignConfig a;
    a.H = H;
    a.k = k;
    a.c1 = c1;
    a.c2 = c2;
    a.spade_hidden = spade_hidden;
    return a;
  }
  xlate::TranslationConfig translation_config() const {
    xlate::TranslationConfig t;
    t.H = H;
    t.k = k;
    t.d = d;
    t.c1 = c1;
    t.c2 = c2;
    t.base = base;
    t.spade_hidden = spade_hidden;
    return t;
  }

  void validate() const {
    check(stage == "landmark" || stage == "render" || stage == "infer",
          "config: stage must be landmark, render, or infer");
    generator_config().validate();
    align_config().validate();
    translation_config().validate();
    weights.validate();
    check(lambda_c >= 0, "config: lambda_c must be nonnegative");
    check(lr > 0 && steps > 0 && log_every > 0 && ckpt_every > 0,
          "config: optimizer settings must be positive");
    check(n_train_refs >= 1, "config: n_train_refs must be >= 1");
    check(inference_ref_fraction > 0 && inference_ref_fraction <= 1,
          "config: inference_ref_fraction must be in (0, 1]");
    check(ndf >= 1, "config: ndf must be >= 1");
    check(paste_sigma >= 0, "config: paste_sigma must be nonnegative");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["stage"] = stage;
    j["T"] = T;
    j["n_refs"] = n_refs;
    j["d"] = d;
    j["depth"] = depth;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["lambda_c"] = lambda_c;
    j["H"] = H;
    j["k"] = k;
    j["c1"] = c1;
    j["c2"] = c2;
    j["base"] = base;
    j["spade_hidden"] = spade_hidden;
    j["ndf"] = ndf;
    j["n_train_refs"] = n_train_refs;
    j["inference_ref_fraction"] = inference_ref_fraction;
    j["lambda_w"] = weights.lambda_w;
    j["lambda_r"] = weights.lambda_r;
    j["lambda_s"] = weights.lambda_s;
    j["lambda_g"] = weights.lambda_g;
    j["lambda_f"] = weights.lambda_f;
    j["lr"] = lr;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["steps"] = steps;
    j["log_every"] = log_every;
    j["ckpt_every"] = ckpt_every;
    j["seed"] = seed;
    j["paste_sigma"] = paste_sigma;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      // checkpoints store runtime bookkeeping next to the config keys
      if (it.key() == "rng_state" || it.key() == "g_step" || it.key() == "d_step") continue;
      c.set(it.key(), dump_value(it.value()));
    }
    return c;
  }

  // Assign one key from its textual value; throws on unknown keys.
  void set(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_real = [&] { return std::stod(value); };
    if (key == "stage") stage = unquote(value);
    else if (key == "T") T = as_int();
    else if (key == "n_refs") n_refs = as_int();
    else if (key == "d") d = as_int();
    else if (key == "depth") depth = as_int();
    else if (key == "heads") heads = as_int();
    else if (key == "mlp_ratio") mlp_ratio = as_real();
    else if (key == "lambda_c") lambda_c = as_real();
    else if (key == "H") H = as_int();
    else if (key == "k") k = as_int();
    else if (key == "c1") c1 = as_int();
    else if (key == "c2") c2 = as_int();
    else if (key == "base") base = as_int();
    else if (key == "spade_hidden") spade_hidden = as_int();
    else if (key == "ndf") ndf = as_int();
    else if (key == "n_train_refs") n_train_refs = as_int();
    else if (key == "inference_ref_fraction") inference_ref_fraction = as_real();
    else if (key == "lambda_w") weights.lambda_w = as_real();
    else if (key == "lambda_r") weights.lambda_r = as_real();
    else if (key == "lambda_s") weights.lambda_s = as_real();
    else if (key == "lambda_g") weights.lambda_g = as_real();
    else if (key == "lambda_f") weights.lambda_f = as_real();
    else if (key == "lr") lr = as_real();
    else if (key == "beta1") beta1 = as_real();
    else if (key == "beta2") beta2 = as_real();
    else if (key == "steps") steps = as_int();
    else if (key == "log_every") log_every = as_int();
    else if (key == "ckpt_every") ckpt_every = as_int();
    else if (key == "seed") seed = static_cast<unsigned>(std::stoul(value));
    else if (key == "paste_sigma") paste_sigma = as_real();
    else throw std::runtime_error("config: unknown key '" + key + "'");
  }

 private:
  static std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\'')))
      return s.substr(1, s.size() - 2);
    return s;
  }
  static std::string dump_value(const nlohmann::json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }
};

inline std::string strip(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') continue;  // section headers are cosmetic
    auto eq = line.find('=');
    check(eq != std::string::npos, "config: line " + std::to_string(lineno) + " is not key = value");
    c.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  auto c = parse_config_text(ss.str());
  c.validate();
  return c;
}

}  // namespace lap::cfg
