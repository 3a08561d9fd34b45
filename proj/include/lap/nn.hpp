#pragma once

// Layer building blocks on top of the autodiff tensor: parameter registry,
// initializers, linear/conv layers, pre-norm transformer block, bidirectional
// LSTM, and the Adam optimizer.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lap/tensor.hpp"

namespace lap {

template <typename T>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(const std::string& name, const Tensor<T>& t) {
    items.emplace_back(name, t);
  }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : items) out.push_back(t);
    return out;
  }
  Tensor<T> find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw std::runtime_error("ParamMap: no parameter named " + name);
  }
};

template <typename T>
Tensor<T> param_uniform(std::vector<int> shape, T bound, std::mt19937& rng) {
  auto t = Tensor<T>::zeros(std::move(shape));
  std::uniform_real_distribution<T> dist(-bound, bound);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> param_const(std::vector<int> shape, T v) {
  auto t = Tensor<T>::full(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
struct Linear {
  Tensor<T> w, b;  // w: [in, out]

  Linear() = default;
  Linear(int in, int out, std::mt19937& rng) {
    T bound = std::sqrt(T(1) / static_cast<T>(in));
    w = param_uniform<T>({in, out}, bound, rng);
    b = param_uniform<T>({out}, bound, rng);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return add_row_bias(matmul(x, w), b); }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    m.add(p + ".w", w);
    m.add(p + ".b", b);
  }
  void zero_init() {
    std::fill(w.values().begin(), w.values().end(), T(0));
    std::fill(b.values().begin(), b.values().end(), T(0));
  }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;  // w: [out, in, k, k]
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int in, int out, int k, int stride_, int pad_, std::mt19937& rng)
      : stride(stride_), pad(pad_) {
    T bound = std::sqrt(T(1) / static_cast<T>(in * k * k));
    w = param_uniform<T>({out, in, k, k}, bound, rng);
    b = param_uniform<T>({out}, bound, rng);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    m.add(p + ".w", w);
    m.add(p + ".b", b);
  }
  void zero_init() {
    std::fill(w.values().begin(), w.values().end(), T(0));
    std::fill(b.values().begin(), b.values().end(), T(0));
  }
  // Replicate each group of r*r output kernels so a following pixel_shuffle
  // starts out as nearest-neighbor upsampling instead of a checkerboard.
  void icnr_init(int r) {
    int out = w.dim(0), group = r * r;
    check(out % group == 0, "icnr_init: channel count not divisible by r*r");
    std::size_t ksz = w.size() / static_cast<std::size_t>(out);
    for (int c = 0; c < out / group; ++c)
      for (int j = 1; j < group; ++j) {
        std::copy_n(w.values().begin() + static_cast<std::size_t>(c * group) * ksz, ksz,
                    w.values().begin() + static_cast<std::size_t>(c * group + j) * ksz);
        b.values()[c * group + j] = b.values()[c * group];
      }
  }
};

template <typename T>
struct Conv1dLayer {
  Tensor<T> w, b;  // w: [out, in, k]
  int stride = 1, pad = 0;

  Conv1dLayer() = default;
  Conv1dLayer(int in, int out, int k, int stride_, int pad_, std::mt19937& rng)
      : stride(stride_), pad(pad_) {
    T bound = std::sqrt(T(1) / static_cast<T>(in * k));
    w = param_uniform<T>({out, in, k}, bound, rng);
    b = param_uniform<T>({out}, bound, rng);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv1d(x, w, b, stride, pad); }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    m.add(p + ".w", w);
    m.add(p + ".b", b);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int d) {
    gamma = param_const<T>({d}, T(1));
    beta = param_const<T>({d}, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_rows(x, gamma, beta); }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    m.add(p + ".gamma", gamma);
    m.add(p + ".beta", beta);
  }
};

// Multi-head self-attention over a [tokens, d] matrix.
template <typename T>
struct MultiHeadSelfAttention {
  int heads = 1, d = 0;
  Linear<T> wq, wk, wv, wo;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(int d_, int heads_, std::mt19937& rng)
      : heads(heads_), d(d_), wq(d_, d_, rng), wk(d_, d_, rng), wv(d_, d_, rng), wo(d_, d_, rng) {
    check(d_ % heads_ == 0, "MultiHeadSelfAttention: d must be divisible by heads");
  }

  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>* attn_maps = nullptr) const {
    int dh = d / heads;
    Tensor<T> q = wq(x), k = wk(x), v = wv(x);
    std::vector<Tensor<T>> head_outs;
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    for (int h = 0; h < heads; ++h) {
      auto qh = slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      auto attn = softmax_rows(scores);
      if (attn_maps) attn_maps->push_back(attn);
      head_outs.push_back(matmul(attn, vh));
    }
    // concat along columns: transpose trick keeps the op set small
    Tensor<T> cat;
    if (heads == 1) {
      cat = head_outs[0];
    } else {
      std::vector<Tensor<T>> t;
      for (auto& ho : head_outs) t.push_back(transpose(ho));
      cat = transpose(concat_rows(t));
    }
    return wo(cat);
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    wq.register_params(m, p + ".wq");
    wk.register_params(m, p + ".wk");
    wv.register_params(m, p + ".wv");
    wo.register_params(m, p + ".wo");
  }
};

// Pre-norm residual block: z += MSA(LN(z)); z += MLP(LN(z)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadSelfAttention<T> attn;
  Linear<T> fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(int d, int heads, T mlp_ratio, std::mt19937& rng)
      : ln1(d), ln2(d), attn(d, heads, rng),
        fc1(d, static_cast<int>(std::lround(mlp_ratio * d)), rng),
        fc2(static_cast<int>(std::lround(mlp_ratio * d)), d, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>* attn_maps = nullptr) const {
    auto z = add(x, attn(ln1(x), attn_maps));
    return add(z, fc2(relu(fc1(ln2(z)))));
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    ln1.register_params(m, p + ".ln1");
    ln2.register_params(m, p + ".ln2");
    attn.register_params(m, p + ".attn");
    fc1.register_params(m, p + ".fc1");
    fc2.register_params(m, p + ".fc2");
  }
  // test hook: zero both residual branches so the block becomes the identity
  void zero_residual_branches() {
    attn.wo.zero_init();
    fc2.zero_init();
  }
};

// Bidirectional LSTM over a [steps, in] sequence; returns [steps, 2*hidden].
template <typename T>
struct BiLSTM {
  int in = 0, hidden = 0;
  Linear<T> fwd_x, fwd_h, bwd_x, bwd_h;  // each maps to 4*hidden gate pre-activations

  BiLSTM() = default;
  BiLSTM(int in_, int hidden_, std::mt19937& rng)
      : in(in_), hidden(hidden_),
        fwd_x(in_, 4 * hidden_, rng), fwd_h(hidden_, 4 * hidden_, rng),
        bwd_x(in_, 4 * hidden_, rng), bwd_h(hidden_, 4 * hidden_, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    int steps = x.dim(0);
    auto run = [&](const Linear<T>& lx, const Linear<T>& lh, bool reverse) {
      std::vector<Tensor<T>> outs(steps);
      Tensor<T> h = Tensor<T>::zeros({1, hidden});
      Tensor<T> c = Tensor<T>::zeros({1, hidden});
      for (int s = 0; s < steps; ++s) {
        int t = reverse ? steps - 1 - s : s;
        auto xt = slice_rows(x, t, t + 1);
        auto gates = add(lx(xt), lh(h));
        auto i = sigmoid(slice_cols(gates, 0, hidden));
        auto f = sigmoid(slice_cols(gates, hidden, 2 * hidden));
        auto g = tanh_t(slice_cols(gates, 2 * hidden, 3 * hidden));
        auto o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
        c = add(mul(f, c), mul(i, g));
        h = mul(o, tanh_t(c));
        outs[t] = h;
      }
      return concat_rows(outs);
    };
    auto hf = run(fwd_x, fwd_h, false);
    auto hb = run(bwd_x, bwd_h, true);
    return transpose(concat_rows(std::vector<Tensor<T>>{transpose(hf), transpose(hb)}));
  }
  void register_params(ParamMap<T>& m, const std::string& p) const {
    fwd_x.register_params(m, p + ".fwd_x");
    fwd_h.register_params(m, p + ".fwd_h");
    bwd_x.register_params(m, p + ".bwd_x");
    bwd_h.register_params(m, p + ".bwd_h");
  }
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      auto& g = p.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[pi][i] = beta1_ * m_[pi][i] + (T(1) - beta1_) * g[i];
        v_[pi][i] = beta2_ * v_[pi][i] + (T(1) - beta2_) * g[i] * g[i];
        p.data()[i] -= lr_ * (m_[pi][i] / bc1) / (std::sqrt(v_[pi][i] / bc2) + eps_);
      }
    }
  }

  T& lr() { return lr_; }
  long step_count() const { return t_; }

  // optimizer state round-trip for checkpoint resume
  const std::vector<std::vector<T>>& moments1() const { return m_; }
  const std::vector<std::vector<T>>& moments2() const { return v_; }
  void restore(long t, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<Tensor<T>> params_;
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Sinusoidal positional table: row t, pe[t,2i]=sin(t/10000^(2i/d)), pe[t,2i+1]=cos(...).
template <typename T>
Tensor<T> sinusoidal_positions(int max_t, int d) {
  auto pe = Tensor<T>::zeros({max_t, d});
  for (int t = 0; t < max_t; ++t)
    for (int i = 0; i < d; i += 2) {
      T freq = std::pow(T(10000), -static_cast<T>(i) / static_cast<T>(d));
      pe.data()[t * d + i] = std::sin(static_cast<T>(t) * freq);
      if (i + 1 < d) pe.data()[t * d + i + 1] = std::cos(static_cast<T>(t) * freq);
    }
  return pe;
}

}  // namespace lap
