#pragma once

// Reverse-mode autodiff tensor. Small tape-based engine: every op builds a
// node holding its value, parent links, and a closure that scatters the
// incoming gradient back to the parents. Templated on the scalar type so
// tests can run gradient checks in double while training runs in float.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace lap {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

struct GradMode {
  static bool& enabled() {
    static thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward;

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
  os << ")";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;
  std::shared_ptr<Node> node;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(numel(n->shape), T(0));
    return Tensor(n);
  }
  static Tensor full(std::vector<int> shape, T v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node->value.begin(), t.node->value.end(), v);
    return t;
  }
  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    check(numel(shape) == values.size(), "Tensor::from: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(n);
  }
  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(node); }
  const std::vector<int>& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node->value.size(); }
  T* data() { return node->value.data(); }
  const T* data() const { return node->value.data(); }
  std::vector<T>& values() { return node->value; }
  const std::vector<T>& values() const { return node->value; }
  T item() const {
    check(size() == 1, "item(): tensor is not a scalar");
    return node->value[0];
  }

  void set_requires_grad(bool rg) { node->requires_grad = rg; }
  bool requires_grad() const { return node->requires_grad; }
  std::vector<T>& grad() {
    node->ensure_grad();
    return node->grad;
  }
  void zero_grad() {
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), T(0));
  }

  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node->shape;
    n->value = node->value;
    return Tensor(n);
  }

  // Backpropagate from this scalar through the recorded graph.
  void backward() {
    check(size() == 1, "backward(): root must be a scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({node.get(), 0});
    seen.insert(node.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node->ensure_grad();
    node->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward) n->backward(*n);
    }
  }
};

namespace detail {

template <typename T>
Tensor<T> make_node(std::vector<int> shape, std::vector<Tensor<T>> parents,
                    std::function<void(TensorNode<T>&)> back) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), T(0));
  bool rg = false;
  if (GradMode::enabled()) {
    for (const auto& p : parents) rg = rg || p.node->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) {
    for (auto& p : parents) n->parents.push_back(p.node);
    n->backward = std::move(back);
  }
  return Tensor<T>(n);
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto an = a.node, bn = b.node;
  auto out = detail::make_node<T>(a.shape(), {a, b}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  auto an = a.node, bn = b.node;
  auto out = detail::make_node<T>(a.shape(), {a, b}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  auto an = a.node, bn = b.node;
  auto out = detail::make_node<T>(a.shape(), {a, b}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node;
  auto out = detail::make_node<T>(a.shape(), {a}, [an, c](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  auto an = a.node;
  auto out = detail::make_node<T>(a.shape(), {a}, [an](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  return out;
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& a, F f, DF dfdx_from_xy) {
  auto an = a.node;
  auto out = detail::make_node<T>(a.shape(), {a}, nullptr);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = f(a.data()[i]);
  if (out.node->requires_grad) {
    auto on = out.node;
    out.node->backward = [an, dfdx_from_xy](TensorNode<T>& n) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.size(); ++i)
        an->grad[i] += n.grad[i] * dfdx_from_xy(an->value[i], n.value[i]);
    };
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.2)) {
  return unary_op(a, [slope](T x) { return x > T(0) ? x : slope * x; },
                  [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_t(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return std::abs(x); },
                  [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> recip(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

// x[C,H,W] * m[H,W], the spatial map broadcast across channels.
template <typename T>
Tensor<T> mul_broadcast_channel(const Tensor<T>& x, const Tensor<T>& m) {
  check(x.shape().size() == 3, "mul_broadcast_channel: expects C×H×W");
  std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  check(m.size() == hw, "mul_broadcast_channel: spatial size mismatch");
  int c = x.dim(0);
  auto xn = x.node, mn = m.node;
  auto out = detail::make_node<T>(x.shape(), {x, m}, [xn, mn, c, hw](TensorNode<T>& nd) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < hw; ++p)
          xn->grad[ci * hw + p] += nd.grad[ci * hw + p] * mn->value[p];
    }
    if (mn->requires_grad) {
      mn->ensure_grad();
      for (int ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < hw; ++p)
          mn->grad[p] += nd.grad[ci * hw + p] * xn->value[ci * hw + p];
    }
  });
  for (int ci = 0; ci < c; ++ci)
    for (std::size_t p = 0; p < hw; ++p) out.data()[ci * hw + p] = x.data()[ci * hw + p] * m.data()[p];
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto an = a.node;
  auto out = detail::make_node<T>({1}, {a}, [an](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += n.grad[0];
  });
  out.data()[0] = std::accumulate(a.data(), a.data() + a.size(), T(0));
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  T inv = T(1) / static_cast<T>(a.size());
  auto an = a.node;
  auto out = detail::make_node<T>({1}, {a}, [an, inv](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += n.grad[0] * inv;
  });
  out.data()[0] = std::accumulate(a.data(), a.data() + a.size(), T(0)) * inv;
  return out;
}

// Euclidean norm over all elements; gradient defined as 0 at the origin.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a) {
  auto an = a.node;
  auto out = detail::make_node<T>({1}, {a}, [an](TensorNode<T>& n) {
    an->ensure_grad();
    T norm = n.value[0];
    if (norm <= T(0)) return;
    for (std::size_t i = 0; i < an->size(); ++i)
      an->grad[i] += n.grad[0] * an->value[i] / norm;
  });
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  out.data()[0] = std::sqrt(s);
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
  check(numel(shape) == a.size(), "reshape: element count mismatch");
  auto an = a.node;
  auto out = detail::make_node<T>(shape, {a}, [an](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i) an->grad[i] += n.grad[i];
  });
  std::copy(a.data(), a.data() + a.size(), out.data());
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  check(a.shape().size() == 2, "transpose: expects a matrix");
  int r = a.dim(0), c = a.dim(1);
  auto an = a.node;
  auto out = detail::make_node<T>({c, r}, {a}, [an, r, c](TensorNode<T>& n) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) an->grad[i * c + j] += n.grad[j * r + i];
  });
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
  return out;
}

// Concatenate 2-D tensors along rows (dim 0); all must share the column count.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  int cols = parts[0].dim(1), rows = 0;
  for (const auto& p : parts) {
    check(p.shape().size() == 2 && p.dim(1) == cols, "concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node);
  auto out = detail::make_node<T>({rows, cols}, parts, [nodes, cols](TensorNode<T>& n) {
    std::size_t off = 0;
    for (auto& pn : nodes) {
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (std::size_t i = 0; i < pn->size(); ++i) pn->grad[i] += n.grad[off + i];
      }
      off += pn->size();
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

// Rows [r0, r1) of a 2-D tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  check(a.shape().size() == 2 && 0 <= r0 && r0 < r1 && r1 <= a.dim(0), "slice_rows: bad range");
  int cols = a.dim(1);
  auto an = a.node;
  auto out = detail::make_node<T>({r1 - r0, cols}, {a}, [an, r0, cols](TensorNode<T>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.size(); ++i)
      an->grad[static_cast<std::size_t>(r0) * cols + i] += n.grad[i];
  });
  std::copy(a.data() + static_cast<std::size_t>(r0) * cols,
            a.data() + static_cast<std::size_t>(r1) * cols, out.data());
  return out;
}

// Columns [c0, c1) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  check(a.shape().size() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1), "slice_cols: bad range");
  int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  auto an = a.node;
  auto out = detail::make_node<T>({rows, w}, {a}, [an, rows, cols, c0, w](TensorNode<T>& n) {
    an->ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < w; ++j) an->grad[i * cols + c0 + j] += n.grad[i * w + j];
  });
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < w; ++j) out.data()[i * w + j] = a.data()[i * cols + c0 + j];
  return out;
}

// Concatenate C×H×W tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_channels: empty input");
  int h = parts[0].dim(1), w = parts[0].dim(2), c = 0;
  for (const auto& p : parts) {
    check(p.shape().size() == 3 && p.dim(1) == h && p.dim(2) == w,
          "concat_channels: spatial mismatch");
    c += p.dim(0);
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node);
  auto out = detail::make_node<T>({c, h, w}, parts, [nodes](TensorNode<T>& n) {
    std::size_t off = 0;
    for (auto& pn : nodes) {
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (std::size_t i = 0; i < pn->size(); ++i) pn->grad[i] += n.grad[off + i];
      }
      off += pn->size();
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
        "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto an = a.node, bn = b.node;
  auto out = detail::make_node<T>({n, m}, {a, b}, [an, bn, n, k, m](TensorNode<T>& nd) {
    detail::CMatMap<T> G(nd.grad.data(), n, m);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::CMatMap<T> B(bn->value.data(), k, m);
      detail::MatMap<T> dA(an->grad.data(), n, k);
      dA.noalias() += G * B.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::CMatMap<T> A(an->value.data(), n, k);
      detail::MatMap<T> dB(bn->grad.data(), k, m);
      dB.noalias() += A.transpose() * G;
    }
  });
  detail::CMatMap<T> A(a.data(), n, k);
  detail::CMatMap<T> B(b.data(), k, m);
  detail::MatMap<T> O(out.data(), n, m);
  O.noalias() = A * B;
  return out;
}

// X[N,D] + b[D] broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
  check(x.shape().size() == 2 && b.size() == static_cast<std::size_t>(x.dim(1)),
        "add_row_bias: bias width mismatch");
  int n = x.dim(0), d = x.dim(1);
  auto xn = x.node, bn = b.node;
  auto out = detail::make_node<T>(x.shape(), {x, b}, [xn, bn, n, d](TensorNode<T>& nd) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < nd.size(); ++i) xn->grad[i] += nd.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) bn->grad[j] += nd.grad[i * d + j];
    }
  });
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] + b.data()[j];
  return out;
}

// ---------------------------------------------------------------------------
// row-wise softmax / layer norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  check(x.shape().size() == 2, "softmax_rows: expects a matrix");
  int n = x.dim(0), d = x.dim(1);
  auto xn = x.node;
  auto out = detail::make_node<T>(x.shape(), {x}, [xn, n, d](TensorNode<T>& nd) {
    xn->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const T* y = nd.value.data() + static_cast<std::size_t>(i) * d;
      const T* gy = nd.grad.data() + static_cast<std::size_t>(i) * d;
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
      T* gx = xn->grad.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) gx[j] += (gy[j] - dot) * y[j];
    }
  });
  for (int i = 0; i < n; ++i) {
    const T* xi = x.data() + static_cast<std::size_t>(i) * d;
    T* yi = out.data() + static_cast<std::size_t>(i) * d;
    T mx = *std::max_element(xi, xi + d);
    T s = T(0);
    for (int j = 0; j < d; ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (int j = 0; j < d; ++j) yi[j] /= s;
  }
  return out;
}

// LayerNorm over the last axis of a 2-D tensor, with learned gamma/beta.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  check(x.shape().size() == 2, "layer_norm_rows: expects a matrix");
  int n = x.dim(0), d = x.dim(1);
  check(gamma.size() == static_cast<std::size_t>(d) && beta.size() == static_cast<std::size_t>(d),
        "layer_norm_rows: gamma/beta width mismatch");
  auto xn = x.node, gn = gamma.node, bn = beta.node;
  // cache inv_std and xhat per row for backward
  auto inv_std = std::make_shared<std::vector<T>>(n);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto out = detail::make_node<T>(x.shape(), {x, gamma, beta},
                                  [xn, gn, bn, n, d, inv_std, xhat](TensorNode<T>& nd) {
    for (int i = 0; i < n; ++i) {
      const T* gy = nd.grad.data() + static_cast<std::size_t>(i) * d;
      const T* xh = xhat->data() + static_cast<std::size_t>(i) * d;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < d; ++j) gn->grad[j] += gy[j] * xh[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < d; ++j) bn->grad[j] += gy[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        T s1 = T(0), s2 = T(0);
        for (int j = 0; j < d; ++j) {
          T gyh = gy[j] * gn->value[j];
          s1 += gyh;
          s2 += gyh * xh[j];
        }
        T* gx = xn->grad.data() + static_cast<std::size_t>(i) * d;
        T is = (*inv_std)[i];
        for (int j = 0; j < d; ++j) {
          T gyh = gy[j] * gn->value[j];
          gx[j] += is * (gyh - s1 / d - xh[j] * s2 / d);
        }
      }
    }
  });
  for (int i = 0; i < n; ++i) {
    const T* xi = x.data() + static_cast<std::size_t>(i) * d;
    T mean = std::accumulate(xi, xi + d, T(0)) / d;
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    T* yi = out.data() + static_cast<std::size_t>(i) * d;
    T* xh = xhat->data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * is;
      yi[j] = xh[j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad_h, int pad_w,
            int ho, int wo, T* col) {
  // col is [c*kh*kw, ho*wo]
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + ((static_cast<std::size_t>(ci) * kh + ki) * kw + kj) *
                           static_cast<std::size_t>(ho) * wo;
        for (int oi = 0; oi < ho; ++oi) {
          int ii = oi * stride + ki - pad_h;
          for (int oj = 0; oj < wo; ++oj) {
            int jj = oj * stride + kj - pad_w;
            row[oi * wo + oj] = (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                    ? x[(static_cast<std::size_t>(ci) * h + ii) * w + jj]
                                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad_h,
                int pad_w, int ho, int wo, T* gx) {
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + ((static_cast<std::size_t>(ci) * kh + ki) * kw + kj) *
                                 static_cast<std::size_t>(ho) * wo;
        for (int oi = 0; oi < ho; ++oi) {
          int ii = oi * stride + ki - pad_h;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < wo; ++oj) {
            int jj = oj * stride + kj - pad_w;
            if (jj < 0 || jj >= w) continue;
            gx[(static_cast<std::size_t>(ci) * h + ii) * w + jj] += row[oi * wo + oj];
          }
        }
      }
}

}  // namespace detail

// x: [C,H,W], w: [Co,C,kh,kw], b: [Co]; zero padding (per-axis).
template <typename T>
Tensor<T> conv2d_hw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                    int pad_h, int pad_w) {
  check(x.shape().size() == 3 && w.shape().size() == 4, "conv2d: bad ranks");
  check(x.dim(0) == w.dim(1), "conv2d: channel mismatch");
  int c = x.dim(0), h = x.dim(1), ww = x.dim(2);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(b.size() == static_cast<std::size_t>(co), "conv2d: bias size mismatch");
  int ho = (h + 2 * pad_h - kh) / stride + 1;
  int wo = (ww + 2 * pad_w - kw) / stride + 1;
  check(ho > 0 && wo > 0, "conv2d: output would be empty");
  int k = c * kh * kw, hw = ho * wo;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(k) * hw);
  detail::im2col(x.data(), c, h, ww, kh, kw, stride, pad_h, pad_w, ho, wo, col->data());

  auto xn = x.node, wn = w.node, bn = b.node;
  auto out = detail::make_node<T>({co, ho, wo}, {x, w, b},
                                  [xn, wn, bn, col, c, h, ww, kh, kw, stride, pad_h, pad_w, ho,
                                   wo, co, k, hw](TensorNode<T>& nd) {
    detail::CMatMap<T> G(nd.grad.data(), co, hw);
    if (wn->requires_grad) {
      wn->ensure_grad();
      detail::CMatMap<T> K(col->data(), k, hw);
      detail::MatMap<T> dW(wn->grad.data(), co, k);
      dW.noalias() += G * K.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < co; ++i) {
        T s = T(0);
        const T* g = nd.grad.data() + static_cast<std::size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) s += g[j];
        bn->grad[i] += s;
      }
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      std::vector<T> dcol(static_cast<std::size_t>(k) * hw);
      detail::CMatMap<T> W(wn->value.data(), co, k);
      detail::MatMap<T> dK(dcol.data(), k, hw);
      dK.noalias() = W.transpose() * G;
      detail::col2im_add(dcol.data(), c, h, ww, kh, kw, stride, pad_h, pad_w, ho, wo,
                         xn->grad.data());
    }
  });
  detail::CMatMap<T> W(w.data(), co, k);
  detail::CMatMap<T> K(col->data(), k, hw);
  detail::MatMap<T> O(out.data(), co, hw);
  O.noalias() = W * K;
  for (int i = 0; i < co; ++i) {
    T* o = out.data() + static_cast<std::size_t>(i) * hw;
    T bi = b.data()[i];
    for (int j = 0; j < hw; ++j) o[j] += bi;
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
  return conv2d_hw(x, w, b, stride, pad, pad);
}

// x: [C,L], w: [Co,C,kl], b: [Co]; 1-D convolution over the last axis.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
  check(x.shape().size() == 2 && w.shape().size() == 3, "conv1d: bad ranks");
  auto x3 = reshape(x, {x.dim(0), 1, x.dim(1)});
  auto w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
  auto y = conv2d_hw(x3, w4, b, stride, 0, pad);
  return reshape(y, {y.dim(0), y.dim(2)});
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

// Per-channel normalization over the spatial extent (instance norm, no affine).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  check(x.shape().size() == 3, "instance_norm: expects C×H×W");
  int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  auto xn = x.node;
  auto inv_std = std::make_shared<std::vector<T>>(c);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto out = detail::make_node<T>(x.shape(), {x}, [xn, c, hw, inv_std, xhat](TensorNode<T>& nd) {
    xn->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      const T* gy = nd.grad.data() + static_cast<std::size_t>(ci) * hw;
      const T* xh = xhat->data() + static_cast<std::size_t>(ci) * hw;
      T s1 = T(0), s2 = T(0);
      for (int j = 0; j < hw; ++j) {
        s1 += gy[j];
        s2 += gy[j] * xh[j];
      }
      T* gx = xn->grad.data() + static_cast<std::size_t>(ci) * hw;
      T is = (*inv_std)[ci];
      for (int j = 0; j < hw; ++j)
        gx[j] += is * (gy[j] - s1 / hw - xh[j] * s2 / hw);
    }
  });
  for (int ci = 0; ci < c; ++ci) {
    const T* xi = x.data() + static_cast<std::size_t>(ci) * hw;
    T mean = std::accumulate(xi, xi + hw, T(0)) / hw;
    T var = T(0);
    for (int j = 0; j < hw; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= hw;
    T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[ci] = is;
    T* yi = out.data() + static_cast<std::size_t>(ci) * hw;
    T* xh = xhat->data() + static_cast<std::size_t>(ci) * hw;
    for (int j = 0; j < hw; ++j) yi[j] = xh[j] = (xi[j] - mean) * is;
  }
  return out;
}

// x[C,H,W] * s[C] + t[C], broadcast over the spatial extent.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& t) {
  check(x.shape().size() == 3, "channel_affine: expects C×H×W");
  int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  check(s.size() == static_cast<std::size_t>(c) && t.size() == static_cast<std::size_t>(c),
        "channel_affine: scale/shift size mismatch");
  auto xn = x.node, sn = s.node, tn = t.node;
  auto out = detail::make_node<T>(x.shape(), {x, s, t}, [xn, sn, tn, c, hw](TensorNode<T>& nd) {
    for (int ci = 0; ci < c; ++ci) {
      const T* gy = nd.grad.data() + static_cast<std::size_t>(ci) * hw;
      const T* xi = xn->value.data() + static_cast<std::size_t>(ci) * hw;
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* gx = xn->grad.data() + static_cast<std::size_t>(ci) * hw;
        T sv = sn->value[ci];
        for (int j = 0; j < hw; ++j) gx[j] += gy[j] * sv;
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        T acc = T(0);
        for (int j = 0; j < hw; ++j) acc += gy[j] * xi[j];
        sn->grad[ci] += acc;
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        T acc = T(0);
        for (int j = 0; j < hw; ++j) acc += gy[j];
        tn->grad[ci] += acc;
      }
    }
  });
  for (int ci = 0; ci < c; ++ci) {
    const T* xi = x.data() + static_cast<std::size_t>(ci) * hw;
    T* yi = out.data() + static_cast<std::size_t>(ci) * hw;
    T sv = s.data()[ci], tv = t.data()[ci];
    for (int j = 0; j < hw; ++j) yi[j] = xi[j] * sv + tv;
  }
  return out;
}

// Channel-to-space rearrangement: [C*r*r, H, W] -> [C, H*r, W*r].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  check(x.shape().size() == 3 && x.dim(0) % (r * r) == 0, "pixel_shuffle: channel count not divisible");
  int co = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  auto xn = x.node;
  auto index_of = [co, h, w, r](std::size_t oidx) {
    int wo = w * r;
    int c = static_cast<int>(oidx / (static_cast<std::size_t>(h) * r * wo));
    std::size_t rem = oidx % (static_cast<std::size_t>(h) * r * wo);
    int i = static_cast<int>(rem / wo), j = static_cast<int>(rem % wo);
    int ii = i / r, ri = i % r, jj = j / r, rj = j % r;
    int ci = (c * r + ri) * r + rj;
    return (static_cast<std::size_t>(ci) * h + ii) * w + jj;
  };
  auto out = detail::make_node<T>({co, h * r, w * r}, {x}, [xn, index_of](TensorNode<T>& nd) {
    xn->ensure_grad();
    for (std::size_t o = 0; o < nd.size(); ++o) xn->grad[index_of(o)] += nd.grad[o];
  });
  for (std::size_t o = 0; o < out.size(); ++o) out.data()[o] = x.data()[index_of(o)];
  return out;
}

// Bilinear resize of a C×H×W tensor (half-pixel centers), differentiable.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int h2, int w2) {
  check(x.shape().size() == 3, "resize_bilinear: expects C×H×W");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h2 == h && w2 == w) return x;
  struct Tap {
    int i0, i1;
    T f;
  };
  auto taps_y = std::make_shared<std::vector<Tap>>(h2);
  auto taps_x = std::make_shared<std::vector<Tap>>(w2);
  auto fill = [](std::vector<Tap>& taps, int n_out, int n_in) {
    for (int i = 0; i < n_out; ++i) {
      T src = (static_cast<T>(i) + T(0.5)) * n_in / n_out - T(0.5);
      src = std::min(std::max(src, T(0)), static_cast<T>(n_in - 1));
      int i0 = static_cast<int>(std::floor(src));
      int i1 = std::min(i0 + 1, n_in - 1);
      taps[i] = {i0, i1, src - static_cast<T>(i0)};
    }
  };
  fill(*taps_y, h2, h);
  fill(*taps_x, w2, w);
  auto xn = x.node;
  auto out = detail::make_node<T>({c, h2, w2}, {x},
                                  [xn, taps_y, taps_x, c, h, w, h2, w2](TensorNode<T>& nd) {
    xn->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      T* gx = xn->grad.data() + static_cast<std::size_t>(ci) * h * w;
      const T* gy = nd.grad.data() + static_cast<std::size_t>(ci) * h2 * w2;
      for (int i = 0; i < h2; ++i) {
        auto ty = (*taps_y)[i];
        for (int j = 0; j < w2; ++j) {
          auto tx = (*taps_x)[j];
          T g = gy[i * w2 + j];
          gx[ty.i0 * w + tx.i0] += g * (T(1) - ty.f) * (T(1) - tx.f);
          gx[ty.i0 * w + tx.i1] += g * (T(1) - ty.f) * tx.f;
          gx[ty.i1 * w + tx.i0] += g * ty.f * (T(1) - tx.f);
          gx[ty.i1 * w + tx.i1] += g * ty.f * tx.f;
        }
      }
    }
  });
  for (int ci = 0; ci < c; ++ci) {
    const T* xi = x.data() + static_cast<std::size_t>(ci) * h * w;
    T* yi = out.data() + static_cast<std::size_t>(ci) * h2 * w2;
    for (int i = 0; i < h2; ++i) {
      auto ty = (*taps_y)[i];
      for (int j = 0; j < w2; ++j) {
        auto tx = (*taps_x)[j];
        yi[i * w2 + j] = xi[ty.i0 * w + tx.i0] * (T(1) - ty.f) * (T(1) - tx.f) +
                         xi[ty.i0 * w + tx.i1] * (T(1) - ty.f) * tx.f +
                         xi[ty.i1 * w + tx.i0] * ty.f * (T(1) - tx.f) +
                         xi[ty.i1 * w + tx.i1] * ty.f * tx.f;
      }
    }
  }
  return out;
}

// Bilinear sampling of x at p + offset(p). Offsets are relative displacements
// in pixel units (channel 0 = dx, channel 1 = dy); out-of-bounds samples use
// border replication. Differentiable w.r.t. both the input and the offsets.
template <typename T>
Tensor<T> grid_sample_relative(const Tensor<T>& x, const Tensor<T>& offsets) {
  check(x.shape().size() == 3 && offsets.shape().size() == 3 && offsets.dim(0) == 2,
        "grid_sample_relative: bad ranks");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check(offsets.dim(1) == h && offsets.dim(2) == w,
        "grid_sample_relative: offset grid must match input size");
  auto xn = x.node, on = offsets.node;
  int hw = h * w;
  auto fwd_or_bwd = [c, h, w, hw](const std::vector<T>& xv, const std::vector<T>& ov, T* yv,
                                  TensorNode<T>* nd, TensorNode<T>* xnode, TensorNode<T>* onode) {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        int p = i * w + j;
        T sx = static_cast<T>(j) + ov[p];
        T sy = static_cast<T>(i) + ov[hw + p];
        T cx = std::min(std::max(sx, T(0)), static_cast<T>(w - 1));
        T cy = std::min(std::max(sy, T(0)), static_cast<T>(h - 1));
        bool in_x = (sx == cx), in_y = (sy == cy);
        int x0 = static_cast<int>(std::floor(cx));
        int y0 = static_cast<int>(std::floor(cy));
        int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        T fx = cx - static_cast<T>(x0), fy = cy - static_cast<T>(y0);
        if (!nd) {
          for (int ci = 0; ci < c; ++ci) {
            const T* xc = xv.data() + static_cast<std::size_t>(ci) * hw;
            T v00 = xc[y0 * w + x0], v01 = xc[y0 * w + x1];
            T v10 = xc[y1 * w + x0], v11 = xc[y1 * w + x1];
            yv[static_cast<std::size_t>(ci) * hw + p] =
                v00 * (T(1) - fy) * (T(1) - fx) + v01 * (T(1) - fy) * fx +
                v10 * fy * (T(1) - fx) + v11 * fy * fx;
          }
        } else {
          T gdx = T(0), gdy = T(0);
          for (int ci = 0; ci < c; ++ci) {
            const T* xc = xv.data() + static_cast<std::size_t>(ci) * hw;
            T g = nd->grad[static_cast<std::size_t>(ci) * hw + p];
            if (xnode) {
              T* gx = xnode->grad.data() + static_cast<std::size_t>(ci) * hw;
              gx[y0 * w + x0] += g * (T(1) - fy) * (T(1) - fx);
              gx[y0 * w + x1] += g * (T(1) - fy) * fx;
              gx[y1 * w + x0] += g * fy * (T(1) - fx);
              gx[y1 * w + x1] += g * fy * fx;
            }
            if (onode) {
              T v00 = xc[y0 * w + x0], v01 = xc[y0 * w + x1];
              T v10 = xc[y1 * w + x0], v11 = xc[y1 * w + x1];
              if (in_x) gdx += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              if (in_y) gdy += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
          if (onode) {
            onode->grad[p] += gdx;
            onode->grad[hw + p] += gdy;
          }
        }
      }
  };
  auto out = detail::make_node<T>(x.shape(), {x, offsets}, [xn, on, fwd_or_bwd](TensorNode<T>& nd) {
    TensorNode<T>* xnode = nullptr;
    TensorNode<T>* onode = nullptr;
    if (xn->requires_grad) {
      xn->ensure_grad();
      xnode = xn.get();
    }
    if (on->requires_grad) {
      on->ensure_grad();
      onode = on.get();
    }
    fwd_or_bwd(xn->value, on->value, nullptr, &nd, xnode, onode);
  });
  fwd_or_bwd(x.values(), offsets.values(), out.data(), nullptr, nullptr, nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// finite-difference gradient check helper (test oracle)
// ---------------------------------------------------------------------------

template <typename T, typename F>
T finite_diff_max_rel_error(F loss_fn, std::vector<Tensor<T>> params, T step = T(1e-3)) {
  // analytic
  for (auto& p : params) p.zero_grad();
  {
    Tensor<T> loss = loss_fn();
    loss.backward();
  }
  T worst = T(0);
  for (auto& p : params) {
    std::vector<T> analytic = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      T saved = p.data()[i];
      p.data()[i] = saved + step;
      T up;
      {
        NoGradGuard ng;
        up = loss_fn().item();
      }
      p.data()[i] = saved - step;
      T dn;
      {
        NoGradGuard ng;
        dn = loss_fn().item();
      }
      p.data()[i] = saved;
      T fd = (up - dn) / (T(2) * step);
      T denom = std::max({std::abs(fd), std::abs(analytic[i]), T(1e-4)});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  }
  return worst;
}

// Norm-wise variant: ||g_fd - g||_2 / max(||g_fd||, ||g||, 1e-8). Preferred for
// composite losses containing ReLU/abs kinks, where a coarse step can cross a
// kink on a handful of coordinates and blow up the per-coordinate ratio even
// though the analytic gradient is exact.
template <typename T, typename F>
T finite_diff_rel_error_norm(F loss_fn, std::vector<Tensor<T>> params, T step = T(1e-3)) {
  for (auto& p : params) p.zero_grad();
  {
    Tensor<T> loss = loss_fn();
    loss.backward();
  }
  T diff2 = T(0), fd2 = T(0), an2 = T(0);
  for (auto& p : params) {
    std::vector<T> analytic = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      T saved = p.data()[i];
      p.data()[i] = saved + step;
      T up;
      {
        NoGradGuard ng;
        up = loss_fn().item();
      }
      p.data()[i] = saved - step;
      T dn;
      {
        NoGradGuard ng;
        dn = loss_fn().item();
      }
      p.data()[i] = saved;
      T fd = (up - dn) / (T(2) * step);
      diff2 += (fd - analytic[i]) * (fd - analytic[i]);
      fd2 += fd * fd;
      an2 += analytic[i] * analytic[i];
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(an2), T(1e-8)});
}

}  // namespace lap
