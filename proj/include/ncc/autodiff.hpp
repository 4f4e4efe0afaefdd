#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every tensor is two-dimensional (a scalar is 1x1, a vector is 1xn). Binary
// element-wise ops broadcast a dimension of size 1. The graph is rebuilt for
// every evaluation; parameters are long-lived leaf tensors owned by a
// ParamStore. Kinks (relu at 0, maximum ties, clamp bounds) use the left
// derivative.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncc/error.hpp"

namespace ncc::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand for nodes that require grad
  bool requires_grad = false;
  bool grad_written = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (values.size() != shape.size()) {
      fail(ErrorKind::Shape, "tensor: " + std::to_string(values.size()) + " values for shape " + shape.str());
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(values);
    node->id = detail::next_id();
    return from_node(std::move(node));
  }

  static Tensor full(Shape shape, double v) { return constant(shape, std::vector<double>(shape.size(), v)); }
  static Tensor zeros(Shape shape) { return full(shape, 0.0); }
  static Tensor scalar(double v) { return constant({1, 1}, {v}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return constant({1, n}, std::move(values));
  }

  /// Leaf that accumulates gradients.
  static Tensor variable(Shape shape, std::vector<double> values) {
    Tensor t = constant(shape, std::move(values));
    t.node_->requires_grad = true;
    t.node_->ensure_grad();
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }
  std::uint64_t id() const { return node_->id; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad_written; }

  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) fail(ErrorKind::Shape, "item() on non-scalar " + shape().str());
    return node_->value[0];
  }

  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    node_->grad_written = false;
  }

  /// Copy of the values without graph history.
  Tensor detach() const { return constant(shape(), node_->value); }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Creates an op output; the backward closure is kept only when a parent needs gradients.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->id = detail::next_id();
  if (detail::grad_enabled()) {
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

namespace detail {

inline void accumulate(Node& target, std::size_t i, double g) {
  if (!target.requires_grad) return;
  target.ensure_grad();
  target.grad[i] += g;
  target.grad_written = true;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
  };
  return {dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

inline std::size_t bindex(const Shape& s, std::size_t r, std::size_t c) {
  return (s.rows == 1 ? 0 : r) * s.cols + (s.cols == 1 ? 0 : c);
}

/// Element-wise binary op with broadcasting. df returns (d/da, d/db) at (a, b).
template <class F, class DF>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DF df) {
  const Shape sa = a.shape(), sb = b.shape();
  const Shape out = broadcast_shape(sa, sb, name);
  std::vector<double> v(out.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) v[r * out.cols + c] = f(av[bindex(sa, r, c)], bv[bindex(sb, r, c)]);
  return make_result(out, std::move(v), {a, b}, [sa, sb, out, df](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t r = 0; r < out.rows; ++r) {
      for (std::size_t c = 0; c < out.cols; ++c) {
        const std::size_t ia = bindex(sa, r, c), ib = bindex(sb, r, c);
        const auto [ga, gb] = df(pa.value[ia], pb.value[ib]);
        const double g = self.grad[r * out.cols + c];
        accumulate(pa, ia, g * ga);
        accumulate(pb, ib, g * gb);
      }
    }
  });
}

/// Element-wise unary op; df receives (input, output).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> v(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  return make_result(a.shape(), std::move(v), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.value.size(); ++i) accumulate(p, i, self.grad[i] * df(p.value[i], self.value[i]));
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                        [](double, double) { return std::pair{1.0, 1.0}; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                        [](double, double) { return std::pair{1.0, -1.0}; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                        [](double x, double y) { return std::pair{y, x}; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "div", [](double x, double y) { return x / y; },
                        [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}
/// Ties send the gradient to b.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "maximum", [](double x, double y) { return x > y ? x : y; },
                        [](double x, double y) { return x > y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0}; });
}

inline Tensor scale(const Tensor& a, double k) {
  return detail::unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}
inline Tensor add_scalar(const Tensor& a, double k) {
  return detail::unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
/// Gradient passes only strictly inside (lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }
inline Tensor operator*(const Tensor& a, double k) { return scale(a, k); }
inline Tensor operator+(const Tensor& a, double k) { return add_scalar(a, k); }
inline Tensor operator-(double k, const Tensor& a) { return add_scalar(neg(a), k); }

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) fail(ErrorKind::Shape, "matmul: incompatible shapes " + sa.str() + " and " + sb.str());
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> v(m * n, 0.0);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) v[i * n + j] += x * bv[p * n + j];
    }
  return make_result({m, n}, std::move(v), {a, b}, [m, k, n](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      pa.grad_written = true;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * pb.value[p * n + j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      pb.grad_written = true;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = pa.value[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += x * self.grad[i * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const Shape s = a.shape();
  std::vector<double> v(s.size());
  const auto av = a.values();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) v[c * s.rows + r] = av[r * s.cols + c];
  return make_result({s.cols, s.rows}, std::move(v), {a}, [s](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) detail::accumulate(p, r * s.cols + c, self.grad[c * s.rows + r]);
  });
}

/// Concatenation along axis 0 (rows) or 1 (columns).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat: no inputs");
  Shape out = parts[0].shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape s = parts[i].shape();
    if (axis == 1) {
      if (s.rows != out.rows) fail(ErrorKind::Shape, "concat: incompatible shapes " + out.str() + " and " + s.str());
      out.cols += s.cols;
    } else {
      if (s.cols != out.cols) fail(ErrorKind::Shape, "concat: incompatible shapes " + out.str() + " and " + s.str());
      out.rows += s.rows;
    }
  }
  std::vector<double> v(out.size());
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Shape s = p.shape();
    const auto pv = p.values();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t dst = axis == 1 ? r * out.cols + offset + c : (offset + r) * out.cols + c;
        v[dst] = pv[r * s.cols + c];
      }
    offset += axis == 1 ? s.cols : s.rows;
  }
  return make_result(out, std::move(v), parts, [out, offsets, axis](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      detail::Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      for (std::size_t r = 0; r < p.shape.rows; ++r)
        for (std::size_t c = 0; c < p.shape.cols; ++c) {
          const std::size_t src = axis == 1 ? r * out.cols + offsets[k] + c : (offsets[k] + r) * out.cols + c;
          detail::accumulate(p, r * p.shape.cols + c, self.grad[src]);
        }
    }
  });
}

/// Half-open range [begin, end) along an axis.
inline Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  const std::size_t extent = axis == 1 ? s.cols : s.rows;
  if (begin > end || end > extent) {
    fail(ErrorKind::Shape, "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " + s.str());
  }
  const Shape out = axis == 1 ? Shape{s.rows, end - begin} : Shape{end - begin, s.cols};
  std::vector<double> v(out.size());
  const auto av = a.values();
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c)
      v[r * out.cols + c] = axis == 1 ? av[r * s.cols + begin + c] : av[(begin + r) * s.cols + c];
  return make_result(out, std::move(v), {a}, [s, out, axis, begin](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) {
        const std::size_t src = axis == 1 ? r * s.cols + begin + c : (begin + r) * s.cols + c;
        detail::accumulate(p, src, self.grad[r * out.cols + c]);
      }
  });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  return make_result({1, 1}, {total}, {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t i = 0; i < p.value.size(); ++i) detail::accumulate(p, i, self.grad[0]);
  });
}

/// Sum along an axis: axis 0 collapses rows to [1 x cols], axis 1 collapses columns to [rows x 1].
inline Tensor sum(const Tensor& a, int axis) {
  const Shape s = a.shape();
  const Shape out = axis == 0 ? Shape{1, s.cols} : Shape{s.rows, 1};
  std::vector<double> v(out.size(), 0.0);
  const auto av = a.values();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) v[axis == 0 ? c : r] += av[r * s.cols + c];
  return make_result(out, std::move(v), {a}, [s, axis](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) detail::accumulate(p, r * s.cols + c, self.grad[axis == 0 ? c : r]);
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }
inline Tensor mean(const Tensor& a, int axis) {
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return scale(sum(a, axis), 1.0 / n);
}

/// Prefix sums along columns, row by row.
inline Tensor cumsum(const Tensor& a) {
  const Shape s = a.shape();
  std::vector<double> v(a.values().begin(), a.values().end());
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 1; c < s.cols; ++c) v[r * s.cols + c] += v[r * s.cols + c - 1];
  return make_result(s, std::move(v), {a}, [s](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < s.rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = s.cols; c-- > 0;) {
        acc += self.grad[r * s.cols + c];
        detail::accumulate(p, r * s.cols + c, acc);
      }
    }
  });
}

/// Row-wise softmax.
inline Tensor softmax(const Tensor& a) {
  const Shape s = a.shape();
  std::vector<double> v(s.size());
  const auto av = a.values();
  for (std::size_t r = 0; r < s.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.cols; ++c) mx = std::max(mx, av[r * s.cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) z += v[r * s.cols + c] = std::exp(av[r * s.cols + c] - mx);
    for (std::size_t c = 0; c < s.cols; ++c) v[r * s.cols + c] /= z;
  }
  return make_result(s, std::move(v), {a}, [s](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < s.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) dot += self.grad[r * s.cols + c] * self.value[r * s.cols + c];
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t i = r * s.cols + c;
        detail::accumulate(p, i, self.value[i] * (self.grad[i] - dot));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Backward sweep

/// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) fail(ErrorKind::InvalidInput, "backward: loss must be scalar, got " + loss.shape().str());
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a deterministic topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), 0.0);
      n->grad_written = false;
    }
  }
  loss.node().ensure_grad();
  loss.node().grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Parameters and optimisation

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors with Adam moment slots.
class ParamStore {
 public:
  struct Slot {
    Tensor value;
    std::vector<double> m;
    std::vector<double> v;
  };

  Tensor& add(const std::string& name, Shape shape, std::vector<double> init) {
    if (slots_.count(name)) fail(ErrorKind::InvalidInput, "param store: duplicate name '" + name + "'");
    Slot slot{Tensor::variable(shape, std::move(init)), std::vector<double>(shape.size(), 0.0),
              std::vector<double>(shape.size(), 0.0)};
    return slots_.emplace(name, std::move(slot)).first->second.value;
  }

  const Tensor& get(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) fail(ErrorKind::InvalidInput, "param store: unknown parameter '" + name + "'");
    return it->second.value;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return slots_.count(name) > 0; }

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, slot] : slots_) n += slot.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, slot] : slots_) slot.value.zero_grad();
  }

  /// Deep copy: fresh tensors, same values and optimizer slots.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, slot] : slots_) {
      auto vals = slot.value.values();
      Slot copy{Tensor::variable(slot.value.shape(), {vals.begin(), vals.end()}), slot.m, slot.v};
      out.slots_.emplace(name, std::move(copy));
    }
    out.step_ = step_;
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step_;
    auto& params = j["params"];
    params = nlohmann::json::object();
    for (const auto& [name, slot] : slots_) {
      auto vals = slot.value.values();
      params[name] = {{"shape", {slot.value.rows(), slot.value.cols()}},
                      {"values", std::vector<double>(vals.begin(), vals.end())},
                      {"m", slot.m},
                      {"v", slot.v}};
    }
    return j;
  }

  static ParamStore from_json(const nlohmann::json& j) {
    ParamStore out;
    try {
      out.step_ = j.at("step").get<std::uint64_t>();
      for (const auto& [name, p] : j.at("params").items()) {
        const Shape shape{p.at("shape").at(0).get<std::size_t>(), p.at("shape").at(1).get<std::size_t>()};
        auto values = p.at("values").get<std::vector<double>>();
        if (values.size() != shape.size()) fail(ErrorKind::Schema, "checkpoint: size mismatch for '" + name + "'");
        Tensor& t = out.add(name, shape, std::move(values));
        (void)t;
        auto& slot = out.slots_.at(name);
        if (p.contains("m")) slot.m = p.at("m").get<std::vector<double>>();
        if (p.contains("v")) slot.v = p.at("v").get<std::vector<double>>();
        if (slot.m.size() != shape.size() || slot.v.size() != shape.size()) {
          fail(ErrorKind::Schema, "checkpoint: optimizer slot size mismatch for '" + name + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Schema, std::string("checkpoint: ") + e.what());
    }
    return out;
  }

 private:
  std::map<std::string, Slot> slots_;
  std::uint64_t step_ = 0;
};

/// One Adam update over every parameter, then clears gradients.
inline void adam_step(ParamStore& params, const AdamConfig& cfg) {
  bool any = false;
  for (const auto& [name, slot] : params.slots()) any = any || slot.value.has_grad();
  if (!any) fail(ErrorKind::State, "adam_step: no gradients populated");
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, slot] : params.slots()) {
    auto w = slot.value.mutable_values();
    auto g = slot.value.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    slot.value.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

namespace detail {

inline void check_coordinate(GradCheckResult& res, double analytic, double numeric, std::size_t index) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (res.checked == 0 || err > res.max_rel_error) {
    res.max_rel_error = err;
    res.worst_index = index;
  }
  ++res.checked;
}

}  // namespace detail

/// Compares backward() against central finite differences of a scalar function of one tensor.
/// Error per coordinate is |analytic - fd| / max(1, |analytic|).
inline GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Shape shape,
                                  const std::vector<double>& point, double step) {
  if (!(step > 0.0)) fail(ErrorKind::InvalidParameter, "grad_check: step must be positive");
  Tensor x = Tensor::variable(shape, point);
  Tensor y = f(x);
  if (y.size() != 1) fail(ErrorKind::InvalidInput, "grad_check: function must be scalar-valued");
  backward(y);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  if (analytic.size() != point.size()) analytic.assign(point.size(), 0.0);

  GradCheckResult res;
  std::vector<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = f(Tensor::constant(shape, probe)).item();
    probe[i] = point[i] - step;
    const double down = f(Tensor::constant(shape, probe)).item();
    probe[i] = point[i];
    detail::check_coordinate(res, analytic[i], (up - down) / (2.0 * step), i);
  }
  return res;
}

/// Same check over every coordinate of every parameter in a store; `loss` rebuilds the graph.
inline GradCheckResult grad_check_params(ParamStore& params, const std::function<Tensor()>& loss, double step) {
  if (!(step > 0.0)) fail(ErrorKind::InvalidParameter, "grad_check: step must be positive");
  params.zero_grad();
  backward(loss());
  GradCheckResult res;
  std::size_t flat = 0;
  for (auto& [name, slot] : params.slots()) {
    std::vector<double> analytic(slot.value.grad().begin(), slot.value.grad().end());
    auto w = slot.value.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i, ++flat) {
      const double orig = w[i];
      double up = 0.0, down = 0.0;
      {
        NoGradGuard guard;
        w[i] = orig + step;
        up = loss().item();
        w[i] = orig - step;
        down = loss().item();
      }
      w[i] = orig;
      detail::check_coordinate(res, analytic[i], (up - down) / (2.0 * step), flat);
    }
  }
  params.zero_grad();
  return res;
}

}  // namespace ncc::ad
