// Reverse-mode automatic differentiation over dense N-d tensors.
//
// Tensors are define-by-run graph nodes: each op computes its value eagerly
// and records a backward closure. backward() walks the reachable subgraph in
// reverse creation order (parents are always created before children), so no
// explicit topological sort is needed. Gradients accumulate with +=, which
// makes fan-out (one tensor feeding several consumers) sum contributions.
//
// Layout is channel-last throughout: images are [H, W, C], feature volumes
// are [H, W, D, C].
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "voxrender/common.hpp"

namespace voxrender {

using Shape = std::vector<std::size_t>;

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <class T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) { return from_data(std::move(shape), {}, false); }

  static Tensor full(Shape shape, T v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  /// Creates a node; empty data means zero-filled.
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    const std::size_t count = product(n->shape);
    if (data.empty()) data.assign(count, T(0));
    check_shape(data.size() == count, "Tensor: data length must equal product(shape)");
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  static Tensor leaf(Shape shape, std::vector<T> data = {}) {
    return from_data(std::move(shape), std::move(data), true);
  }

  /// Builds an op node. `backprop` may be empty for non-differentiable ops.
  static Tensor op(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    check_shape(value.size() == product(n->shape), "Tensor::op: value/shape mismatch");
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backprop = std::move(backprop);
    }
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward(); zeros if never touched.
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const {
    check_arg(size() == 1, "Tensor::item: tensor is not scalar");
    return node_->value[0];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Fills .grad() on every reachable
/// tensor that requires grad.
template <class T>
void backward(const Tensor<T>& loss) {
  check_arg(loss.size() == 1, "backward: loss must be scalar");
  using Node = typename Tensor<T>::Node;
  auto root = loss.node();
  if (!root->requires_grad) return;

  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto& n : order)
    if (n->backprop) n->backprop(*n);
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * c;
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an, c](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c;
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.value()) s += x;
  auto an = a.node();
  return Tensor<T>::op({1}, {s}, {a}, [an](auto& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.value()) s += x;
  const T inv = T(1) / static_cast<T>(a.size());
  auto an = a.node();
  return Tensor<T>::op({1}, {s * inv}, {a}, [an, inv](auto& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0] * inv;
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape(product(shape) == a.size(), "reshape: element count mismatch");
  auto an = a.node();
  return Tensor<T>::op(std::move(shape), a.value(), {a}, [an](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

/// Concatenation along `axis`; all other dims must match.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  check_shape(a.shape().size() == b.shape().size() && axis < a.shape().size(),
              "concat: rank mismatch or bad axis");
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (i != axis)
      check_shape(a.shape()[i] == b.shape()[i], "concat: non-axis dims must match");
  Shape out = a.shape();
  out[axis] += b.shape()[axis];

  // outer = product of dims before axis, inner = product after.
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
  for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  const std::size_t wa = a.shape()[axis] * inner;
  const std::size_t wb = b.shape()[axis] * inner;

  std::vector<T> v(product(out));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().begin() + o * wa, wa, v.begin() + o * (wa + wb));
    std::copy_n(b.value().begin() + o * wb, wb, v.begin() + o * (wa + wb) + wa);
  }
  auto an = a.node(), bn = b.node();
  return Tensor<T>::op(out, std::move(v), {a, b}, [an, bn, outer, wa, wb](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < wa; ++i)
          an->grad[o * wa + i] += n.grad[o * (wa + wb) + i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < wb; ++i)
          bn->grad[o * wb + i] += n.grad[o * (wa + wb) + wa + i];
    }
  });
}

/// Contiguous slice [start, start+len) along `axis`.
template <class T>
Tensor<T> narrow(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  check_shape(axis < a.shape().size() && start + len <= a.shape()[axis], "narrow: out of range");
  Shape out = a.shape();
  out[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.shape().size(); ++i) inner *= a.shape()[i];
  const std::size_t src_w = a.shape()[axis] * inner;
  const std::size_t dst_w = len * inner;
  std::vector<T> v(product(out));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().begin() + o * src_w + start * inner, dst_w, v.begin() + o * dst_w);
  auto an = a.node();
  return Tensor<T>::op(out, std::move(v), {a}, [an, outer, inner, src_w, dst_w, start](auto& n) {
    an->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < dst_w; ++i)
        an->grad[o * src_w + start * inner + i] += n.grad[o * dst_w + i];
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] > T(0)) an->grad[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(1) / (T(1) + std::exp(-a.value()[i]));
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T y = n.value[i];
      an->grad[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Tensor<T> elu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T x = a.value()[i];
    v[i] = x > T(0) ? x : std::expm1(x);
  }
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T x = an->value[i];
      an->grad[i] += n.grad[i] * (x > T(0) ? T(1) : n.value[i] + T(1));
    }
  });
}

/// PReLU with a per-channel (last axis) trainable slope; slope of size 1 is
/// shared across channels.
template <class T>
Tensor<T> prelu(const Tensor<T>& a, const Tensor<T>& slope) {
  const std::size_t C = a.shape().back();
  check_shape(slope.size() == C || slope.size() == 1, "prelu: slope must have size C or 1");
  const bool shared = slope.size() == 1;
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T x = a.value()[i];
    v[i] = x > T(0) ? x : slope.value()[shared ? 0 : i % C] * x;
  }
  auto an = a.node(), sn = slope.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a, slope}, [an, sn, C, shared](auto& n) {
    if (an->requires_grad) an->ensure_grad();
    if (sn->requires_grad) sn->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T x = an->value[i];
      const std::size_t c = shared ? 0 : i % C;
      if (x > T(0)) {
        if (an->requires_grad) an->grad[i] += n.grad[i];
      } else {
        if (an->requires_grad) an->grad[i] += n.grad[i] * sn->value[c];
        if (sn->requires_grad) sn->grad[c] += n.grad[i] * x;
      }
    }
  });
}

/// min(x, limit); used for the upper clamp of shading compositions.
template <class T>
Tensor<T> clamp_max(const Tensor<T>& a, T limit) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(a.value()[i], limit);
  auto an = a.node();
  return Tensor<T>::op(a.shape(), std::move(v), {a}, [an, limit](auto& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] < limit) an->grad[i] += n.grad[i];
  });
}

}  // namespace voxrender
