#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "parakit/errors.hpp"
#include "parakit/rng.hpp"

namespace parakit {

// When false, ops build no backward graph. Saved/restored by NoGradGuard.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

// Optional finite check after every op. Off by default (costly); tests and
// debugging sessions switch it on.
inline bool& finite_check_mode() {
  thread_local bool enabled = false;
  return enabled;
}

namespace detail {

inline std::uint64_t next_node_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool wants_grad() const { return requires_grad || backward_fn != nullptr; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) fail_contract("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace detail

template <typename T = float>
class BasicTensor {
 public:
  using Node = detail::TensorNode<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static BasicTensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->data.assign(detail::shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    n->seq = detail::next_node_seq();
    return BasicTensor(std::move(n));
  }

  static BasicTensor from_data(std::vector<int> shape, std::vector<T> data,
                               bool requires_grad = false) {
    if (data.size() != detail::shape_numel(shape))
      fail_contract("from_data: buffer size " + std::to_string(data.size()) +
                    " does not match shape " + detail::shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->seq = detail::next_node_seq();
    return BasicTensor(std::move(n));
  }

  static BasicTensor randn(std::vector<int> shape, SeededRng& rng, T stddev,
                           bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  int rows() const {
    require_2d("rows");
    return node_->shape[0];
  }
  int cols() const {
    require_2d("cols");
    return node_->shape[1];
  }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  T& at(int r, int c) {
    require_2d("at");
    return node_->data[static_cast<std::size_t>(r) * node_->shape[1] + c];
  }
  T at(int r, int c) const {
    require_2d("at");
    return node_->data[static_cast<std::size_t>(r) * node_->shape[1] + c];
  }

  T item() const {
    if (size() != 1)
      fail_contract("item: tensor " + detail::shape_str(node_->shape) + " is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }

  // Reverse-mode sweep from a scalar. Gradients of graph-internal nodes are
  // reset per sweep; leaf gradients accumulate across repeated calls until
  // zero_grad.
  void backward() {
    if (size() != 1)
      fail_contract("backward: output " + detail::shape_str(node_->shape) + " is not scalar");
    std::vector<Node*> order;
    topo_order(order);
    for (Node* n : order) {
      if (n->backward_fn) n->grad.assign(n->data.size(), T(0));
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  void require_2d(const char* who) const {
    if (node_->shape.size() != 2)
      fail_contract(std::string(who) + ": tensor " + detail::shape_str(node_->shape) +
                    " is not 2-D");
  }

  void topo_order(std::vector<Node*>& out) const {
    // Iterative post-order DFS; child visit order follows the recorded parent
    // order, so the sweep is deterministic for a given graph.
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx].get();
        ++idx;
        if (p->backward_fn && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        out.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace detail {

// Shared op constructor: wires parents and the backward closure only when
// grad tracking is on and some input wants gradient.
template <typename T, typename F>
BasicTensor<T> make_op(std::vector<int> shape, std::vector<T> data,
                       std::vector<std::shared_ptr<TensorNode<T>>> parents, F&& backward) {
  auto n = std::make_shared<TensorNode<T>>();
  if (data.size() != shape_numel(shape))
    fail_contract("make_op: buffer/shape mismatch for " + shape_str(shape));
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->seq = next_node_seq();
  bool track = grad_mode();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p->wants_grad();
    track = any;
  }
  if (track) {
    n->parents = std::move(parents);
    n->backward_fn = std::forward<F>(backward);
  }
  if (finite_check_mode()) {
    for (T v : n->data) {
      if (!std::isfinite(static_cast<double>(v)))
        fail_numeric("non-finite value produced by op (shape " + shape_str(n->shape) + ")");
    }
  }
  return BasicTensor<T>(std::move(n));
}

}  // namespace detail

}  // namespace parakit
