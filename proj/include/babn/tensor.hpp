// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-free reverse-mode autodiff.
// Every op records its parents and a backward closure when gradient
// recording is enabled and at least one input requires a gradient. The graph
// is implicit in the parent links; Tensor::backward() orders it
// topologically from the scalar root.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "babn/error.hpp"

namespace babn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::uint64_t id = 0;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t size() const { return node_->value.size(); }
  std::uint64_t id() const { return node_->id; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient view; zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad() const { node_->grad.clear(); }

  /// Reverse pass from a single-element tensor.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Process-wide switch on graph recording (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- elementwise binary ops: `b` broadcasts into `a` (right-aligned, each
// dim of b equal to a's or 1). The result always has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// log(exp(a) + exp(b)), same shapes.
Tensor logaddexp(const Tensor& a, const Tensor& b);

// ---- scalar ops
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);
Tensor pow_scalar(const Tensor& x, double p);

// ---- unary ops
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor relu(const Tensor& x);
/// ln(1 + e^x), evaluated as max(x,0) + ln(1 + e^{-|x|}).
Tensor softplus(const Tensor& x);
/// ln(softplus(x)), finite for very negative x.
Tensor log_softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
/// max(x, floor); gradient passes only where x > floor.
Tensor floor_at(const Tensor& x, double floor);
Tensor lgamma(const Tensor& x);
Tensor digamma(const Tensor& x);

// ---- reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::ptrdiff_t axis);
Tensor mean(const Tensor& x, std::ptrdiff_t axis);

// ---- shape ops
Tensor reshape(const Tensor& x, Shape shape);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);

// ---- linear algebra / nn
/// a [..., m, p] x b [..., p, n]; b's batch dims must be a suffix of a's.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor log_softmax(const Tensor& x);
/// Normalizes over the last axis, then applies gain and bias of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Rows of `table` [V x d] selected by `ids`; result [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Mean negative log-likelihood of integer labels under logits [N x C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- checks
bool all_finite(const Tensor& x);
/// Throws NumericalError naming `what` when x has non-finite entries.
void check_finite(const Tensor& x, const std::string& what);

}  // namespace babn
