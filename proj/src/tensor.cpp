// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "babn/special.hpp"

namespace babn {
namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

/// Wraps a computed value; attaches the backward closure when needed.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward) {
  auto n = make_node(std::move(shape), std::move(value));
  bool req = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) req = req || p->requires_grad;
  }
  if (req) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor(std::move(n));
}

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Describes how a broadcast operand `b` maps onto the shape of `a`.
struct Broadcast {
  enum class Kind { kSame, kPeriodic, kGeneral } kind = Kind::kSame;
  std::size_t period = 0;
  std::vector<std::size_t> map;  // kGeneral only: a-index -> b-index
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto fail = [&] {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " into " +
                         shape_str(a));
  };
  if (b.size() > a.size()) fail();
  Broadcast plan;
  if (a == b) return plan;
  const std::size_t off = a.size() - b.size();
  bool suffix = true;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] != a[off + i]) {
      suffix = false;
      if (b[i] != 1) fail();
    }
  }
  if (suffix) {
    plan.kind = Broadcast::Kind::kPeriodic;
    plan.period = shape_numel(b);
    return plan;
  }
  plan.kind = Broadcast::Kind::kGeneral;
  // strides of b expressed over a's axes (0 where b broadcasts)
  std::vector<std::size_t> bstride(a.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = b.size(); i-- > 0;) {
    bstride[off + i] = (b[i] == 1) ? 0 : s;
    s *= b[i];
  }
  const std::size_t n = shape_numel(a);
  plan.map.resize(n);
  std::vector<std::size_t> idx(a.size(), 0);
  std::size_t bi = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.map[flat] = bi;
    for (std::size_t ax = a.size(); ax-- > 0;) {
      ++idx[ax];
      bi += bstride[ax];
      if (idx[ax] < a[ax]) break;
      bi -= bstride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return plan;
}

inline std::size_t bidx(const Broadcast& p, std::size_t i) {
  switch (p.kind) {
    case Broadcast::Kind::kSame:
      return i;
    case Broadcast::Kind::kPeriodic:
      return i % p.period;
    default:
      return p.map[i];
  }
}

// Elementwise binary op with broadcasting of b. `f(a,b)` is the value,
// `da(a,b,y)` and `db(a,b,y)` are local partials.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  if (plan->kind == Broadcast::Kind::kSame) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[bidx(*plan, i)]);
  }
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [plan, da, db](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const auto& g = self.grad;
                       if (pa.requires_grad) {
                         auto& ga = pa.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += g[i] * da(pa.value[i], pb.value[bidx(*plan, i)], self.value[i]);
                         }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const std::size_t j = bidx(*plan, i);
                           gb[j] += g[i] * db(pa.value[i], pb.value[j], self.value[i]);
                         }
                       }
                     });
}

// Elementwise unary op; `df(x, y)` is dy/dx.
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gp[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

// C[m x n] (+)= A[m x p] * B[p x n], all row-major contiguous.
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t m, std::size_t p, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * p;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C[m x p] += G[m x n] * B^T, with B [p x n]. B is transposed once so the
// inner loop runs over contiguous memory.
void gemm_nt(const double* __restrict g, const double* __restrict b, double* __restrict c,
             std::size_t m, std::size_t p, std::size_t n) {
  thread_local std::vector<double> bt;
  bt.resize(p * n);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t j = 0; j < n; ++j) bt[j * p + k] = b[k * n + j];
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * p;
    for (std::size_t j = 0; j < n; ++j) {
      const double gij = gi[j];
      const double* bj = bt.data() + j * p;
      for (std::size_t k = 0; k < p; ++k) ci[k] += gij * bj[k];
    }
  }
}

// C[p x n] += A^T * G, with A [m x p], G [m x n].
void gemm_tn(const double* __restrict a, const double* __restrict g, double* __restrict c,
             std::size_t m, std::size_t p, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * p;
    const double* gi = g + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      double* ck = c + k * n;
      for (std::size_t j = 0; j < n; ++j) ck[j] += aik * gi[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t ax) {
  AxisSplit r{1, s[ax], 1};
  for (std::size_t i = 0; i < ax; ++i) r.outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const { return shape()[norm_axis(axis, rank())]; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t ax = 0;
  for (std::size_t i : index) {
    if (i >= shape()[ax]) throw DimensionError("at(): index out of bounds");
    flat = flat * shape()[ax] + i;
    ++ax;
  }
  return node_->value[flat];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() needs a single-element root");
  if (!requires_grad()) return;
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Tensor Tensor::detach() const { return Tensor(make_node(shape(), node_->value)); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

// ---------------------------------------------------------------- binary

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double r) { return -r / y; });
}

Tensor logaddexp(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("logaddexp: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  return binary(
      a, b, "logaddexp",
      [](double x, double y) {
        const double m = std::max(x, y);
        if (m == -std::numeric_limits<double>::infinity()) return m;
        return m + std::log1p(std::exp(-std::abs(x - y)));
      },
      [](double x, double, double r) { return std::exp(x - r); },
      [](double, double y, double r) { return std::exp(y - r); });
}

// ---------------------------------------------------------------- scalar

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor pow_scalar(const Tensor& x, double p) {
  return unary(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

// ---------------------------------------------------------------- unary

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
inline double softplus_scalar(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}
inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor softplus(const Tensor& x) {
  return unary(
      x, softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor log_softplus(const Tensor& x) {
  // below -36, log1p(e^v) == e^v to double precision, so ln(softplus) == v
  return unary(
      x,
      [](double v) { return v < -36.0 ? v : std::log(softplus_scalar(v)); },
      [](double v, double) { return v < -36.0 ? 1.0 : sigmoid_scalar(v) / softplus_scalar(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor floor_at(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return v > floor ? v : floor; },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor lgamma(const Tensor& x) {
  return unary(
      x, [](double v) { return special::lgamma(v); },
      [](double v, double) { return special::digamma(v); });
}

Tensor digamma(const Tensor& x) {
  return unary(
      x, [](double v) { return special::digamma(v); },
      [](double v, double) { return special::trigamma(v); });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, {s}, {x.node_ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    const double g = self.grad[0];
    for (double& v : gp) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.len; ++l) {
      const double* src = &xv[(o * sp.len + l) * sp.inner];
      double* dst = &out[o * sp.inner];
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, [sp](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t l = 0; l < sp.len; ++l) {
        double* dst = &gp[(o * sp.len + l) * sp.inner];
        const double* src = &self.grad[o * sp.inner];
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.shape()[ax]));
}

// ---------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), x.values(), {x.node_ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
  return permute(x, perm);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * x.shape()[i + 1];
  // src index for each output flat index
  const std::size_t n = x.size();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t s = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src)[flat] = s;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      s += in_stride[perm[ax]];
      if (idx[ax] < out_shape[ax]) break;
      s -= in_stride[perm[ax]] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<double> out(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, [src](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[(*src)[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& t : parts) {
    Shape s = t.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != parts[0].shape()[i]) {
        throw DimensionError("concat: " + shape_str(s) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += s[ax];
    parents.push_back(t.node_ptr());
  }
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& t : parts) {
    const std::size_t chunk = t.shape()[ax] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(t.values().data() + o * chunk, chunk,
                  out.data() + o * sp.len * sp.inner + offset * sp.inner);
    }
    offset += t.shape()[ax];
  }
  return make_result(std::move(out_shape), std::move(out), std::move(parents),
                     [sp, ax](Node& self) {
                       std::size_t off = 0;
                       for (auto& pp : self.parents) {
                         Node& p = *pp;
                         const std::size_t len = p.shape[ax];
                         if (p.requires_grad) {
                           auto& gp = p.grad_buffer();
                           const std::size_t chunk = len * sp.inner;
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             const double* g = self.grad.data() + o * sp.len * sp.inner + off * sp.inner;
                             double* d = gp.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
                           }
                         }
                         off += len;
                       }
                     });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (start + length > x.shape()[ax] || length == 0) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis extent " +
                         std::to_string(x.shape()[ax]));
  }
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.values().data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                     [sp, start, length](Node& self) {
                       Node& p = *self.parents[0];
                       auto& gp = p.grad_buffer();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         const double* g = self.grad.data() + o * length * sp.inner;
                         double* d = gp.data() + (o * sp.len + start) * sp.inner;
                         for (std::size_t i = 0; i < length * sp.inner; ++i) d[i] += g[i];
                       }
                     });
}

// ---------------------------------------------------------------- linalg / nn

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || b.rank() > a.rank()) {
    throw DimensionError("matmul: incompatible ranks " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), p = a.dim(-1), p2 = b.dim(-2), n = b.dim(-1);
  bool ok = (p == p2);
  const std::size_t off = a.rank() - b.rank();
  for (std::size_t i = 0; ok && i + 2 < b.rank(); ++i) ok = (b.shape()[i] == a.shape()[off + i]);
  if (!ok) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t a_batches = a.size() / (m * p);
  const std::size_t b_batches = b.size() / (p * n);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(a_batches * m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  if (b_batches == 1) {
    gemm_nn(av, bv, out.data(), a_batches * m, p, n);
  } else {
    for (std::size_t t = 0; t < a_batches; ++t) {
      gemm_nn(av + t * m * p, bv + (t % b_batches) * p * n, out.data() + t * m * n, m, p, n);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [m, p, n, a_batches, b_batches](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const double* g = self.grad.data();
                       if (pa.requires_grad) {
                         double* ga = pa.grad_buffer().data();
                         if (b_batches == 1) {
                           gemm_nt(g, pb.value.data(), ga, a_batches * m, p, n);
                         } else {
                           for (std::size_t t = 0; t < a_batches; ++t) {
                             gemm_nt(g + t * m * n, pb.value.data() + (t % b_batches) * p * n,
                                     ga + t * m * p, m, p, n);
                           }
                         }
                       }
                       if (pb.requires_grad) {
                         double* gb = pb.grad_buffer().data();
                         if (b_batches == 1) {
                           gemm_tn(pa.value.data(), g, gb, a_batches * m, p, n);
                         } else {
                           for (std::size_t t = 0; t < a_batches; ++t) {
                             gemm_tn(pa.value.data() + t * m * p, g + t * m * n,
                                     gb + (t % b_batches) * p * n, m, p, n);
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(xv[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [sp](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          dot += g[base + l * sp.inner] * y[base + l * sp.inner];
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          gp[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t len = x.dim(-1);
  const std::size_t rows = x.size() / len;
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &xv[r * len];
    double mx = *std::max_element(src, src + len);
    double z = 0.0;
    for (std::size_t l = 0; l < len; ++l) z += std::exp(src[l] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t l = 0; l < len; ++l) out[r * len + l] = src[l] - lz;
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [rows, len](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t l = 0; l < len; ++l) gs += self.grad[r * len + l];
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t k = r * len + l;
        gp[k] += self.grad[k] - std::exp(self.value[k]) * gs;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.dim(-1);
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  const auto& xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &xv[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (src[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain[j] + bias[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows, d, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[r * d + j] * pg.value[j];
              s1 += gh;
              s2 += gh * (*xhat)[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[r * d + j] * pg.value[j];
              gx[r * d + j] +=
                  (*inv_std)[r] * (gh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<double> out(rows->size() * d);
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const int id = (*rows)[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(table.values().data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  return make_result({rows->size(), d}, std::move(out), {table.node_ptr()}, [rows, d](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < rows->size(); ++i) {
      double* dst = gp.data() + static_cast<std::size_t>((*rows)[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double total = 0.0;
  const auto& xv = logits.values();
  for (std::size_t r = 0; r < n; ++r) {
    const int y = (*lab)[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InputError("label " + std::to_string(y) + " outside " + std::to_string(c) + " classes");
    }
    const double* src = &xv[r * c];
    const double mx = *std::max_element(src, src + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(src[j] - mx);
      (*probs)[r * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
    total -= src[y] - mx - std::log(z);
  }
  return make_result({1}, {total / static_cast<double>(n)}, {logits.node_ptr()},
                     [n, c, probs, lab](Node& self) {
                       Node& p = *self.parents[0];
                       auto& gp = p.grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           double d = (*probs)[r * c + j];
                           if (static_cast<int>(j) == (*lab)[r]) d -= 1.0;
                           gp[r * c + j] += g * d;
                         }
                       }
                     });
}

bool all_finite(const Tensor& x) {
  return std::all_of(x.values().begin(), x.values().end(),
                     [](double v) { return std::isfinite(v); });
}

void check_finite(const Tensor& x, const std::string& what) {
  if (!all_finite(x)) throw NumericalError("non-finite values in " + what);
}

}  // namespace babn
