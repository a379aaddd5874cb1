#pragma once

// Reverse-mode differentiation over a dynamically built computation record.
// Each node holds a value tensor, its parents, and a backward rule that
// scatters the node's adjoint into the parents' adjoints. Adjoints accumulate
// by summation, so a value consumed twice receives both contributions.
//
// A record belongs to one training step on one thread; parameters enter a
// record as leaf nodes (see Tape in model.hpp) and constants carry no rule.

#include <frontsr/kernels.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

namespace frontsr::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation during backward
  bool requires_grad = false;
  bool grad_ready = false;
  const void* tag = nullptr;  // identity of the parameter this leaf wraps
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;
};

inline Tensor& grad_buf(Node* n) {
  if (!n->grad_ready) {
    n->grad = Tensor(n->value.shape());
    n->grad_ready = true;
  }
  return n->grad;
}

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return n_; }
  // On a temporary Var the node dies with the full expression, so the rvalue
  // overload returns a copy instead of a soon-dangling reference.
  const Tensor& value() const& { return n_->value; }
  Tensor value() && { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }

  const Tensor& grad() const {
    check_runtime(n_->grad_ready, "no adjoint recorded for this node (run backward first)");
    return n_->grad;
  }

  double scalar() const {
    check(n_->value.size() == 1, "scalar() on non-scalar value");
    return n_->value[0];
  }

 private:
  std::shared_ptr<Node> n_;
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

inline Var leaf(Tensor t, const void* tag = nullptr) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->tag = tag;
  return Var(std::move(n));
}

// Same values, no history: gradients stop here.
inline Var detach(const Var& v) { return constant(v.value()); }

namespace detail {

inline std::shared_ptr<Node> make_node(Tensor value, std::initializer_list<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  return n;
}

}  // namespace detail

// ---- backward pass ----------------------------------------------------

inline void backward(const Var& root) {
  check(root.defined() && root.value().size() == 1, "backward: root must be a scalar");
  // Iterative post-order DFS over parents; reversed order propagates each
  // node before any of its parents. Also asserts acyclicity.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  state[root.node().get()] = 1;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (!p->requires_grad) continue;
      int& st = state[p];
      check_runtime(st != 1, "backward: cycle in computation record");
      if (st == 0) {
        st = 1;
        stack.push_back({p, 0});
      }
      continue;
    }
    state[n] = 2;
    order.push_back(n);
    stack.pop_back();
  }
  grad_buf(root.node().get())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

// ---- elementwise ops ----------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  auto n = detail::make_node(std::move(v), {a, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb]() {
      const Tensor& g = self->grad;
      if (pa->requires_grad) {
        Tensor& da = grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (pb->requires_grad) {
        Tensor& db = grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var sub(const Var& a, const Var& b) {
  check(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  auto n = detail::make_node(std::move(v), {a, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb]() {
      const Tensor& g = self->grad;
      if (pa->requires_grad) {
        Tensor& da = grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (pb->requires_grad) {
        Tensor& db = grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var mul(const Var& a, const Var& b) {
  check(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  auto n = detail::make_node(std::move(v), {a, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb]() {
      const Tensor& g = self->grad;
      if (pa->requires_grad) {
        Tensor& da = grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        Tensor& db = grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * pa->value[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var scale(const Var& a, double c) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.value()[i];
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, c]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < self->grad.size(); ++i) da[i] += c * self->grad[i];
    };
  }
  return Var(std::move(n));
}

inline Var div(const Var& a, const Var& b) {
  check(a.value().same_shape(b.value()), "div: shape mismatch");
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] / b.value()[i];
  auto n = detail::make_node(std::move(v), {a, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb]() {
      const Tensor& g = self->grad;
      if (pa->requires_grad) {
        Tensor& da = grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / pb->value[i];
      }
      if (pb->requires_grad) {
        Tensor& db = grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i)
          db[i] -= g[i] * self->value[i] / pb->value[i];
      }
    };
  }
  return Var(std::move(n));
}

// Add a compile-time constant elementwise; gradient passes through.
inline Var shift(const Var& a, double c) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c;
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self->grad[i];
    };
  }
  return Var(std::move(n));
}

inline Var reshape(const Var& a, Shape shape) {
  check(shape_size(shape) == a.value().size(), "reshape: element count mismatch");
  Tensor v(shape);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i];
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self->grad[i];
    };
  }
  return Var(std::move(n));
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i];
  auto n = detail::make_node(Tensor::from({1}, {acc}), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      const double g = self->grad[0];
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    };
  }
  return Var(std::move(n));
}

inline Var abs(const Var& a) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a.value()[i]);
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) {
        const double x = pa->value[i];
        da[i] += self->grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
      }
    };
  }
  return Var(std::move(n));
}

inline Var leaky_relu(const Var& a, double slope) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.value()[i];
    v[i] = x > 0.0 ? x : slope * x;
  }
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, slope]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i)
        da[i] += self->grad[i] * (pa->value[i] > 0.0 ? 1.0 : slope);
    };
  }
  return Var(std::move(n));
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

inline Var clamp01(const Var& a) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(a.value()[i], 0.0, 1.0);
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) {
        const double x = pa->value[i];
        if (x >= 0.0 && x <= 1.0) da[i] += self->grad[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var sigmoid(const Var& a) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) {
        const double s = self->value[i];
        da[i] += self->grad[i] * s * (1.0 - s);
      }
    };
  }
  return Var(std::move(n));
}

// log of the input clamped to [lo, hi]; gradient is zero where clamping binds.
inline Var log_clamped(const Var& a, double lo, double hi) {
  Tensor v(a.value().shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(std::clamp(a.value()[i], lo, hi));
  auto n = detail::make_node(std::move(v), {a});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, lo, hi]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < da.size(); ++i) {
        const double x = pa->value[i];
        if (x >= lo && x <= hi) da[i] += self->grad[i] / x;
      }
    };
  }
  return Var(std::move(n));
}

// ---- structured ops ------------------------------------------------------

inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  auto n = detail::make_node(ops::conv2d(x.value(), w.value(), b.value(), stride, pad), {x, w, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* pw = w.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, px, pw, pb, stride, pad]() {
      const Tensor& g = self->grad;
      if (px->requires_grad) {
        Tensor dx = ops::conv2d_backward_input(g, pw->value, stride, pad, px->value.shape());
        Tensor& da = grad_buf(px);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dx[i];
      }
      if (pw->requires_grad) {
        Tensor dw = ops::conv2d_backward_weight(g, px->value, stride, pad, pw->value.shape());
        Tensor& da = grad_buf(pw);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dw[i];
      }
      if (pb->requires_grad) {
        Tensor db = ops::conv2d_backward_bias(g);
        Tensor& da = grad_buf(pb);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var pixel_shuffle(const Var& x, int r) {
  auto n = detail::make_node(ops::pixel_shuffle(x.value(), r), {x});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    n->backprop = [self, px, r]() {
      Tensor dg = ops::pixel_unshuffle(self->grad, r);
      Tensor& da = grad_buf(px);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dg[i];
    };
  }
  return Var(std::move(n));
}

inline Var concat_channels(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_channels: no inputs");
  const std::size_t H = parts[0].value().dim(1), W = parts[0].value().dim(2);
  std::size_t C = 0;
  for (const Var& p : parts) {
    check(p.value().rank() == 3 && p.value().dim(1) == H && p.value().dim(2) == W,
          "concat_channels: spatial shape mismatch");
    C += p.value().dim(0);
  }
  Tensor v({C, H, W});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t n = p.value().size();
    for (std::size_t i = 0; i < n; ++i) v[off + i] = p.value()[i];
    off += n;
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  for (const Var& p : parts) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  if (n->requires_grad) {
    Node* self = n.get();
    std::vector<Node*> raw;
    for (const Var& p : parts) raw.push_back(p.node().get());
    n->backprop = [self, raw]() {
      std::size_t off2 = 0;
      for (Node* p : raw) {
        const std::size_t cnt = p->value.size();
        if (p->requires_grad) {
          Tensor& da = grad_buf(p);
          for (std::size_t i = 0; i < cnt; ++i) da[i] += self->grad[off2 + i];
        }
        off2 += cnt;
      }
    };
  }
  return Var(std::move(n));
}

// Multiply by a fixed binary mask (1,H,W), broadcast over channels.
inline Var masked(const Var& x, const Tensor& mask) {
  auto n = detail::make_node(ops::masked_product(x.value(), mask), {x});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    const Tensor m = mask;
    n->backprop = [self, px, m]() {
      Tensor& da = grad_buf(px);
      const std::size_t C = px->value.dim(0), HW = m.size();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) da[c * HW + i] += self->grad[c * HW + i] * m[i];
    };
  }
  return Var(std::move(n));
}

// Extract the K x K patch of channel c whose top-left corner is (h0, w0).
inline Var crop_patch(const Var& x, std::size_t c, std::size_t h0, std::size_t w0, std::size_t K) {
  check(x.value().rank() == 3, "crop_patch: input must be (C,H,W)");
  const std::size_t H = x.value().dim(1), W = x.value().dim(2);
  check(c < x.value().dim(0) && h0 + K <= H && w0 + K <= W, "crop_patch: window out of range");
  Tensor v({K, K});
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) v.at2(i, j) = x.value().at(c, h0 + i, w0 + j);
  auto n = detail::make_node(std::move(v), {x});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    n->backprop = [self, px, c, h0, w0, K, H, W]() {
      Tensor& da = grad_buf(px);
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j)
          da[(c * H + h0 + i) * W + w0 + j] += self->grad.at2(i, j);
    };
  }
  return Var(std::move(n));
}

// (C,H,W) -> (C): mean over the spatial grid.
inline Var spatial_mean(const Var& x) {
  check(x.value().rank() == 3, "spatial_mean: input must be (C,H,W)");
  const std::size_t C = x.value().dim(0), HW = x.value().dim(1) * x.value().dim(2);
  Tensor v({C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += x.value()[c * HW + i];
    v[c] = acc / double(HW);
  }
  auto n = detail::make_node(std::move(v), {x});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    n->backprop = [self, px, C, HW]() {
      Tensor& da = grad_buf(px);
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self->grad[c] / double(HW);
        for (std::size_t i = 0; i < HW; ++i) da[c * HW + i] += g;
      }
    };
  }
  return Var(std::move(n));
}

// y = W x + b with W (m,n), x (n), b (m).
inline Var linear(const Var& x, const Var& W, const Var& b) {
  check(x.value().rank() == 1 && W.value().rank() == 2 && b.value().rank() == 1,
        "linear: expected x (n), W (m,n), b (m)");
  const std::size_t m = W.value().dim(0), nn = W.value().dim(1);
  check(x.value().dim(0) == nn && b.value().dim(0) == m, "linear: dimension mismatch");
  Tensor v({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = b.value()[i];
    const double* row = W.value().data() + i * nn;
    for (std::size_t j = 0; j < nn; ++j) acc += row[j] * x.value()[j];
    v[i] = acc;
  }
  auto n = detail::make_node(std::move(v), {x, W, b});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* pw = W.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, px, pw, pb, m, nn]() {
      const Tensor& g = self->grad;
      if (px->requires_grad) {
        Tensor& dx = grad_buf(px);
        for (std::size_t i = 0; i < m; ++i) {
          const double* row = pw->value.data() + i * nn;
          for (std::size_t j = 0; j < nn; ++j) dx[j] += row[j] * g[i];
        }
      }
      if (pw->requires_grad) {
        Tensor& dw = grad_buf(pw);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) dw[i * nn + j] += g[i] * px->value[j];
      }
      if (pb->requires_grad) {
        Tensor& db = grad_buf(pb);
        for (std::size_t i = 0; i < m; ++i) db[i] += g[i];
      }
    };
  }
  return Var(std::move(n));
}

inline Var matmul(const Var& A, const Var& B) {
  check(A.value().rank() == 2 && B.value().rank() == 2, "matmul: 2-D operands required");
  const std::size_t m = A.value().dim(0), k = A.value().dim(1), nn = B.value().dim(1);
  check(B.value().dim(0) == k, "matmul: inner dimension mismatch");
  Tensor v({m, nn});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A.value().at2(i, p);
      for (std::size_t j = 0; j < nn; ++j) v.at2(i, j) += a * B.value().at2(p, j);
    }
  auto n = detail::make_node(std::move(v), {A, B});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = A.node().get();
    Node* pb = B.node().get();
    n->backprop = [self, pa, pb, m, k, nn]() {
      const Tensor& g = self->grad;
      if (pa->requires_grad) {  // dA = g B^T
        Tensor& da = grad_buf(pa);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nn; ++j) acc += g.at2(i, j) * pb->value.at2(p, j);
            da.at2(i, p) += acc;
          }
      }
      if (pb->requires_grad) {  // dB = A^T g
        Tensor& db = grad_buf(pb);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < nn; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += pa->value.at2(i, p) * g.at2(i, j);
            db.at2(p, j) += acc;
          }
      }
    };
  }
  return Var(std::move(n));
}

inline Var transpose(const Var& A) {
  check(A.value().rank() == 2, "transpose: 2-D operand required");
  const std::size_t m = A.value().dim(0), nn = A.value().dim(1);
  Tensor v({nn, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < nn; ++j) v.at2(j, i) = A.value().at2(i, j);
  auto n = detail::make_node(std::move(v), {A});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pa = A.node().get();
    n->backprop = [self, pa, m, nn]() {
      Tensor& da = grad_buf(pa);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nn; ++j) da.at2(i, j) += self->grad.at2(j, i);
    };
  }
  return Var(std::move(n));
}

// Scale every column of F (d,k) to unit L2 norm. Columns with norm <= eps are
// scaled by 1/eps instead (linear regime) to stay differentiable.
inline Var column_normalize(const Var& F, double eps) {
  check(F.value().rank() == 2, "column_normalize: 2-D operand required");
  const std::size_t d = F.value().dim(0), k = F.value().dim(1);
  std::vector<double> norms(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double x = F.value().at2(i, j);
      acc += x * x;
    }
    norms[j] = std::sqrt(acc);
  }
  Tensor v({d, k});
  for (std::size_t j = 0; j < k; ++j) {
    const double s = 1.0 / std::max(norms[j], eps);
    for (std::size_t i = 0; i < d; ++i) v.at2(i, j) = F.value().at2(i, j) * s;
  }
  auto n = detail::make_node(std::move(v), {F});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pf = F.node().get();
    n->backprop = [self, pf, d, k, eps, norms]() {
      Tensor& da = grad_buf(pf);
      for (std::size_t j = 0; j < k; ++j) {
        if (norms[j] > eps) {
          // y = v/||v||: dv = (g - y (y.g)) / ||v||
          double dot = 0.0;
          for (std::size_t i = 0; i < d; ++i) dot += self->value.at2(i, j) * self->grad.at2(i, j);
          for (std::size_t i = 0; i < d; ++i)
            da.at2(i, j) += (self->grad.at2(i, j) - self->value.at2(i, j) * dot) / norms[j];
        } else {
          for (std::size_t i = 0; i < d; ++i) da.at2(i, j) += self->grad.at2(i, j) / eps;
        }
      }
    };
  }
  return Var(std::move(n));
}

// Encoder feature map (C,H,W) -> feature block (H*W, C): row p is the channel
// vector at spatial position p.
inline Var feature_block(const Var& x) {
  check(x.value().rank() == 3, "feature_block: input must be (C,H,W)");
  const std::size_t C = x.value().dim(0), HW = x.value().dim(1) * x.value().dim(2);
  Tensor v({HW, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < HW; ++p) v.at2(p, c) = x.value()[c * HW + p];
  auto n = detail::make_node(std::move(v), {x});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    n->backprop = [self, px, C, HW]() {
      Tensor& da = grad_buf(px);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < HW; ++p) da[c * HW + p] += self->grad.at2(p, c);
    };
  }
  return Var(std::move(n));
}

// Cross-entropy of softmax(logits) against a hard label; fused, numerically
// stable (max-shifted).
inline Var softmax_ce(const Var& logits, std::size_t label) {
  check(logits.value().rank() == 1, "softmax_ce: logits must be a vector");
  const std::size_t k = logits.value().dim(0);
  check(label < k, "softmax_ce: label out of range");
  double mx = logits.value()[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits.value()[i]);
  std::vector<double> p(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(logits.value()[i] - mx);
    z += p[i];
  }
  for (std::size_t i = 0; i < k; ++i) p[i] /= z;
  const double loss = -std::log(std::max(p[label], 1e-300));
  auto n = detail::make_node(Tensor::from({1}, {loss}), {logits});
  if (n->requires_grad) {
    Node* self = n.get();
    Node* pl = logits.node().get();
    n->backprop = [self, pl, p, label, k]() {
      Tensor& da = grad_buf(pl);
      const double g = self->grad[0];
      for (std::size_t i = 0; i < k; ++i) da[i] += g * (p[i] - (i == label ? 1.0 : 0.0));
    };
  }
  return Var(std::move(n));
}

// Mean of N same-shape vars (used for feature fusion). N = 1 returns values
// scaled by exactly 1.0, i.e. bit-identical to the input.
inline Var mean_of(const std::vector<Var>& xs) {
  check(!xs.empty(), "mean_of: no inputs");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, 1.0 / double(xs.size()));
}

}  // namespace frontsr::ad
