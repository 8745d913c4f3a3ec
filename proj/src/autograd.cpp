#include "rrhf/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rrhf/errors.hpp"
#include "rrhf/kernels/kernels.hpp"
#include "rrhf/rowops.hpp"

namespace rrhf {

// --- row primitives -----------------------------------------------------------

namespace rowops {

void layer_norm(const double* x, const double* gamma, const double* beta, double* out, std::size_t n,
                double eps, double* xhat, double* rstd) {
  double mu = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += x[i];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= static_cast<double>(n);
  const double r = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = (x[i] - mu) * r;
    if (xhat) xhat[i] = h;
    out[i] = h * gamma[i] + beta[i];
  }
  if (rstd) *rstd = r;
}

void softmax(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    z += x[i];
  }
  const double inv = 1.0 / z;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void log_softmax(const double* x, double* out, std::size_t n, std::size_t stride) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i * stride] - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i * stride] = x[i * stride] - lse;
}

}  // namespace rowops

// --- Var / Tape ---------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw StateError("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->needs_grad(*this); }

Tape::Tape(bool record_gradients) : recording_(record_gradients) { nodes_.reserve(256); }

Var Tape::push(Node node) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = recording_;
  if (recording_) n.param = &p;
  return push(std::move(n));
}

Var Tape::param(const Parameter& p) {
  Node n;
  n.external = &p.value;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw ContractError("op mixes Vars from different tapes");
      if (nodes_[v.id()].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  const Tensor& val = n.external ? *n.external : n.value;
  if (n.grad.shape() != val.shape()) n.grad = Tensor(val.shape());
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (!recording_) throw StateError("backward() on a tape created without gradient recording");
  if (consumed_) throw StateError("tape already consumed by backward()");
  if (scalar.tape_ != this) throw ContractError("backward() on a Var from another tape");
  const Node& root = nodes_[scalar.id()];
  if (value(scalar).numel() != 1) {
    throw ContractError("backward() needs a scalar, got shape " + shape_str(value(scalar).shape()));
  }
  consumed_ = true;
  if (!root.requires_grad) return;
  grad_buffer(scalar).fill(1.0);
  const auto& k = kernels::active();
  for (std::size_t i = scalar.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.numel() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      k.add(n.grad.numel(), n.grad.ptr(), p.grad.ptr());
    }
  }
  for (auto& n : nodes_) n.backward = nullptr;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!consumed_) throw StateError("grad() before backward()");
  if (n.grad.numel() == 0) {
    static const Tensor empty;
    return empty;
  }
  return n.grad;
}

// --- ops ------------------------------------------------------------------------

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
Var unary(Var a, Tensor out, F&& dfdx) {
  return a.tape().record(std::move(out), {a}, [a, dfdx](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad_buffer(a);
    const Tensor& x = t.value(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * dfdx(x[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(Shape{m, n});
  kernels::active().gemm_nn(m, n, k, A.ptr(), k, B.ptr(), n, C.ptr(), n);
  return a.tape().record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    if (t.needs_grad(a)) kt.gemm_nt(m, k, n, g.ptr(), n, t.value(b).ptr(), n, t.grad_buffer(a).ptr(), k);
    if (t.needs_grad(b)) kt.gemm_tn(k, n, m, t.value(a).ptr(), k, g.ptr(), n, t.grad_buffer(b).ptr(), n);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()) + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C(Shape{m, n});
  kernels::active().gemm_nt(m, n, k, A.ptr(), k, B.ptr(), k, C.ptr(), n);
  return a.tape().record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    if (t.needs_grad(a)) kt.gemm_nn(m, k, n, g.ptr(), n, t.value(b).ptr(), k, t.grad_buffer(a).ptr(), k);
    if (t.needs_grad(b)) kt.gemm_tn(n, k, m, g.ptr(), n, t.value(a).ptr(), k, t.grad_buffer(b).ptr(), k);
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  kernels::active().add(out.numel(), b.value().ptr(), out.ptr());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    if (t.needs_grad(a)) kt.add(g.numel(), g.ptr(), t.grad_buffer(a).ptr());
    if (t.needs_grad(b)) kt.add(g.numel(), g.ptr(), t.grad_buffer(b).ptr());
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) kernels::active().add(g.numel(), g.ptr(), t.grad_buffer(a).ptr());
    if (t.needs_grad(b)) kernels::active().axpy(g.numel(), -1.0, g.ptr(), t.grad_buffer(b).ptr());
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      const Tensor& B = t.value(b);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      const Tensor& A = t.value(a);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= c;
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) kernels::active().axpy(g.numel(), c, g.ptr(), t.grad_buffer(a).ptr());
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_rank2(A, "add_bias");
  if (b.rank() != 1 || b.dim(0) != A.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " + shape_str(A.shape()));
  }
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out = A;
  for (std::size_t i = 0; i < m; ++i) kernels::active().add(n, b.ptr(), out.ptr() + i * n);
  return a.tape().record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    if (t.needs_grad(a)) kt.add(g.numel(), g.ptr(), t.grad_buffer(a).ptr());
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t i = 0; i < m; ++i) kt.add(n, g.ptr() + i * n, gb.ptr());
    }
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  return unary(a, std::move(out), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = std::exp(x);
  return unary(a, std::move(out), [](double x) { return std::exp(x); });
}

Var square(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = x * x;
  return unary(a, std::move(out), [](double x) { return 2.0 * x; });
}

Var softplus(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  return unary(a, std::move(out), [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    if (!t.needs_grad(a)) return;
    Tensor& ga = t.grad_buffer(a);
    for (auto& x : ga.data()) x += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  require_rank2(X, "layer_norm");
  const std::size_t m = X.rows(), n = X.cols();
  if (gamma.value().shape() != Shape{n} || beta.value().shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
  }
  Tensor out(Shape{m, n});
  auto xhat = std::make_shared<Tensor>(Shape{m, n});
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    rowops::layer_norm(X.ptr() + i * n, gamma.value().ptr(), beta.value().ptr(), out.ptr() + i * n, n, eps,
                       xhat->ptr() + i * n, rstd->data() + i);
  }
  return x.tape().record(std::move(out), {x, gamma, beta}, [=](Tape& t, const Tensor& g) {
    const Tensor& G = t.value(gamma);
    if (t.needs_grad(gamma) || t.needs_grad(beta)) {
      Tensor* gg = t.needs_grad(gamma) ? &t.grad_buffer(gamma) : nullptr;
      Tensor* gb = t.needs_grad(beta) ? &t.grad_buffer(beta) : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (gg) (*gg)[j] += g[i * n + j] * (*xhat)[i * n + j];
          if (gb) (*gb)[j] += g[i * n + j];
        }
      }
    }
    if (!t.needs_grad(x)) return;
    Tensor& gx = t.grad_buffer(x);
    std::vector<double> dxhat(n);
    for (std::size_t i = 0; i < m; ++i) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dxhat[j] = g[i * n + j] * G[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * (*xhat)[i * n + j];
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      const double r = (*rstd)[i];
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += r * (dxhat[j] - mean_d - (*xhat)[i * n + j] * mean_dx);
      }
    }
  });
}

Var embedding(Var table, std::span<const TokenId> ids) {
  const Tensor& W = table.value();
  require_rank2(W, "embedding");
  const std::size_t rows = W.rows(), d = W.cols();
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows));
    }
    std::copy_n(W.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [table, saved = std::move(saved), d](Tape& t, const Tensor& g) {
    if (!t.needs_grad(table)) return;
    Tensor& gw = t.grad_buffer(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      kernels::active().add(d, g.ptr() + i * d, gw.ptr() + static_cast<std::size_t>(saved[i]) * d);
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank2(A, "slice_rows");
  if (begin > end || end > A.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(A.shape()));
  }
  const std::size_t n = A.cols();
  Tensor out(Shape{end - begin, n},
             std::vector<double>(A.ptr() + begin * n, A.ptr() + end * n));
  return a.tape().record(std::move(out), {a}, [a, begin, n](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) kernels::active().add(g.numel(), g.ptr(), t.grad_buffer(a).ptr() + begin * n);
  });
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw ContractError("stack of zero values");
  std::vector<double> vals;
  vals.reserve(scalars.size());
  for (const Var& v : scalars) vals.push_back(v.item());
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  Tape& tape = scalars.front().tape();
  return tape.record(Tensor::vector(std::move(vals)), scalars, [inputs](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (t.needs_grad(inputs[i])) t.grad_buffer(inputs[i])[0] += g[i];
    }
  });
}

Var element(Var a, std::size_t index) {
  if (index >= a.value().numel()) {
    throw IndexError("element " + std::to_string(index) + " of shape " + shape_str(a.shape()));
  }
  return a.tape().record(Tensor::scalar(a.value()[index]), {a}, [a, index](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad_buffer(a)[index] += g[0];
  });
}

Var causal_attention(Var qkv, std::size_t heads) {
  const Tensor& X = qkv.value();
  require_rank2(X, "causal_attention");
  const std::size_t T = X.rows(), w = X.cols();
  if (heads == 0 || w % (3 * heads) != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(w) + " not divisible into 3 x " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t d = w / 3, dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& kt = kernels::active();
  Tensor out(Shape{T, d});
  // probs[h][i][j], j <= i
  auto probs = std::make_shared<std::vector<double>>(heads * T * T, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* Q = X.ptr() + h * dh;
    const double* K = X.ptr() + d + h * dh;
    const double* V = X.ptr() + 2 * d + h * dh;
    for (std::size_t i = 0; i < T; ++i) {
      double* p = probs->data() + (h * T + i) * T;
      kt.gemm_nt(1, i + 1, dh, Q + i * w, w, K, w, p, T);
      for (std::size_t j = 0; j <= i; ++j) p[j] *= sc;
      rowops::softmax(p, i + 1);
      kt.gemm_nn(1, dh, i + 1, p, T, V, w, out.ptr() + i * d + h * dh, d);
    }
  }
  return qkv.tape().record(std::move(out), {qkv}, [=](Tape& t, const Tensor& g) {
    if (!t.needs_grad(qkv)) return;
    const Tensor& Xv = t.value(qkv);
    Tensor& gx = t.grad_buffer(qkv);
    const auto& k2 = kernels::active();
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* Q = Xv.ptr() + h * dh;
      const double* K = Xv.ptr() + d + h * dh;
      const double* V = Xv.ptr() + 2 * d + h * dh;
      double* dQ = gx.ptr() + h * dh;
      double* dK = gx.ptr() + d + h * dh;
      double* dV = gx.ptr() + 2 * d + h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        const double* p = probs->data() + (h * T + i) * T;
        const double* go = g.ptr() + i * d + h * dh;
        std::fill(dp.begin(), dp.begin() + static_cast<std::ptrdiff_t>(i + 1), 0.0);
        k2.gemm_nt(1, i + 1, dh, go, d, V, w, dp.data(), T);
        double inner = 0.0;
        for (std::size_t j = 0; j <= i; ++j) inner += p[j] * dp[j];
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = p[j] * (dp[j] - inner) * sc;
          k2.axpy(dh, ds, K + j * w, dQ + i * w);
          k2.axpy(dh, ds, Q + i * w, dK + j * w);
          k2.axpy(dh, p[j], go, dV + j * w);
        }
      }
    }
  });
}

Var log_softmax(Var x, int axis) {
  const Tensor& X = x.value();
  if (X.rank() != 1 && X.rank() != 2) throw ShapeError("log_softmax: rank must be 1 or 2, got " + shape_str(X.shape()));
  const int r = static_cast<int>(X.rank());
  const int ax = axis < 0 ? r + axis : axis;
  if (ax < 0 || ax >= r) throw IndexError("log_softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(X.shape()));
  // lanes: `count` independent vectors of length `len` with element stride `stride`
  std::size_t len, count, stride, lane_step;
  if (r == 1) {
    len = X.dim(0); count = 1; stride = 1; lane_step = 0;
  } else if (ax == 1) {
    len = X.cols(); count = X.rows(); stride = 1; lane_step = X.cols();
  } else {
    len = X.rows(); count = X.cols(); stride = X.cols(); lane_step = 1;
  }
  if (len == 0) throw ShapeError("log_softmax over an empty axis");
  Tensor out(X.shape());
  for (std::size_t c = 0; c < count; ++c) {
    rowops::log_softmax(X.ptr() + c * lane_step, out.ptr() + c * lane_step, len, stride);
  }
  auto saved = std::make_shared<Tensor>(out);
  return x.tape().record(std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    if (!t.needs_grad(x)) return;
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t base = c * lane_step;
      double gs = 0.0;
      for (std::size_t i = 0; i < len; ++i) gs += g[base + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t o = base + i * stride;
        gx[o] += g[o] - std::exp((*saved)[o]) * gs;
      }
    }
  });
}

Var gather_log_prob(Var logits, std::span<const TokenId> targets) {
  const Tensor& L = logits.value();
  require_rank2(L, "gather_log_prob");
  const std::size_t m = L.rows(), V = L.cols();
  if (targets.size() != m) {
    throw ShapeError("gather_log_prob: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  }
  auto lsm = std::make_shared<Tensor>(Shape{m, V});
  Tensor out(Shape{m});
  std::vector<TokenId> tg(targets.begin(), targets.end());
  for (std::size_t i = 0; i < m; ++i) {
    if (tg[i] < 0 || static_cast<std::size_t>(tg[i]) >= V) {
      throw IndexError("gather_log_prob: target id " + std::to_string(tg[i]) + " outside vocabulary of " +
                       std::to_string(V));
    }
    rowops::log_softmax(L.ptr() + i * V, lsm->ptr() + i * V, V);
    out[i] = (*lsm)[i * V + static_cast<std::size_t>(tg[i])];
  }
  return logits.tape().record(std::move(out), {logits}, [=, tg = std::move(tg)](Tape& t, const Tensor& g) {
    if (!t.needs_grad(logits)) return;
    Tensor& gl = t.grad_buffer(logits);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < V; ++j) gl[i * V + j] -= g[i] * std::exp((*lsm)[i * V + j]);
      gl[i * V + static_cast<std::size_t>(tg[i])] += g[i];
    }
  });
}

}  // namespace rrhf
