#include "sdfn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdfn/errors.hpp"

namespace sdfn {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw InvariantError("operation on an unbound Var");
  return *a.tape();
}

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw InvariantError("operands recorded on different tapes");
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

// C[n x m] (+)= A[n x k] · B[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n x m] (+)= A[n x k] · B[m x k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * m + j] += s;
    }
  }
}

// C[n x m] (+)= A[k x n]ᵀ · B[k x m]
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * n;
    const double* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

enum class Broadcast { kNone, kLeft, kRight };

// kRight: b is repeated over the leading axis of a; kLeft: the converse.
struct BroadcastPlan {
  Broadcast mode;
  Shape out;
  std::size_t outer;
  std::size_t inner;
};

bool tail_matches(const Shape& big, const Shape& small) {
  if (small.size() + 1 == big.size()) return std::equal(small.begin(), small.end(), big.begin() + 1);
  if (small.size() == big.size() && !small.empty() && small[0] == 1) {
    return std::equal(small.begin() + 1, small.end(), big.begin() + 1);
  }
  return false;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {Broadcast::kNone, a, 1, numel(a)};
  if (!a.empty() && tail_matches(a, b)) return {Broadcast::kRight, a, a[0], numel(b)};
  if (!b.empty() && tail_matches(b, a)) return {Broadcast::kLeft, b, b[0], numel(a)};
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not broadcast");
}

// Sums a full-size gradient over the leading axis into a broadcast operand.
void reduce_into(Tensor& dst, const Tensor& g, std::size_t outer, std::size_t inner, double sign = 1.0) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) dst[i] += sign * g[o * inner + i];
  }
}

struct AxisLayout {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
  Shape reduced;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  }
  AxisLayout l{1, s[axis], 1, {}};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) l.reduced.push_back(s[i]);
  }
  return l;
}

template <typename F>
Var unary(Var a, const char* op, F&& f, Tape::Backward backward) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = f(v);
  return tape_of(a).record(std::move(out), {a}, std::move(backward), op);
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " do not conform");
  }
  Tensor out(Shape{n, m});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) gemm_nt(g.data().data(), t.value(ib).data().data(), ga->data().data(), n, m, k);
    if (Tensor* gb = t.grad_slot(ib)) gemm_tn(t.value(ia).data().data(), g.data().data(), gb->data().data(), n, k, m);
  }, "matmul");
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " do not conform");
  }
  Tensor out(Shape{n, m});
  gemm_nt(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) gemm_nn(g.data().data(), t.value(ib).data().data(), ga->data().data(), n, m, k);
    if (Tensor* gb = t.grad_slot(ib)) gemm_tn(g.data().data(), t.value(ia).data().data(), gb->data().data(), n, m, k);
  }, "matmul_nt");
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out(Shape{m, n});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*ga)[i * m + j] += g[j * n + i];
    }
  }, "transpose");
}

Var linear(Var x, Var weight, Var bias) {
  same_tape(x, weight);
  require_rank(weight, 2, "linear");
  const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || xv.rank() > 2 || xv.cols() != in_dim) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.valid()) {
    same_tape(x, bias);
    if (bias.shape() != Shape{out_dim}) {
      throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                       shape_str(weight.shape()));
    }
  }
  const std::size_t n = xv.rows();
  Tensor out(xv.rank() == 2 ? Shape{n, out_dim} : Shape{out_dim});
  if (bias.valid()) {
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < n; ++i) std::copy(bv.data().begin(), bv.data().end(), out.row(i).begin());
  }
  gemm_nt(xv.data().data(), weight.value().data().data(), out.data().data(), n, in_dim, out_dim);
  const std::size_t ix = x.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t ib = has_bias ? bias.id() : 0;
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return tape_of(x).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(ix))
      gemm_nn(g.data().data(), t.value(iw).data().data(), gx->data().data(), n, out_dim, in_dim);
    if (Tensor* gw = t.grad_slot(iw))
      gemm_tn(g.data().data(), t.value(ix).data().data(), gw->data().data(), n, out_dim, in_dim);
    if (has_bias) {
      if (Tensor* gb = t.grad_slot(ib)) reduce_into(*gb, g, n, out_dim);
    }
  }, "linear");
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(Var a, Var b, BinaryKind kind, const char* op) {
  same_tape(a, b);
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(plan.out);
  const std::size_t total = out.size();
  const std::size_t inner = plan.inner;
  auto a_at = [&](std::size_t i) { return plan.mode == Broadcast::kLeft ? av[i % inner] : av[i]; };
  auto b_at = [&](std::size_t i) { return plan.mode == Broadcast::kRight ? bv[i % inner] : bv[i]; };
  for (std::size_t i = 0; i < total; ++i) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = a_at(i) + b_at(i); break;
      case BinaryKind::kSub: out[i] = a_at(i) - b_at(i); break;
      case BinaryKind::kMul: out[i] = a_at(i) * b_at(i); break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    auto accumulate = [&](Tensor* dst, bool broadcast, const Tensor& other, bool other_broadcast, double sign) {
      if (!dst) return;
      for (std::size_t i = 0; i < total; ++i) {
        double gi = g[i] * sign;
        if (kind == BinaryKind::kMul) gi *= other_broadcast ? other[i % inner] : other[i];
        (*dst)[broadcast ? i % inner : i] += gi;
      }
    };
    accumulate(t.grad_slot(ia), plan.mode == Broadcast::kLeft, bv, plan.mode == Broadcast::kRight, 1.0);
    accumulate(t.grad_slot(ib), plan.mode == Broadcast::kRight, av, plan.mode == Broadcast::kLeft,
               kind == BinaryKind::kSub ? -1.0 : 1.0);
  }, op);
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Var scale(Var a, double factor) {
  const std::size_t ia = a.id();
  return unary(a, "scale", [factor](double v) { return v * factor; }, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
  });
}

Var mul_scalar(Var a, Var s) {
  same_tape(a, s);
  if (s.value().size() != 1) throw ShapeError("mul_scalar: factor has shape " + shape_str(s.shape()));
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.data()) v *= sv;
  const std::size_t ia = a.id(), is = s.id();
  return tape_of(a).record(std::move(out), {a, s}, [=](Tape& t, const Tensor& g) {
    const double sv = t.value(is)[0];
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += sv * g[i];
    if (Tensor* gs = t.grad_slot(is)) {
      const Tensor& av = t.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += av[i] * g[i];
      (*gs)[0] += acc;
    }
  }, "mul_scalar");
}

Var weighted_sum(std::span<const Var> xs, Var weights) {
  if (xs.empty()) throw ShapeError("weighted_sum: no operands");
  if (weights.value().size() != xs.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " operands but weights " +
                     shape_str(weights.shape()));
  }
  const Shape& shape = xs[0].shape();
  std::vector<Var> parents(xs.begin(), xs.end());
  parents.push_back(weights);
  Tensor out(shape);
  const Tensor& w = weights.value();
  for (std::size_t j = 0; j < xs.size(); ++j) {
    same_tape(xs[j], weights);
    if (xs[j].shape() != shape) {
      throw ShapeError("weighted_sum: operand " + shape_str(xs[j].shape()) + " vs " + shape_str(shape));
    }
    const Tensor& x = xs[j].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[j] * x[i];
  }
  std::vector<std::size_t> ids;
  for (const Var& x : xs) ids.push_back(x.id());
  const std::size_t iw = weights.id();
  return tape_of(weights).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    const Tensor& w = t.value(iw);
    Tensor* gw = t.grad_slot(iw);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (Tensor* gx = t.grad_slot(ids[j]))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += w[j] * g[i];
      if (gw) {
        const Tensor& x = t.value(ids[j]);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += x[i] * g[i];
        (*gw)[j] += acc;
      }
    }
  }, "weighted_sum");
}

Var relu(Var a) {
  std::uint64_t mask_hash = 1469598103934665603ULL;
  for (double v : a.value().data()) mask_hash = (mask_hash ^ (v > 0.0 ? 1u : 0u)) * 1099511628211ULL;
  tape_of(a).note_branch(mask_hash);
  const std::size_t ia = a.id();
  return unary(a, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) (*ga)[i] += g[i];
    }
  });
}

Var sigmoid(Var a) {
  const std::size_t ia = a.id();
  Tensor y = a.value();
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  Tensor yc = y;
  return tape_of(a).record(std::move(y), {a}, [ia, yc = std::move(yc)](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * yc[i] * (1.0 - yc[i]);
  }, "sigmoid");
}

Var tanh(Var a) {
  const std::size_t ia = a.id();
  Tensor y = a.value();
  for (auto& v : y.data()) v = std::tanh(v);
  Tensor yc = y;
  return tape_of(a).record(std::move(y), {a}, [ia, yc = std::move(yc)](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - yc[i] * yc[i]);
  }, "tanh");
}

Var exp(Var a) {
  const std::size_t ia = a.id();
  Tensor y = a.value();
  for (auto& v : y.data()) v = std::exp(v);
  Tensor yc = y;
  return tape_of(a).record(std::move(y), {a}, [ia, yc = std::move(yc)](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * yc[i];
  }, "exp");
}

Var log(Var a) {
  const std::size_t ia = a.id();
  return unary(a, "log", [](double v) { return std::log(v); }, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / x[i];
    }
  });
}

Var square(Var a) {
  const std::size_t ia = a.id();
  return unary(a, "square", [](double v) { return v * v; }, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * x[i] * g[i];
    }
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  const std::size_t ia = a.id();
  return tape_of(a).record(Tensor::scalar(s), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (auto& v : ga->data()) v += g[0];
  }, "sum");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_axis(Var a, std::size_t axis) {
  const AxisLayout l = axis_layout(a.shape(), axis, "sum_axis");
  const Tensor& x = a.value();
  Tensor out(l.reduced);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t k = 0; k < l.n; ++k)
      for (std::size_t i = 0; i < l.inner; ++i) out[o * l.inner + i] += x[(o * l.n + k) * l.inner + i];
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t k = 0; k < l.n; ++k)
          for (std::size_t i = 0; i < l.inner; ++i) (*ga)[(o * l.n + k) * l.inner + i] += g[o * l.inner + i];
  }, "sum_axis");
}

Var mean_axis(Var a, std::size_t axis) {
  const std::size_t n = axis_layout(a.shape(), axis, "mean_axis").n;
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

Var max_axis(Var a, std::size_t axis) {
  const AxisLayout l = axis_layout(a.shape(), axis, "max_axis");
  const Tensor& x = a.value();
  Tensor out(l.reduced);
  std::vector<std::size_t> winner(out.size());
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < l.n; ++k) {
        if (x[(o * l.n + k) * l.inner + i] > x[(o * l.n + best) * l.inner + i]) best = k;
      }
      winner[o * l.inner + i] = (o * l.n + best) * l.inner + i;
      out[o * l.inner + i] = x[winner[o * l.inner + i]];
      h = (h ^ best) * 1099511628211ULL;
    }
  }
  tape_of(a).note_branch(h);
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, winner = std::move(winner)](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t j = 0; j < winner.size(); ++j) (*ga)[winner[j]] += g[j];
  }, "max_axis");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  std::size_t rows = 0;
  bool any_matrix = false;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const std::size_t r = p.value().rank();
    if (r > 2) throw ShapeError("concat_cols: operand " + shape_str(p.shape()) + " has rank > 2");
    if (r == 2) {
      if (any_matrix && p.shape()[0] != rows) {
        throw ShapeError("concat_cols: row mismatch " + std::to_string(rows) + " vs " + shape_str(p.shape()));
      }
      rows = p.shape()[0];
      any_matrix = true;
    }
  }
  if (!any_matrix) rows = 1;
  std::vector<std::size_t> widths, offsets;
  std::vector<bool> broadcast;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    widths.push_back(v.rank() == 0 ? 1 : v.cols());
    offsets.push_back(total);
    broadcast.push_back(v.rank() < 2);
    total += widths.back();
  }
  Tensor out(any_matrix ? Shape{rows, total} : Shape{total});
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const Tensor& v = parts[j].value();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t src_row = broadcast[j] ? 0 : r;
      for (std::size_t c = 0; c < widths[j]; ++c) out[r * total + offsets[j] + c] = v[src_row * widths[j] + c];
    }
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return tape_of(parts[0]).record(std::move(out), parts, [=](Tape& t, const Tensor& g) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      Tensor* gp = t.grad_slot(ids[j]);
      if (!gp) continue;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t dst_row = broadcast[j] ? 0 : r;
        for (std::size_t c = 0; c < widths[j]; ++c) (*gp)[dst_row * widths[j] + c] += g[r * total + offsets[j] + c];
      }
    }
  }, "concat_cols");
}

Var slice_cols(Var a, std::size_t start, std::size_t length) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.rank() > 2 || length == 0 || start + length > x.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.rank() == 2 ? Shape{rows, length} : Shape{length});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < length; ++c) out[r * length + c] = x[r * cols + start + c];
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < length; ++c) (*ga)[r * cols + start + c] += g[r * length + c];
  }, "slice_cols");
}

Var row(Var a, std::size_t index) {
  require_rank(a, 2, "row");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (index >= rows) throw ShapeError("row: index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
  const auto src = a.value().row(index);
  Tensor out(Shape{cols}, std::vector<double>(src.begin(), src.end()));
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t c = 0; c < cols; ++c) (*ga)[index * cols + c] += g[c];
  }, "row");
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no operands");
  const std::size_t width = rows[0].value().size();
  std::vector<double> data;
  data.reserve(rows.size() * width);
  std::vector<std::size_t> ids;
  for (const Var& r : rows) {
    same_tape(rows[0], r);
    if (r.value().rank() > 1 || r.value().size() != width) {
      throw ShapeError("stack_rows: operand " + shape_str(r.shape()) + " vs width " + std::to_string(width));
    }
    data.insert(data.end(), r.value().data().begin(), r.value().data().end());
    ids.push_back(r.id());
  }
  Tensor out(Shape{rows.size(), width}, std::move(data));
  return tape_of(rows[0]).record(std::move(out), rows, [=](Tape& t, const Tensor& g) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (Tensor* gr = t.grad_slot(ids[j]))
        for (std::size_t c = 0; c < width; ++c) (*gr)[c] += g[j * width + c];
    }
  }, "stack_rows");
}

Var element(Var a, std::size_t index) {
  if (index >= a.value().size()) {
    throw ShapeError("element: index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
  }
  const std::size_t ia = a.id();
  return tape_of(a).record(Tensor::scalar(a.value()[index]), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia)) (*ga)[index] += g[0];
  }, "element");
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  }, "reshape");
}

Var softmax(Var a, std::size_t axis) {
  const AxisLayout l = axis_layout(a.shape(), axis, "softmax");
  Tensor y = a.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      auto at = [&](std::size_t k) -> double& { return y[(o * l.n + k) * l.inner + i]; };
      double mx = at(0);
      for (std::size_t k = 1; k < l.n; ++k) mx = std::max(mx, at(k));
      double z = 0.0;
      for (std::size_t k = 0; k < l.n; ++k) z += (at(k) = std::exp(at(k) - mx));
      for (std::size_t k = 0; k < l.n; ++k) at(k) /= z;
    }
  }
  Tensor yc = y;
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(y), {a}, [ia, l, yc = std::move(yc)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < l.n; ++k) {
          const std::size_t idx = (o * l.n + k) * l.inner + i;
          dot += g[idx] * yc[idx];
        }
        for (std::size_t k = 0; k < l.n; ++k) {
          const std::size_t idx = (o * l.n + k) * l.inner + i;
          (*ga)[idx] += yc[idx] * (g[idx] - dot);
        }
      }
    }
  }, "softmax");
}

Var log_softmax(Var a, std::size_t axis) {
  const AxisLayout l = axis_layout(a.shape(), axis, "log_softmax");
  Tensor y = a.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      auto at = [&](std::size_t k) -> double& { return y[(o * l.n + k) * l.inner + i]; };
      double mx = at(0);
      for (std::size_t k = 1; k < l.n; ++k) mx = std::max(mx, at(k));
      double z = 0.0;
      for (std::size_t k = 0; k < l.n; ++k) z += std::exp(at(k) - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < l.n; ++k) at(k) -= lse;
    }
  }
  Tensor yc = y;
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(y), {a}, [ia, l, yc = std::move(yc)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        double gsum = 0.0;
        for (std::size_t k = 0; k < l.n; ++k) gsum += g[(o * l.n + k) * l.inner + i];
        for (std::size_t k = 0; k < l.n; ++k) {
          const std::size_t idx = (o * l.n + k) * l.inner + i;
          (*ga)[idx] += g[idx] - std::exp(yc[idx]) * gsum;
        }
      }
    }
  }, "log_softmax");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = xv.cols();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                     " do not match input " + shape_str(xv.shape()));
  }
  if (!(eps >= 0.0)) throw ConfigError("layer_norm: eps must be non-negative");
  const std::size_t rows = xv.size() / d;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat[r * d + c] = (xr[c] - mu) * inv_std[r];
  }
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape_of(x).record(std::move(out), {x, gain, bias},
                           [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
    const Tensor& gv = t.value(ig);
    if (Tensor* gg = t.grad_slot(ig))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gg)[c] += g[r * d + c] * xhat[r * d + c];
    if (Tensor* gb = t.grad_slot(ib)) reduce_into(*gb, g, rows, d);
    if (Tensor* gx = t.grad_slot(ix)) {
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = g[r * d + c] * gv[c];
          m1 += dxh;
          m2 += dxh * xhat[r * d + c];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = g[r * d + c] * gv[c];
          (*gx)[r * d + c] += inv_std[r] * (dxh - m1 - xhat[r * d + c] * m2);
        }
      }
    }
  }, "layer_norm");
}

Var l2_normalize_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("l2_normalize_rows: scalar input");
  const std::size_t d = x.cols(), rows = x.size() / d;
  Tensor y(x.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += x[r * d + c] * x[r * d + c];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw NumericsError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = x[r * d + c] / norms[r];
  }
  Tensor yc = y;
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(y), {a},
                           [=, yc = std::move(yc), norms = std::move(norms)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += yc[r * d + c] * g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += (g[r * d + c] - yc[r * d + c] * dot) / norms[r];
    }
  }, "l2_normalize_rows");
}

Var frobenius_norm(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  const double n = std::sqrt(s);
  const std::size_t ia = a.id();
  return tape_of(a).record(Tensor::scalar(n), {a}, [=](Tape& t, const Tensor& g) {
    if (n == 0.0) return;
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& x = t.value(ia);
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[0] * x[i] / n;
    }
  }, "frobenius_norm");
}

}  // namespace sdfn

namespace sdfn {

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  if (table.value().rank() != 2) throw ShapeError("gather_rows: table " + shape_str(table.shape()) + " is not a matrix");
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  const std::size_t rows = table.shape()[0], cols = table.shape()[1];
  Tensor out(Shape{indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       shape_str(table.shape()));
    }
    const auto src = table.value().row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t it = table.id();
  return table.tape()->record(std::move(out), {table}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gt = t.grad_slot(it))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) (*gt)[idx[i] * cols + c] += g[i * cols + c];
  }, "gather_rows");
}

}  // namespace sdfn
