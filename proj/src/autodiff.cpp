#include "rpalab/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace rpalab {

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, Tensor{}, true, nullptr, &p});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool rg = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw std::logic_error("mixing Vars from different tapes");
    rg = rg || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, rg, rg ? std::move(fn) : nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_slot(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.numel() != n.value.numel() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const auto& n = nodes_.at(v.id());
  if (n.grad.shape() == n.value.shape() && n.grad.numel() == n.value.numel()) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("backward on a Var from another tape");
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  const auto& ln = nodes_[loss.id()];
  if (ln.value.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(ln.value.shape()));
  }
  if (!ln.requires_grad) throw std::invalid_argument("backward on a value that does not depend on any parameter");
  backward_done_ = true;
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.numel() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param) {
      auto& pg = n.param->grad;
      for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
    }
  }
}

Var detach(const Var& x) { return x.tape()->constant(x.value()); }

// ---------------------------------------------------------------- broadcasting

namespace {

struct Broadcast {
  Shape out;
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  std::array<std::size_t, 4> sa{0, 0, 0, 0};
  std::array<std::size_t, 4> sb{0, 0, 0, 0};
};

std::array<std::size_t, 4> padded(const Shape& s) {
  std::array<std::size_t, 4> p{1, 1, 1, 1};
  for (std::size_t i = 0; i < s.size(); ++i) p[4 - s.size() + i] = s[i];
  return p;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  const auto pa = padded(a), pb = padded(b);
  const std::size_t rank = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.dims[i] = std::max(pa[i], pb[i]);
  }
  std::size_t ra = 1, rb = 1;
  for (std::size_t i = 4; i-- > 0;) {
    p.sa[i] = pa[i] == 1 ? 0 : ra;
    p.sb[i] = pb[i] == 1 ? 0 : rb;
    ra *= pa[i];
    rb *= pb[i];
  }
  for (std::size_t i = 4 - rank; i < 4; ++i) p.out.push_back(p.dims[i]);
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::size_t io = 0;
  for (std::size_t i0 = 0; i0 < p.dims[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.dims[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.dims[2]; ++i2) {
        std::size_t ba = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        std::size_t bb = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (std::size_t i3 = 0; i3 < p.dims[3]; ++i3, ++io) f(io, ba + i3 * p.sa[3], bb + i3 * p.sb[3]);
      }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

double apply(BinOp op, double x, double y) {
  switch (op) {
    case BinOp::kAdd: return x + y;
    case BinOp::kSub: return x - y;
    case BinOp::kMul: return x * y;
    case BinOp::kDiv: return x / y;
  }
  return 0.0;
}

Var binary(const Var& a, const Var& b, BinOp op) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = apply(op, av[i], bv[i]);
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib, op](Tape& tp, const Tensor& g) {
      const Tensor& x = tp.value(ia);
      const Tensor& y = tp.value(ib);
      if (tp.requires_grad(ia)) {
        Tensor& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          switch (op) {
            case BinOp::kAdd:
            case BinOp::kSub: ga[i] += g[i]; break;
            case BinOp::kMul: ga[i] += g[i] * y[i]; break;
            case BinOp::kDiv: ga[i] += g[i] / y[i]; break;
          }
        }
      }
      if (tp.requires_grad(ib)) {
        Tensor& gb = tp.grad_slot(ib);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          switch (op) {
            case BinOp::kAdd: gb[i] += g[i]; break;
            case BinOp::kSub: gb[i] -= g[i]; break;
            case BinOp::kMul: gb[i] += g[i] * x[i]; break;
            case BinOp::kDiv: gb[i] -= g[i] * x[i] / (y[i] * y[i]); break;
          }
        }
      }
    });
  }
  const Broadcast plan = plan_broadcast(av.shape(), bv.shape());
  Tensor out(plan.out);
  for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { out[io] = apply(op, av[ia], bv[ib]); });
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, op, plan](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(ib);
    const bool na = tp.requires_grad(ia), nb = tp.requires_grad(ib);
    Tensor* ga = na ? &tp.grad_slot(ia) : nullptr;
    Tensor* gb = nb ? &tp.grad_slot(ib) : nullptr;
    for_each_broadcast(plan, [&](std::size_t io, std::size_t ja, std::size_t jb) {
      const double gi = g[io];
      switch (op) {
        case BinOp::kAdd:
          if (ga) (*ga)[ja] += gi;
          if (gb) (*gb)[jb] += gi;
          break;
        case BinOp::kSub:
          if (ga) (*ga)[ja] += gi;
          if (gb) (*gb)[jb] -= gi;
          break;
        case BinOp::kMul:
          if (ga) (*ga)[ja] += gi * y[jb];
          if (gb) (*gb)[jb] += gi * x[ja];
          break;
        case BinOp::kDiv:
          if (ga) (*ga)[ja] += gi / y[jb];
          if (gb) (*gb)[jb] -= gi * x[ja] / (y[jb] * y[jb]);
          break;
      }
    });
  });
}

// f: forward value; df: derivative given (input, output)
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  const std::size_t io = a.tape()->size();
  return a.tape()->record(std::move(out), {a}, [ia, io, df](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(io);
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::kAdd); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::kSub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::kMul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::kDiv); }

Var add(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
Var mul(const Var& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}
Var neg(const Var& a) { return mul(a, -1.0); }

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}
Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
Var gelu(const Var& a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        return cdf + x * pdf;
      });
}
Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}
Var clamp_min(const Var& a, double lo) {
  return unary(a, [lo](double x) { return std::max(x, lo); }, [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}
Var nan_to_num(const Var& a, double nan, double posinf, double neginf) {
  return unary(
      a,
      [=](double x) {
        if (std::isnan(x)) return nan;
        if (x == std::numeric_limits<double>::infinity()) return posinf;
        if (x == -std::numeric_limits<double>::infinity()) return neginf;
        return x;
      },
      [](double x, double) { return std::isfinite(x) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor::scalar(rpalab::sum(a.value())), {a}, [ia](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(ia);
    for (auto& v : ga.data()) v += g[0];
  });
}

Var mean(const Var& a) { return mul(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var sum_axis(const Var& a, std::size_t axis, bool keepdim) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw std::invalid_argument("sum_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os = s;
  if (keepdim) os[axis] = 1;
  else os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os, 0.0);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * n + k) * inner + i];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, outer, inner, n](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += g[o * inner + i];
  });
}

Var mean_axis(const Var& a, std::size_t axis, bool keepdim) {
  return mul(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(a.shape().at(axis)));
}

Var stddev(const Var& a) {
  const std::size_t n = a.value().numel();
  if (n < 2) throw std::invalid_argument("stddev needs at least two entries");
  Var centered = sub(a, mean(a));
  return sqrt(mul(sum(square(centered)), 1.0 / static_cast<double>(n - 1)));
}

// ---------------------------------------------------------------- linear algebra

namespace {

// c[n,m] += a[n,k] * b[k,m], all row-major; four rows of c share each pass over b
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* c0 = c + i * m;
    double* c1 = c0 + m;
    double* c2 = c1 + m;
    double* c3 = c2 + m;
    const double* a0 = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double v0 = a0[kk], v1 = a0[k + kk], v2 = a0[2 * k + kk], v3 = a0[3 * k + kk];
      const double* br = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bj = br[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < n; ++i) {
    double* cr = c + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      const double* br = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
}

std::vector<double> transposed(const double* a, std::size_t n, std::size_t k) {
  std::vector<double> t(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) t[j * n + i] = a[i * k + j];
  return t;
}

// c[n,m] += op(a) * op(b) where op transposes when requested
void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m, bool ta,
              bool tb) {
  std::vector<double> at, bt;
  if (ta) at = transposed(a, k, n), a = at.data();
  if (tb) bt = transposed(b, m, k), b = bt.data();
  gemm_nn(a, b, c, n, k, m);
}

}  // namespace

Var matmul(const Var& a, const Var& w) {
  if (a.value().rank() < 1 || w.value().rank() != 2 || a.shape().back() != w.dim(0))
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(w.shape()));
  const std::size_t k = w.dim(0), m = w.dim(1), rows = a.value().numel() / k;
  Shape os = a.shape();
  os.back() = m;
  Tensor out(os, 0.0);
  gemm_nn(a.value().data().data(), w.value().data().data(), out.data().data(), rows, k, m);
  const std::size_t ia = a.id(), iw = w.id();
  return a.tape()->record(std::move(out), {a, w}, [ia, iw, k, m, rows](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    const Tensor& W = tp.value(iw);
    if (tp.requires_grad(ia))
      gemm_acc(g.data().data(), W.data().data(), tp.grad_slot(ia).data().data(), rows, m, k, false, true);
    if (tp.requires_grad(iw))
      gemm_acc(x.data().data(), g.data().data(), tp.grad_slot(iw).data().data(), k, rows, m, true, false);
  });
}

Var bmm(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[sa.size() - 1] != sb[sb.size() - 2] ||
      !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    throw std::invalid_argument("bmm shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t n = sa[sa.size() - 2], k = sa.back(), m = sb.back();
  const std::size_t batch = a.value().numel() / (n * k);
  Shape os = sa;
  os.back() = m;
  Tensor out(os, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_acc(a.value().data().data() + bi * n * k, b.value().data().data() + bi * k * m,
             out.data().data() + bi * n * m, n, k, m, false, false);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, n, k, m, batch](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor& gx = tp.grad_slot(ia);
      // gx[n,k] += g[n,m] * y[k,m]^T
      for (std::size_t bi = 0; bi < batch; ++bi)
        gemm_acc(g.data().data() + bi * n * m, y.data().data() + bi * k * m, gx.data().data() + bi * n * k, n, m, k,
                 false, true);
    }
    if (tp.requires_grad(ib)) {
      Tensor& gy = tp.grad_slot(ib);
      // gy[k,m] += x[n,k]^T * g[n,m]
      for (std::size_t bi = 0; bi < batch; ++bi)
        gemm_acc(x.data().data() + bi * n * k, g.data().data() + bi * n * m, gy.data().data() + bi * k * m, k, n, m,
                 true, false);
    }
  });
}

Var transpose_last2(const Var& a) {
  const std::size_t r = a.shape().size();
  if (r < 2) throw std::invalid_argument("transpose_last2 needs rank >= 2");
  std::vector<std::size_t> perm(r);
  for (std::size_t i = 0; i < r; ++i) perm[i] = i;
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(a, perm);
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw std::invalid_argument("permute: rank mismatch");
  const std::size_t r = s.size();
  std::array<std::size_t, 4> in_stride{0, 0, 0, 0};
  {
    std::size_t st = 1;
    for (std::size_t i = r; i-- > 0;) {
      in_stride[i] = st;
      st *= s[i];
    }
  }
  Shape os(r);
  std::array<std::size_t, 4> dims{1, 1, 1, 1}, src_stride{0, 0, 0, 0};
  for (std::size_t i = 0; i < r; ++i) {
    os[i] = s.at(perm[i]);
    dims[4 - r + i] = os[i];
    src_stride[4 - r + i] = in_stride[perm[i]];
  }
  // gather map: out flat index -> input flat index
  std::vector<std::size_t> src(a.value().numel());
  std::size_t io = 0;
  for (std::size_t i0 = 0; i0 < dims[0]; ++i0)
    for (std::size_t i1 = 0; i1 < dims[1]; ++i1)
      for (std::size_t i2 = 0; i2 < dims[2]; ++i2)
        for (std::size_t i3 = 0; i3 < dims[3]; ++i3, ++io)
          src[io] = i0 * src_stride[0] + i1 * src_stride[1] + i2 * src_stride[2] + i3 * src_stride[3];
  Tensor out(os);
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = av[src[i]];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, src = std::move(src)](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var slice_last(const Var& a, std::size_t idx) {
  const Shape& s = a.shape();
  if (s.empty() || idx >= s.back()) throw std::invalid_argument("slice_last: index out of range");
  const std::size_t n = s.back(), rows = a.value().numel() / n;
  Shape os = s;
  os.back() = 1;
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) out[r] = a.value()[r * n + idx];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, n, idx, rows](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r) ga[r * n + idx] += g[r];
  });
}

namespace {

// Gradient of one operand of a two-operand contraction. Letters that occur only in
// this operand were summed in the forward pass, so the gradient is broadcast along them.
Tensor contract_grad(const Tensor& g, const Tensor& other, const Tensor& self, const std::string& out_idx,
                     const std::string& other_idx, const std::string& self_idx) {
  std::string kept, lonely;
  Shape lonely_shape;
  for (std::size_t i = 0; i < self_idx.size(); ++i) {
    const char c = self_idx[i];
    const bool elsewhere = out_idx.find(c) != std::string::npos || other_idx.find(c) != std::string::npos;
    if (elsewhere) {
      kept.push_back(c);
    } else if (lonely.find(c) == std::string::npos) {
      lonely.push_back(c);
      lonely_shape.push_back(self.dim(i));
    }
  }
  Tensor reduced = rpalab::contract(g, other, out_idx + "," + other_idx + "->" + (lonely.empty() ? self_idx : kept));
  if (lonely.empty()) return reduced;
  return rpalab::contract(reduced, Tensor(lonely_shape, 1.0), kept + "," + lonely + "->" + self_idx);
}

}  // namespace

Var contract(const Var& a, const Var& b, std::string_view spec) {
  Tensor out = rpalab::contract(a.value(), b.value(), spec);
  const std::string s(spec);
  const auto comma = s.find(','), arrow = s.find("->");
  const std::string ai = s.substr(0, comma), bi = s.substr(comma + 1, arrow - comma - 1), oi = s.substr(arrow + 2);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, ai, bi, oi](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) {
      Tensor d = contract_grad(g, tp.value(ib), tp.value(ia), oi, bi, ai);
      Tensor& ga = tp.grad_slot(ia);
      for (std::size_t i = 0; i < d.numel(); ++i) ga[i] += d[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor d = contract_grad(g, tp.value(ia), tp.value(ib), oi, ai, bi);
      Tensor& gb = tp.grad_slot(ib);
      for (std::size_t i = 0; i < d.numel(); ++i) gb[i] += d[i];
    }
  });
}

// ---------------------------------------------------------------- fused ops

Var softmax_last(const Var& a, bool causal) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) throw std::invalid_argument("softmax over an empty axis");
  const std::size_t n = s.back();
  if (causal && (s.size() < 2 || s[s.size() - 2] != n)) {
    throw std::invalid_argument("causal softmax needs a trailing square [T,T] block, got " + shape_str(s));
  }
  const std::size_t rows = a.value().numel() / n;
  Tensor out(s, 0.0);
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = causal ? (r % n) + 1 : n;
    const double* in = x.data().data() + r * n;
    double* o = out.data().data() + r * n;
    double m = in[0];
    for (std::size_t j = 1; j < visible; ++j) m = std::max(m, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    for (std::size_t j = 0; j < visible; ++j) o[j] /= z;
  }
  const std::size_t ia = a.id(), io = a.tape()->size();
  return a.tape()->record(std::move(out), {a}, [ia, io, n, rows](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(io);
    Tensor& ga = tp.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data().data() + r * n;
      const double* gr = g.data().data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.value().numel() != d || beta.value().numel() != d) throw std::invalid_argument("layer_norm: affine size");
  const std::size_t rows = x.value().numel() / d;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += in[j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += (in[j] - m) * (in[j] - m);
    v /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - m) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Tensor& g) {
        const Tensor& gv = tp.value(ig);
        if (tp.requires_grad(ig)) {
          Tensor& gg = tp.grad_slot(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (tp.requires_grad(ib)) {
          Tensor& gb = tp.grad_slot(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (tp.requires_grad(ix)) {
          Tensor& gx = tp.grad_slot(ix);
          const double dd = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = g[r * d + j] * gv[j];
              s1 += dy;
              s2 += dy * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dy - s1 / dd - xhat[r * d + j] * s2 / dd);
            }
          }
        }
      });
}

Var embedding(const Var& table, const std::vector<std::size_t>& ids, Shape lead_shape) {
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (shape_numel(lead_shape) != ids.size()) throw std::invalid_argument("embedding: ids do not match lead shape");
  for (auto id : ids)
    if (id >= v) throw std::out_of_range("embedding: token id " + std::to_string(id) + " >= vocab " + std::to_string(v));
  Shape os = lead_shape;
  os.push_back(d);
  Tensor out(os);
  const Tensor& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data().data() + ids[i] * d, d, out.data().data() + i * d);
  const std::size_t it = table.id();
  return table.tape()->record(std::move(out), {table}, [it, ids, d](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad_slot(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += g[i * d + j];
  });
}

Var sq_dist(const Var& z, const Var& centers) {
  const std::size_t d = z.shape().back();
  if (centers.value().rank() != 2 || centers.dim(1) != d) throw std::invalid_argument("sq_dist: dimension mismatch");
  const std::size_t n = z.value().numel() / d, r = centers.dim(0);
  Shape os = z.shape();
  os.back() = r;
  Tensor out(os, 0.0);
  const Tensor& zv = z.value();
  const Tensor& cv = centers.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = zv[i * d + j] - cv[k * d + j];
        acc += diff * diff;
      }
      out[i * r + k] = acc;
    }
  const std::size_t iz = z.id(), ic = centers.id();
  return z.tape()->record(std::move(out), {z, centers}, [iz, ic, n, r, d](Tape& tp, const Tensor& g) {
    const Tensor& zv = tp.value(iz);
    const Tensor& cv = tp.value(ic);
    const bool nz = tp.requires_grad(iz), nc = tp.requires_grad(ic);
    Tensor* gz = nz ? &tp.grad_slot(iz) : nullptr;
    Tensor* gc = nc ? &tp.grad_slot(ic) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < r; ++k) {
        const double gi = 2.0 * g[i * r + k];
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = zv[i * d + j] - cv[k * d + j];
          if (gz) (*gz)[i * d + j] += gi * diff;
          if (gc) (*gc)[k * d + j] -= gi * diff;
        }
      }
  });
}

Var cross_entropy_sum(const Var& logits, const std::vector<std::size_t>& targets, double smoothing) {
  if (logits.value().rank() != 2) throw std::invalid_argument("cross_entropy_sum expects [N,V] logits");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) throw std::invalid_argument("cross_entropy_sum: target count mismatch");
  for (auto t : targets)
    if (t >= v) throw std::out_of_range("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(v));
  Tensor probs = softmax_rows(logits.value());
  const double loss = rpalab::cross_entropy_sum(logits.value(), targets, smoothing);
  const double off = smoothing / static_cast<double>(v);
  const std::size_t il = logits.id();
  return logits.tape()->record(
      Tensor::scalar(loss), {logits}, [il, targets, probs = std::move(probs), smoothing, off, v, n](Tape& tp, const Tensor& g) {
        Tensor& gl = tp.grad_slot(il);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < v; ++j) {
            const double q = (j == targets[i] ? 1.0 - smoothing : 0.0) + off;
            gl[i * v + j] += g[0] * (probs[i * v + j] - q);
          }
      });
}

}  // namespace rpalab
