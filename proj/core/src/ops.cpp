#include "advlat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace advlat {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

double softplus_value(double x) {
  // log(1 + e^x) without overflow
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd f, Deriv df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  Tape* tape = &a.tape();
  const std::size_t ia = a.id();
  const std::size_t io = tape->size();  // id the recorded node will receive
  return tape->record(std::move(y), {a}, [tape, ia, io, df](const Tensor& g, GradSink& sink) {
    const Tensor& xv = tape->value(ia);
    const Tensor& yv = tape->value(io);
    Tensor& dx = sink.slot(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// plain kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul inner extents disagree: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c(Shape{m, n}, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

double angle_between(std::span<const double> u, std::span<const double> v) {
  double nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu == 0.0 || nv == 0.0) throw DomainError("angular distance undefined for a zero vector");
  double dm = 0.0, dp = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i] / nu, b = v[i] / nv;
    dm += (a - b) * (a - b);
    dp += (a + b) * (a + b);
  }
  return 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
}

// ---------------------------------------------------------------------------
// elementwise

Var elementwise(Elementwise kind, const Var& a, std::optional<Var> b, double factor) {
  switch (kind) {
    case Elementwise::relu:
      return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    case Elementwise::tanh:
      return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
    case Elementwise::sigmoid:
      return unary(a, logistic, [](double, double y) { return y * (1.0 - y); });
    case Elementwise::exp:
      return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case Elementwise::log:
      for (double v : a.value().data()) {
        if (!(v > 0.0)) throw DomainError("log requires strictly positive input, got " + std::to_string(v));
      }
      return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    case Elementwise::softplus:
      return unary(a, softplus_value, [](double x, double) { return logistic(x); });
    case Elementwise::sqrt:
      for (double v : a.value().data()) {
        if (v < 0.0) throw DomainError("sqrt requires nonnegative input");
      }
      return unary(a, [](double x) { return std::sqrt(x); },
                   [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
    case Elementwise::square:
      return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
    case Elementwise::neg:
      return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
    case Elementwise::scale:
      return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
    case Elementwise::div:
      break;
  }
  if (!b) throw std::invalid_argument("binary elementwise kind requires a second operand");
  const Tensor& x = a.value();
  const Tensor& y = b->value();
  const bool same = x.shape() == y.shape();
  if (!same && !x.is_scalar() && !y.is_scalar()) {
    throw DimensionError("elementwise shape mismatch: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  const bool a_bcast = !same && x.is_scalar();
  const bool b_bcast = !same && y.is_scalar();
  const Shape& out_shape = a_bcast ? y.shape() : x.shape();
  const std::size_t n = shape_numel(out_shape);
  Tensor z(out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[a_bcast ? 0 : i];
    const double v = y[b_bcast ? 0 : i];
    switch (kind) {
      case Elementwise::add: z[i] = u + v; break;
      case Elementwise::sub: z[i] = u - v; break;
      case Elementwise::mul: z[i] = u * v; break;
      default: z[i] = u / v; break;
    }
  }
  Tape* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b->id();
  return tape->record(std::move(z), {a, *b}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& xv = tape->value(ia);
    const Tensor& yv = tape->value(ib);
    const bool wa = sink.wants(ia), wb = sink.wants(ib);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const std::size_t ja = a_bcast ? 0 : i, jb = b_bcast ? 0 : i;
      double da = 0.0, db = 0.0;
      switch (kind) {
        case Elementwise::add: da = g[i]; db = g[i]; break;
        case Elementwise::sub: da = g[i]; db = -g[i]; break;
        case Elementwise::mul: da = g[i] * yv[jb]; db = g[i] * xv[ja]; break;
        default:
          da = g[i] / yv[jb];
          db = -g[i] * xv[ja] / (yv[jb] * yv[jb]);
          break;
      }
      if (wa) sink.slot(ia)[ja] += da;
      if (wb) sink.slot(ib)[jb] += db;
    }
  });
}

Var add(const Var& a, const Var& b) { return elementwise(Elementwise::add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise(Elementwise::sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise(Elementwise::mul, a, b); }
Var div(const Var& a, const Var& b) { return elementwise(Elementwise::div, a, b); }
Var scale(const Var& a, double factor) { return elementwise(Elementwise::scale, a, std::nullopt, factor); }
Var relu(const Var& a) { return elementwise(Elementwise::relu, a); }
Var tanh(const Var& a) { return elementwise(Elementwise::tanh, a); }
Var sigmoid(const Var& a) { return elementwise(Elementwise::sigmoid, a); }
Var exp(const Var& a) { return elementwise(Elementwise::exp, a); }
Var log(const Var& a) { return elementwise(Elementwise::log, a); }
Var softplus(const Var& a) { return elementwise(Elementwise::softplus, a); }
Var sqrt(const Var& a) { return elementwise(Elementwise::sqrt, a); }
Var square(const Var& a) { return elementwise(Elementwise::square, a); }
Var neg(const Var& a) { return elementwise(Elementwise::neg, a); }

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// structural

Var matmul(const Var& a, const Var& b) {
  Tensor c = matmul(a.value(), b.value());
  Tape* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record(std::move(c), {a, b}, [tape, ia, ib](const Tensor& g, GradSink& sink) {
    const Tensor& av = tape->value(ia);
    const Tensor& bv = tape->value(ib);
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    if (sink.wants(ia)) {
      // dA = G * B^T
      Tensor& da = sink.slot(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data().data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bv.data().data() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          da[i * k + p] += s;
        }
      }
    }
    if (sink.wants(ib)) {
      // dB = A^T * G, skipping zero entries of A
      Tensor& db = sink.slot(ib);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data().data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av[i * k + p];
          if (av_ip == 0.0) continue;
          double* drow = db.data().data() + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av_ip * grow[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  Tensor t = transpose(a.value());
  Tape* tape = &a.tape();
  const std::size_t ia = a.id();
  return tape->record(std::move(t), {a}, [ia](const Tensor& g, GradSink& sink) { sink.add(ia, transpose(g)); });
}

Var reshape(const Var& a, Shape shape) {
  Tensor r = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(r), {a}, [ia](const Tensor& g, GradSink& sink) { sink.add(ia, g); });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat axis must be 0 or 1");
  for (const auto& p : parts) require_rank2(p.value(), "concat");
  const std::size_t other = 1 - axis;
  const std::size_t fixed = parts[0].value().extent(other);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().extent(other) != fixed) {
      throw DimensionError("concat extent mismatch: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    total += p.value().extent(axis);
  }
  const Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  Tensor out(out_shape);
  const std::size_t cols = out_shape[1];
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Tensor& v = p.value();
    const std::size_t r = v.extent(0), c = v.extent(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        if (axis == 0) out[(offset + i) * cols + j] = v[i * c + j];
        else out[i * cols + offset + j] = v[i * c + j];
      }
    offset += v.extent(axis);
  }
  std::vector<std::size_t> ids;
  std::vector<Shape> shapes;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    shapes.push_back(p.shape());
  }
  return parts[0].tape().record(std::move(out), parts, [=](const Tensor& g, GradSink& sink) {
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (!sink.wants(ids[q])) continue;
      Tensor& d = sink.slot(ids[q]);
      const std::size_t r = shapes[q][0], c = shapes[q][1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          d[i * c + j] += axis == 0 ? g[(offsets[q] + i) * cols + j] : g[i * cols + offsets[q] + j];
        }
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  require_rank2(v, "slice_cols");
  const std::size_t r = v.extent(0), c = v.extent(1);
  if (begin >= end || end > c) throw DimensionError("slice_cols range out of bounds for " + shape_string(v.shape()));
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = v[i * c + begin + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) d[i * c + begin + j] += g[i * w + j];
  });
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& rows) {
  const Tensor& v = a.value();
  require_rank2(v, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows with no indices");
  const std::size_t n = v.extent(0), c = v.extent(1);
  Tensor out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw DimensionError("gather_rows index " + std::to_string(rows[i]) + " out of range " + std::to_string(n));
    std::copy_n(v.data().data() + rows[i] * c, c, out.data().data() + i * c);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d[rows[i] * c + j] += g[i * c + j];
  });
}

Var add_row_vector(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  require_rank2(x, "add_row_vector");
  const std::size_t r = x.extent(0), c = x.extent(1);
  if (b.numel() != c) throw DimensionError("add_row_vector: " + shape_string(x.shape()) + " + " + shape_string(b.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.value()[j];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](const Tensor& g, GradSink& sink) {
    if (sink.wants(ia)) sink.add(ia, g);
    if (sink.wants(ib)) {
      Tensor& d = sink.slot(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j];
    }
  });
}

Var add_col_vector(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  require_rank2(x, "add_col_vector");
  const std::size_t r = x.extent(0), c = x.extent(1);
  if (b.numel() != r) throw DimensionError("add_col_vector: " + shape_string(x.shape()) + " + " + shape_string(b.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](const Tensor& g, GradSink& sink) {
    if (sink.wants(ia)) sink.add(ia, g);
    if (sink.wants(ib)) {
      Tensor& d = sink.slot(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[i] += g[i * c + j];
    }
  });
}

Var scale_rows(const Var& a, const std::vector<double>& factors) {
  const Tensor& x = a.value();
  require_rank2(x, "scale_rows");
  const std::size_t r = x.extent(0), c = x.extent(1);
  if (factors.size() != r) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = factors[i] * x[i * c + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += factors[i] * g[i * c + j];
  });
}

// ---------------------------------------------------------------------------
// reductions

namespace {

struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisLayout layout_for(const Shape& shape, std::optional<std::size_t> axis) {
  AxisLayout l;
  if (!axis) {
    l.extent = shape_numel(shape);
    return l;
  }
  if (*axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(*axis) + " out of range for shape " + shape_string(shape));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < *axis) l.outer *= shape[i];
    else if (i > *axis) l.inner *= shape[i];
    if (i != *axis) l.reduced.push_back(shape[i]);
  }
  l.extent = shape[*axis];
  return l;
}

}  // namespace

MaxResult reduce_max(const Var& a, std::optional<std::size_t> axis) {
  const Tensor& x = a.value();
  const AxisLayout l = layout_for(x.shape(), axis);
  Tensor out(l.reduced);
  std::vector<std::size_t> arg(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      std::size_t best = o * l.extent * l.inner + in;
      for (std::size_t k = 1; k < l.extent; ++k) {
        const std::size_t idx = (o * l.extent + k) * l.inner + in;
        if (x[idx] > x[best]) best = idx;
      }
      out[o * l.inner + in] = x[best];
      arg[o * l.inner + in] = best;
    }
  const std::size_t ia = a.id();
  Var v = a.tape().record(std::move(out), {a}, [ia, arg](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < arg.size(); ++i) d[arg[i]] += g[i];
  });
  return MaxResult{v, arg};
}

Var reduce(Reduce kind, const Var& a, std::optional<std::size_t> axis) {
  if (kind == Reduce::max) return reduce_max(a, axis).value;
  const Tensor& x = a.value();
  const AxisLayout l = layout_for(x.shape(), axis);
  const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(l.extent) : 1.0;
  Tensor out(l.reduced, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t k = 0; k < l.extent; ++k)
      for (std::size_t in = 0; in < l.inner; ++in) out[o * l.inner + in] += x[(o * l.extent + k) * l.inner + in];
  for (auto& v : out.data()) v *= w;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, l, w](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t k = 0; k < l.extent; ++k)
        for (std::size_t in = 0; in < l.inner; ++in) d[(o * l.extent + k) * l.inner + in] += w * g[o * l.inner + in];
  });
}

Var sum(const Var& a) { return reduce(Reduce::sum, a); }
Var mean(const Var& a) { return reduce(Reduce::mean, a); }

Var softmax(const Var& logits, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("softmax temperature must be positive, got " + std::to_string(temperature));
  const Tensor& x = logits.value();
  const AxisLayout l = layout_for(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      auto at = [&](std::size_t k) { return (o * l.extent + k) * l.inner + in; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.extent; ++k) mx = std::max(mx, x[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        y[at(k)] = std::exp((x[at(k)] - mx) / temperature);
        z += y[at(k)];
      }
      for (std::size_t k = 0; k < l.extent; ++k) y[at(k)] /= z;
    }
  Tape* tape = &logits.tape();
  const std::size_t ia = logits.id();
  const std::size_t io = tape->size();
  return tape->record(std::move(y), {logits}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& yv = tape->value(io);
    Tensor& d = sink.slot(ia);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        auto at = [&](std::size_t k) { return (o * l.extent + k) * l.inner + in; };
        double dot = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) dot += g[at(k)] * yv[at(k)];
        for (std::size_t k = 0; k < l.extent; ++k) d[at(k)] += yv[at(k)] * (g[at(k)] - dot) / temperature;
      }
  });
}

Var l2_norm(const Var& a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  const double n = std::sqrt(s);
  const std::size_t ia = a.id();
  Tape* tape = &a.tape();
  return tape->record(Tensor::scalar(n), {a}, [tape, ia, n](const Tensor& g, GradSink& sink) {
    if (n == 0.0) return;
    const Tensor& xv = tape->value(ia);
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < xv.numel(); ++i) d[i] += g[0] * xv[i] / n;
  });
}

Var row_norms(const Var& a) {
  const Tensor& x = a.value();
  require_rank2(x, "row_norms");
  const std::size_t r = x.extent(0), c = x.extent(1);
  Tensor out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    out[i] = std::sqrt(s);
  }
  Tape* tape = &a.tape();
  const std::size_t ia = a.id();
  Tensor norms = out;
  return tape->record(std::move(out), {a}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& xv = tape->value(ia);
    Tensor& d = sink.slot(ia);
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[i] * xv[i * c + j] / norms[i];
    }
  });
}

Var angular_distances(const Var& queries, const Tensor& keys) {
  const Tensor& q = queries.value();
  require_rank2(q, "angular_distances");
  require_rank2(keys, "angular_distances");
  const std::size_t m = q.extent(0), d = q.extent(1), nv = keys.extent(0);
  if (keys.extent(1) != d) {
    throw DimensionError("angular_distances: queries " + shape_string(q.shape()) + " vs keys " + shape_string(keys.shape()));
  }
  // unit keys
  Tensor kh(keys.shape());
  for (std::size_t v = 0; v < nv; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += keys[v * d + j] * keys[v * d + j];
    s = std::sqrt(s);
    if (s == 0.0) throw DomainError("angular distance undefined: key row " + std::to_string(v) + " is zero");
    for (std::size_t j = 0; j < d; ++j) kh[v * d + j] = keys[v * d + j] / s;
  }
  Tensor qh(q.shape());
  std::vector<double> qn(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += q[i * d + j] * q[i * d + j];
    qn[i] = std::sqrt(s);
    if (qn[i] == 0.0) throw DomainError("angular distance undefined: query row " + std::to_string(i) + " is zero");
    for (std::size_t j = 0; j < d; ++j) qh[i * d + j] = q[i * d + j] / qn[i];
  }
  Tensor out(Shape{m, nv});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t v = 0; v < nv; ++v) {
      double dm = 0.0, dp = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double a = qh[i * d + j], b = kh[v * d + j];
        dm += (a - b) * (a - b);
        dp += (a + b) * (a + b);
      }
      out[i * nv + v] = 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
    }
  const std::size_t ia = queries.id();
  return queries.tape().record(std::move(out), {queries}, [=](const Tensor& g, GradSink& sink) {
    // d(angle)/dq = -(k - cos * q_hat) / (|q| * sin), zero where sin vanishes.
    Tensor& dq = sink.slot(ia);
    std::vector<double> w(d);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t v = 0; v < nv; ++v) {
        const double gv = g[i * nv + v];
        if (gv == 0.0) continue;
        double c = 0.0;
        for (std::size_t j = 0; j < d; ++j) c += qh[i * d + j] * kh[v * d + j];
        double s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          w[j] = kh[v * d + j] - c * qh[i * d + j];
          s2 += w[j] * w[j];
        }
        const double s = std::sqrt(s2);
        if (s < 1e-12) continue;
        const double f = -gv / (qn[i] * s);
        for (std::size_t j = 0; j < d; ++j) dq[i * d + j] += f * w[j];
      }
  });
}

Var im2col(const Var& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  const Tensor& x = input.value();
  if (x.rank() != 3) throw DimensionError("im2col expects [C x H x W], got " + shape_string(x.shape()));
  if (stride == 0) throw DimensionError("im2col stride must be positive");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw DimensionError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than padded input " +
                         shape_string(x.shape()));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t rows = c * kh * kw, cols = oh * ow;
  // source index per output cell, or npos for padding
  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> src(rows * cols, npos);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t r = (ch * kh + i) * kw + j;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
            const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            src[r * cols + oy * ow + ox] = (ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
          }
      }
  Tensor out(Shape{rows, cols}, 0.0);
  for (std::size_t k = 0; k < src.size(); ++k)
    if (src[k] != npos) out[k] = x[src[k]];
  const std::size_t ia = input.id();
  return input.tape().record(std::move(out), {input}, [ia, src](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    for (std::size_t k = 0; k < src.size(); ++k)
      if (src[k] != npos) d[src[k]] += g[k];
  });
}

}  // namespace advlat
