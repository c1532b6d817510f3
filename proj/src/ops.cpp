#include "plankd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace plankd::grad {

namespace {

struct OpCtx {
  bool record = false;
  bool any_grad = false;
  Graph* graph = nullptr;
};

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(op) + ": non-finite input value in strict mode");
    }
  }
}

OpCtx begin_op(const char* op, std::initializer_list<const Tensor*> ins) {
  OpCtx ctx;
  for (const Tensor* t : ins) {
    if (!t->defined()) throw std::invalid_argument(std::string(op) + ": undefined input tensor");
    if (strict_finite()) check_finite(op, *t);
    ctx.any_grad = ctx.any_grad || t->requires_grad();
  }
  if (NoGradGuard::active()) return ctx;
  Graph* g = Graph::active();
  if (!g) {
    if (ctx.any_grad) {
      throw std::runtime_error(std::string(op) + ": input requires grad but no graph is active");
    }
    return ctx;
  }
  ctx.record = true;
  ctx.graph = g;
  return ctx;
}

void finish(const OpCtx& ctx, Tensor& out, std::function<void()> backward_fn) {
  if (!ctx.record) return;
  int id = ctx.graph->append(std::move(backward_fn));
  out.set_node(ctx.graph->generation(), id);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(rank) +
                                " tensor, got shape " + shape_str(t.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// out = f(a) elementwise with df supplied for the backward pass
template <typename F, typename DF>
Tensor unary_elementwise(const char* op, const Tensor& a, F f, DF df) {
  OpCtx ctx = begin_op(op, {&a});
  std::vector<double> out_v(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out_v[i] = f(av[i]);
  Tensor out(a.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [a, out, df]() {
    if (!out.grad() || !a.requires_grad()) return;
    auto ain = a;
    auto& ag = *ain.grad();
    const auto& og = *out.grad();
    const auto& av = a.values();
    const auto& ov = out.values();
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += og[i] * df(av[i], ov[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  OpCtx ctx = begin_op("add", {&a, &b});
  std::vector<double> out_v(a.numel());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] + b.values()[i];
  Tensor out(a.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [a, b, out]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    if (a.requires_grad()) {
      auto t = a;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  OpCtx ctx = begin_op("sub", {&a, &b});
  std::vector<double> out_v(a.numel());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] - b.values()[i];
  Tensor out(a.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [a, b, out]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    if (a.requires_grad()) {
      auto t = a;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= og[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  OpCtx ctx = begin_op("mul", {&a, &b});
  std::vector<double> out_v(a.numel());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] * b.values()[i];
  Tensor out(a.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [a, b, out]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    if (a.requires_grad()) {
      auto t = a;
      auto& g = *t.grad();
      const auto& bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& g = *t.grad();
      const auto& av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * av[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(
      "scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_elementwise(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return unary_elementwise(
      "leaky_relu", x, [negative_slope](double v) { return v >= 0.0 ? v : negative_slope * v; },
      [negative_slope](double v, double) { return v >= 0.0 ? 1.0 : negative_slope; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x, [](double v) { return stable_sigmoid(v); },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor softplus(const Tensor& x) {
  return unary_elementwise(
      "softplus", x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor exp(const Tensor& x) {
  return unary_elementwise(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double o) { return o; });
}

Tensor log(const Tensor& x) {
  return unary_elementwise(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_elementwise(
      "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  OpCtx ctx = begin_op("matmul", {&a, &b});
  require_rank("matmul", a, 2);
  bool vec_rhs = b.shape().size() == 1;
  if (!vec_rhs) require_rank("matmul", b, 2);
  std::size_t m = a.shape()[0], k = a.shape()[1];
  std::size_t n = vec_rhs ? 1 : b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::vector<double> out_v(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      double aval = av[i * k + l];
      const double* brow = &bv[l * n];
      double* orow = &out_v[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aval * brow[j];
    }
  }
  Shape out_shape = vec_rhs ? Shape{m} : Shape{m, n};
  Tensor out(std::move(out_shape), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [a, b, out, m, k, n]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    if (a.requires_grad()) {
      auto t = a;
      auto& ga = *t.grad();
      const auto& bv = b.values();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          const double* orow = &og[i * n];
          const double* brow = &bv[l * n];
          for (std::size_t j = 0; j < n; ++j) s += orow[j] * brow[j];
          ga[i * k + l] += s;
        }
      }
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& gb = *t.grad();
      const auto& av = a.values();
      for (std::size_t i = 0; i < m; ++i) {
        const double* orow = &og[i * n];
        for (std::size_t l = 0; l < k; ++l) {
          double aval = av[i * k + l];
          double* grow = &gb[l * n];
          for (std::size_t j = 0; j < n; ++j) grow[j] += aval * orow[j];
        }
      }
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  OpCtx ctx = begin_op("conv2d", {&x, &w, &b});
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  require_rank("conv2d", b, 1);
  std::size_t ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != ci || b.shape()[0] != co) {
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(w.shape()));
  }
  if (stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  std::size_t ow = (wd + 2 * pad - kw) / stride + 1;

  // valid tap ranges per output row/column, computed once
  auto tap_range = [pad, stride](std::size_t out_idx, std::size_t k, std::size_t limit,
                                 std::size_t& lo, std::size_t& hi) {
    std::ptrdiff_t base = static_cast<std::ptrdiff_t>(out_idx * stride) -
                          static_cast<std::ptrdiff_t>(pad);
    lo = base < 0 ? static_cast<std::size_t>(-base) : 0;
    std::ptrdiff_t over = base + static_cast<std::ptrdiff_t>(k) -
                          static_cast<std::ptrdiff_t>(limit);
    hi = over > 0 ? k - static_cast<std::size_t>(over) : k;
  };

  std::vector<double> out_v(co * oh * ow);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < oh; ++i) {
      std::size_t u_lo, u_hi;
      tap_range(i, kh, h, u_lo, u_hi);
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t v_lo, v_hi;
        tap_range(j, kw, wd, v_lo, v_hi);
        double acc = bv[o];
        std::size_t yi0 = i * stride - pad + u_lo;
        std::size_t xj0 = j * stride - pad + v_lo;
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t u = u_lo; u < u_hi; ++u) {
            const double* wrow = &wv[((o * ci + c) * kh + u) * kw + v_lo];
            const double* xrow = &xv[(c * h + yi0 + (u - u_lo)) * wd + xj0];
            for (std::size_t v = 0; v < v_hi - v_lo; ++v) acc += wrow[v] * xrow[v];
          }
        }
        out_v[(o * oh + i) * ow + j] = acc;
      }
    }
  }
  Tensor out(Shape{co, oh, ow}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, w, b, out, ci, h, wd, co, kh, kw, oh, ow, stride, pad]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    auto tx = x;
    auto tw = w;
    auto tb = b;
    std::vector<double>* gx = x.requires_grad() ? tx.grad() : nullptr;
    std::vector<double>* gw = w.requires_grad() ? tw.grad() : nullptr;
    std::vector<double>* gb = b.requires_grad() ? tb.grad() : nullptr;
    const auto& xv = x.values();
    const auto& wv = w.values();
    auto tap_range = [pad, stride](std::size_t out_idx, std::size_t k, std::size_t limit,
                                   std::size_t& lo, std::size_t& hi) {
      std::ptrdiff_t base = static_cast<std::ptrdiff_t>(out_idx * stride) -
                            static_cast<std::ptrdiff_t>(pad);
      lo = base < 0 ? static_cast<std::size_t>(-base) : 0;
      std::ptrdiff_t over = base + static_cast<std::ptrdiff_t>(k) -
                            static_cast<std::ptrdiff_t>(limit);
      hi = over > 0 ? k - static_cast<std::size_t>(over) : k;
    };
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        std::size_t u_lo, u_hi;
        tap_range(i, kh, h, u_lo, u_hi);
        for (std::size_t j = 0; j < ow; ++j) {
          double g = og[(o * oh + i) * ow + j];
          if (g == 0.0) continue;
          if (gb) (*gb)[o] += g;
          std::size_t v_lo, v_hi;
          tap_range(j, kw, wd, v_lo, v_hi);
          std::size_t yi0 = i * stride - pad + u_lo;
          std::size_t xj0 = j * stride - pad + v_lo;
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t u = u_lo; u < u_hi; ++u) {
              std::size_t wbase = ((o * ci + c) * kh + u) * kw + v_lo;
              std::size_t xbase = (c * h + yi0 + (u - u_lo)) * wd + xj0;
              if (gw && gx) {
                for (std::size_t v = 0; v < v_hi - v_lo; ++v) {
                  (*gw)[wbase + v] += g * xv[xbase + v];
                  (*gx)[xbase + v] += g * wv[wbase + v];
                }
              } else if (gw) {
                for (std::size_t v = 0; v < v_hi - v_lo; ++v) (*gw)[wbase + v] += g * xv[xbase + v];
              } else if (gx) {
                for (std::size_t v = 0; v < v_hi - v_lo; ++v) (*gx)[xbase + v] += g * wv[wbase + v];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor add_bias_cols(const Tensor& x, const Tensor& b) {
  OpCtx ctx = begin_op("add_bias_cols", {&x, &b});
  require_rank("add_bias_cols", x, 2);
  require_rank("add_bias_cols", b, 1);
  std::size_t m = x.shape()[0], n = x.shape()[1];
  if (b.shape()[0] != m) {
    throw std::invalid_argument("add_bias_cols: shape mismatch " + shape_str(x.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<double> out_v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double bi = b.values()[i];
    for (std::size_t j = 0; j < n; ++j) out_v[i * n + j] = x.values()[i * n + j] + bi;
  }
  Tensor out(x.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, b, out, m, n]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    if (x.requires_grad()) {
      auto t = x;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += og[i * n + j];
        g[i] += s;
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  OpCtx ctx = begin_op("sum", {&x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out(Shape{1}, {s}, ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out]() {
    if (!out.grad() || !x.requires_grad()) return;
    double g = (*out.grad())[0];
    auto t = x;
    for (double& gv : *t.grad()) gv += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  OpCtx ctx = begin_op("mean", {&x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  double n = static_cast<double>(x.numel());
  Tensor out(Shape{1}, {s / n}, ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, n]() {
    if (!out.grad() || !x.requires_grad()) return;
    double g = (*out.grad())[0] / n;
    auto t = x;
    for (double& gv : *t.grad()) gv += g;
  });
  return out;
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  OpCtx ctx = begin_op("sum_axis", {&x});
  require_rank("sum_axis", x, 2);
  if (axis > 1) throw std::invalid_argument("sum_axis: axis out of range for rank-2 tensor");
  std::size_t m = x.shape()[0], n = x.shape()[1];
  std::size_t out_n = axis == 0 ? n : m;
  std::vector<double> out_v(out_n, 0.0);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out_v[axis == 0 ? j : i] += xv[i * n + j];
    }
  }
  Tensor out(Shape{out_n}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, m, n, axis]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += og[axis == 0 ? j : i];
    }
  });
  return out;
}

Tensor abs_diff_sum(const Tensor& a, const Tensor& b) {
  require_same_shape("abs_diff_sum", a, b);
  OpCtx ctx = begin_op("abs_diff_sum", {&a, &b});
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  Tensor out(Shape{1}, {s}, ctx.record && ctx.any_grad);
  finish(ctx, out, [a, b, out]() {
    if (!out.grad()) return;
    double g = (*out.grad())[0];
    const auto& av = a.values();
    const auto& bv = b.values();
    // subgradient at zero is zero
    if (a.requires_grad()) {
      auto t = a;
      auto& ga = *t.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double d = av[i] - bv[i];
        ga[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      }
    }
    if (b.requires_grad()) {
      auto t = b;
      auto& gb = *t.grad();
      for (std::size_t i = 0; i < gb.size(); ++i) {
        double d = av[i] - bv[i];
        gb[i] -= g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      }
    }
  });
  return out;
}

Tensor weighted_row_l1(const Tensor& pred, const Tensor& target,
                       std::span<const double> row_weights) {
  require_same_shape("weighted_row_l1", pred, target);
  OpCtx ctx = begin_op("weighted_row_l1", {&pred, &target});
  require_rank("weighted_row_l1", pred, 2);
  std::size_t m = pred.shape()[0], n = pred.shape()[1];
  if (row_weights.size() != m) {
    throw std::invalid_argument("weighted_row_l1: " + std::to_string(row_weights.size()) +
                                " weights for " + std::to_string(m) + " rows");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      r += std::abs(pred.values()[i * n + j] - target.values()[i * n + j]);
    }
    s += row_weights[i] * r;
  }
  std::vector<double> w(row_weights.begin(), row_weights.end());
  Tensor out(Shape{1}, {s}, ctx.record && ctx.any_grad);
  finish(ctx, out, [pred, target, out, w, m, n]() {
    if (!out.grad()) return;
    double g = (*out.grad())[0];
    const auto& pv = pred.values();
    const auto& tv = target.values();
    if (pred.requires_grad()) {
      auto t = pred;
      auto& gp = *t.grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double d = pv[i * n + j] - tv[i * n + j];
          gp[i * n + j] += g * w[i] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
      }
    }
    if (target.requires_grad()) {
      auto t = target;
      auto& gt = *t.grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double d = pv[i * n + j] - tv[i * n + j];
          gt[i * n + j] -= g * w[i] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
      }
    }
  });
  return out;
}

Tensor xlogx_sum(const Tensor& a) {
  OpCtx ctx = begin_op("xlogx_sum", {&a});
  double s = 0.0;
  for (double v : a.values()) {
    if (v >= 1e-12) s += v * std::log(v);
  }
  Tensor out(Shape{1}, {s}, ctx.record && ctx.any_grad);
  finish(ctx, out, [a, out]() {
    if (!out.grad() || !a.requires_grad()) return;
    double g = (*out.grad())[0];
    auto t = a;
    auto& ga = *t.grad();
    const auto& av = a.values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] >= 1e-12) ga[i] += g * (std::log(av[i]) + 1.0);
    }
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  OpCtx ctx = begin_op("softmax_lastdim", {&x});
  if (x.shape().empty()) throw std::invalid_argument("softmax_lastdim: rank-0 input");
  std::size_t n = x.shape().back();
  std::size_t rows = x.numel() / n;
  std::vector<double> out_v(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * n];
    double* o = &out_v[r * n];
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  Tensor out(x.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, rows, n]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    const auto& ov = out.values();
    auto t = x;
    auto& gx = *t.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += og[r * n + j] * ov[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        gx[r * n + j] += ov[r * n + j] * (og[r * n + j] - dot);
      }
    }
  });
  return out;
}

Tensor channel_mean(const Tensor& x) {
  OpCtx ctx = begin_op("channel_mean", {&x});
  require_rank("channel_mean", x, 3);
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out_v(h * w, 0.0);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) out_v[i] += xv[ch * h * w + i];
  }
  double inv = 1.0 / static_cast<double>(c);
  for (double& v : out_v) v *= inv;
  Tensor out(Shape{1, h, w}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, c, h, w, inv]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h * w; ++i) g[ch * h * w + i] += og[i] * inv;
    }
  });
  return out;
}

Tensor spatial_mean(const Tensor& x) {
  OpCtx ctx = begin_op("spatial_mean", {&x});
  require_rank("spatial_mean", x, 3);
  std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  std::vector<double> out_v(c, 0.0);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    out_v[ch] = s / static_cast<double>(hw);
  }
  Tensor out(Shape{c}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, c, hw]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += og[ch] * inv;
    }
  });
  return out;
}

namespace {
struct ResizeTap {
  std::size_t i0, i1;
  double f;
};

// half-pixel-center source coordinate, clamped into range
ResizeTap resize_tap(std::size_t out_idx, std::size_t out_n, std::size_t in_n) {
  double src = (static_cast<double>(out_idx) + 0.5) * static_cast<double>(in_n) /
                   static_cast<double>(out_n) -
               0.5;
  src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
  std::size_t i0 = static_cast<std::size_t>(src);
  std::size_t i1 = std::min(i0 + 1, in_n - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}
}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  OpCtx ctx = begin_op("bilinear_resize", {&x});
  require_rank("bilinear_resize", x, 3);
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_resize: zero output size");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out_v(c * out_h * out_w);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = &xv[ch * h * w];
    for (std::size_t i = 0; i < out_h; ++i) {
      ResizeTap ty = resize_tap(i, out_h, h);
      for (std::size_t j = 0; j < out_w; ++j) {
        ResizeTap tx = resize_tap(j, out_w, w);
        double v00 = plane[ty.i0 * w + tx.i0];
        double v01 = plane[ty.i0 * w + tx.i1];
        double v10 = plane[ty.i1 * w + tx.i0];
        double v11 = plane[ty.i1 * w + tx.i1];
        out_v[(ch * out_h + i) * out_w + j] = (1.0 - ty.f) * ((1.0 - tx.f) * v00 + tx.f * v01) +
                                              ty.f * ((1.0 - tx.f) * v10 + tx.f * v11);
      }
    }
  }
  Tensor out(Shape{c, out_h, out_w}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, c, h, w, out_h, out_w]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* plane = &g[ch * h * w];
      for (std::size_t i = 0; i < out_h; ++i) {
        ResizeTap ty = resize_tap(i, out_h, h);
        for (std::size_t j = 0; j < out_w; ++j) {
          ResizeTap tx = resize_tap(j, out_w, w);
          double gv = og[(ch * out_h + i) * out_w + j];
          plane[ty.i0 * w + tx.i0] += gv * (1.0 - ty.f) * (1.0 - tx.f);
          plane[ty.i0 * w + tx.i1] += gv * (1.0 - ty.f) * tx.f;
          plane[ty.i1 * w + tx.i0] += gv * ty.f * (1.0 - tx.f);
          plane[ty.i1 * w + tx.i1] += gv * ty.f * tx.f;
        }
      }
    }
  });
  return out;
}

Tensor concat_vec(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_vec: no inputs");
  std::vector<const Tensor*> ptrs;
  bool any_grad = false;
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.shape().size() != 1) {
      throw std::invalid_argument("concat_vec: expected rank-1 parts, got shape " +
                                  shape_str(t.shape()));
    }
    any_grad = any_grad || t.requires_grad();
    total += t.numel();
  }
  // begin_op over the first input covers graph/strict checks; finiteness of the
  // rest is checked inline when strict mode is on
  OpCtx ctx = begin_op("concat_vec", {&parts[0]});
  if (strict_finite()) {
    for (const Tensor& t : parts) check_finite("concat_vec", t);
  }
  if (!ctx.record && any_grad && !NoGradGuard::active()) {
    throw std::runtime_error("concat_vec: input requires grad but no graph is active");
  }
  ctx.any_grad = any_grad;
  std::vector<double> out_v;
  out_v.reserve(total);
  for (const Tensor& t : parts) {
    out_v.insert(out_v.end(), t.values().begin(), t.values().end());
  }
  std::vector<Tensor> held(parts.begin(), parts.end());
  Tensor out(Shape{total}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [held = std::move(held), out]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    std::size_t off = 0;
    for (const Tensor& p : held) {
      if (p.requires_grad()) {
        auto t = p;
        auto& g = *t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[off + i];
      }
      off += p.numel();
    }
  });
  return out;
}

Tensor stack_cols(std::span<const Tensor> cols) {
  if (cols.empty()) throw std::invalid_argument("stack_cols: no inputs");
  std::size_t d = cols[0].numel();
  bool any_grad = false;
  for (const Tensor& t : cols) {
    if (t.shape().size() != 1 || t.numel() != d) {
      throw std::invalid_argument("stack_cols: shape mismatch " + shape_str(cols[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    }
    any_grad = any_grad || t.requires_grad();
  }
  OpCtx ctx = begin_op("stack_cols", {&cols[0]});
  if (strict_finite()) {
    for (const Tensor& t : cols) check_finite("stack_cols", t);
  }
  if (!ctx.record && any_grad && !NoGradGuard::active()) {
    throw std::runtime_error("stack_cols: input requires grad but no graph is active");
  }
  ctx.any_grad = any_grad;
  std::size_t n = cols.size();
  std::vector<double> out_v(d * n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& cv = cols[j].values();
    for (std::size_t i = 0; i < d; ++i) out_v[i * n + j] = cv[i];
  }
  std::vector<Tensor> held(cols.begin(), cols.end());
  Tensor out(Shape{d, n}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [held = std::move(held), out, d, n]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    for (std::size_t j = 0; j < n; ++j) {
      if (!held[j].requires_grad()) continue;
      auto t = held[j];
      auto& g = *t.grad();
      for (std::size_t i = 0; i < d; ++i) g[i] += og[i * n + j];
    }
  });
  return out;
}

Tensor row(const Tensor& x, std::size_t r) {
  OpCtx ctx = begin_op("row", {&x});
  require_rank("row", x, 2);
  std::size_t m = x.shape()[0], n = x.shape()[1];
  if (r >= m) throw std::invalid_argument("row: index " + std::to_string(r) + " out of range");
  std::vector<double> out_v(x.values().begin() + r * n, x.values().begin() + (r + 1) * n);
  Tensor out(Shape{n}, std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out, r, n]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    for (std::size_t j = 0; j < n; ++j) g[r * n + j] += og[j];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape target) {
  OpCtx ctx = begin_op("reshape", {&x});
  if (shape_numel(target) != x.numel()) {
    throw std::invalid_argument("reshape: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(target));
  }
  Tensor out(std::move(target), x.values(), ctx.record && ctx.any_grad);
  finish(ctx, out, [x, out]() {
    if (!out.grad() || !x.requires_grad()) return;
    const auto& og = *out.grad();
    auto t = x;
    auto& g = *t.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
  });
  return out;
}

Tensor gaussian_reparam(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  require_same_shape("gaussian_reparam", mu, logvar);
  require_same_shape("gaussian_reparam", mu, eps);
  OpCtx ctx = begin_op("gaussian_reparam", {&mu, &logvar, &eps});
  std::vector<double> out_v(mu.numel());
  for (std::size_t i = 0; i < out_v.size(); ++i) {
    out_v[i] = mu.values()[i] + std::exp(0.5 * logvar.values()[i]) * eps.values()[i];
  }
  Tensor out(mu.shape(), std::move(out_v), ctx.record && ctx.any_grad);
  finish(ctx, out, [mu, logvar, eps, out]() {
    if (!out.grad()) return;
    const auto& og = *out.grad();
    const auto& lv = logvar.values();
    const auto& ev = eps.values();
    if (mu.requires_grad()) {
      auto t = mu;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (logvar.requires_grad()) {
      auto t = logvar;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += og[i] * 0.5 * std::exp(0.5 * lv[i]) * ev[i];
      }
    }
    if (eps.requires_grad()) {
      auto t = eps;
      auto& g = *t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i] * std::exp(0.5 * lv[i]);
    }
  });
  return out;
}

}  // namespace plankd::grad
