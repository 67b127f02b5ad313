#include "cdis/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cdis/error.hpp"

namespace cdis {
namespace {

using Grads = std::span<std::vector<double>* const>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

// Result shape for a binary elementwise op, allowing one single-element side.
Shape binary_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are incompatible");
}

// Adds g (length n) into buf, summing everything if buf is single-element.
void accumulate(std::vector<double>* buf, std::span<const double> g) {
  if (buf == nullptr) return;
  if (buf->size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
  } else {
    double s = 0.0;
    for (double v : g) s += v;
    (*buf)[0] += s;
  }
}

template <typename Fwd>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, std::size_t n, Fwd f) {
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  const bool as = ad.size() == 1 && n != 1;
  const bool bs = bd.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[as ? 0 : i], bd[bs ? 0 : i]);
  return out;
}

inline double at_or_scalar(std::span<const double> d, std::size_t i) {
  return d.size() == 1 ? d[0] : d[i];
}

struct AxisSplit {
  std::size_t outer, len, inner;
  Shape out_shape;
};

AxisSplit split_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(t.shape()));
  }
  AxisSplit s{1, t.shape()[axis], 1, {}};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= t.shape()[i];
  for (std::size_t i = axis + 1; i < t.rank(); ++i) s.inner *= t.shape()[i];
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i != axis) s.out_shape.push_back(t.shape()[i]);
  }
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not align");
  }
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(m * q, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ad[i * p + k];
      for (std::size_t j = 0; j < q; ++j) out[i * q + j] += aik * bd[k * q + j];
    }
  }
  return GradTape::emit("matmul", {a, b}, {m, q}, std::move(out),
                        [a, b, m, p, q](std::span<const double> g, Grads gin) {
                          const auto ad = a.data();
                          const auto bd = b.data();
                          if (auto* ga = gin[0]) {
                            // dA = dC * B^T
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t k = 0; k < p; ++k) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < q; ++j) s += g[i * q + j] * bd[k * q + j];
                                (*ga)[i * p + k] += s;
                              }
                          }
                          if (auto* gb = gin[1]) {
                            // dB = A^T * dC
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t k = 0; k < p; ++k) {
                                const double aik = ad[i * p + k];
                                for (std::size_t j = 0; j < q; ++j) (*gb)[k * q + j] += aik * g[i * q + j];
                              }
                          }
                        });
}

Tensor transpose(const Tensor& t) {
  require_rank(t, 2, "transpose");
  const std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r * c);
  const auto d = t.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return GradTape::emit("transpose", {t}, {c, r}, std::move(out),
                        [r, c](std::span<const double> g, Grads gin) {
                          auto* gt = gin[0];
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) (*gt)[i * c + j] += g[j * r + i];
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto shape = binary_shape(a, b, "add");
  const auto n = shape_numel(shape);
  auto out = binary_values(a, b, n, [](double x, double y) { return x + y; });
  return GradTape::emit("add", {a, b}, std::move(shape), std::move(out),
                        [](std::span<const double> g, Grads gin) {
                          accumulate(gin[0], g);
                          accumulate(gin[1], g);
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto shape = binary_shape(a, b, "sub");
  const auto n = shape_numel(shape);
  auto out = binary_values(a, b, n, [](double x, double y) { return x - y; });
  return GradTape::emit("sub", {a, b}, std::move(shape), std::move(out),
                        [](std::span<const double> g, Grads gin) {
                          accumulate(gin[0], g);
                          if (gin[1]) {
                            std::vector<double> ng(g.begin(), g.end());
                            for (auto& v : ng) v = -v;
                            accumulate(gin[1], ng);
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto shape = binary_shape(a, b, "mul");
  const auto n = shape_numel(shape);
  auto out = binary_values(a, b, n, [](double x, double y) { return x * y; });
  return GradTape::emit("mul", {a, b}, std::move(shape), std::move(out),
                        [a, b](std::span<const double> g, Grads gin) {
                          const auto ad = a.data();
                          const auto bd = b.data();
                          std::vector<double> tmp(g.size());
                          if (gin[0]) {
                            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * at_or_scalar(bd, i);
                            accumulate(gin[0], tmp);
                          }
                          if (gin[1]) {
                            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * at_or_scalar(ad, i);
                            accumulate(gin[1], tmp);
                          }
                        });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto shape = binary_shape(a, b, "div");
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  const auto n = shape_numel(shape);
  auto out = binary_values(a, b, n, [](double x, double y) { return x / y; });
  return GradTape::emit("div", {a, b}, std::move(shape), std::move(out),
                        [a, b](std::span<const double> g, Grads gin) {
                          const auto ad = a.data();
                          const auto bd = b.data();
                          std::vector<double> tmp(g.size());
                          if (gin[0]) {
                            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] / at_or_scalar(bd, i);
                            accumulate(gin[0], tmp);
                          }
                          if (gin[1]) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const double y = at_or_scalar(bd, i);
                              tmp[i] = -g[i] * at_or_scalar(ad, i) / (y * y);
                            }
                            accumulate(gin[1], tmp);
                          }
                        });
}

Tensor scale(const Tensor& t, double factor) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (auto& v : out) v *= factor;
  return GradTape::emit("scale", {t}, t.shape(), std::move(out),
                        [factor](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += factor * g[i];
                        });
}

Tensor add_scalar(const Tensor& t, double value) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (auto& v : out) v += value;
  return GradTape::emit("add_scalar", {t}, t.shape(), std::move(out),
                        [](std::span<const double> g, Grads gin) { accumulate(gin[0], g); });
}

Tensor neg(const Tensor& t) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (auto& v : out) v = -v;
  return GradTape::emit("neg", {t}, t.shape(), std::move(out),
                        [](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gt[i] -= g[i];
                        });
}

Tensor exp(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(d[i]);
  auto saved = out;
  return GradTape::emit("exp", {t}, t.shape(), std::move(out),
                        [saved = std::move(saved)](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i] * saved[i];
                        });
}

Tensor log(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(d[i] > 0.0)) {
      throw DomainError("log: non-positive argument " + std::to_string(d[i]) + " at index " +
                        std::to_string(i));
    }
    out[i] = std::log(d[i]);
  }
  return GradTape::emit("log", {t}, t.shape(), std::move(out),
                        [t](std::span<const double> g, Grads gin) {
                          const auto d = t.data();
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i] / d[i];
                        });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto d = t.data();
  // NaN passes through so upstream faults are not masked.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > 0.0 || std::isnan(d[i]) ? d[i] : 0.0;
  return GradTape::emit("relu", {t}, t.shape(), std::move(out),
                        [t](std::span<const double> g, Grads gin) {
                          const auto d = t.data();
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (d[i] > 0.0) gt[i] += g[i];
                          }
                        });
}

Tensor sigmoid(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Branch on sign so exp never overflows.
    if (d[i] >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-d[i]));
    } else {
      const double e = std::exp(d[i]);
      out[i] = e / (1.0 + e);
    }
  }
  auto saved = out;
  return GradTape::emit("sigmoid", {t}, t.shape(), std::move(out),
                        [saved = std::move(saved)](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gt[i] += g[i] * saved[i] * (1.0 - saved[i]);
                          }
                        });
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(d[i], lo, hi);
  return GradTape::emit("clamp", {t}, t.shape(), std::move(out),
                        [t, lo, hi](std::span<const double> g, Grads gin) {
                          const auto d = t.data();
                          auto& gt = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (d[i] >= lo && d[i] <= hi) gt[i] += g[i];
                          }
                        });
}

Tensor add_bias(const Tensor& t, const Tensor& bias) {
  require_rank(t, 2, "add_bias");
  const std::size_t m = t.dim(0), f = t.dim(1);
  if (bias.numel() != f) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(t.shape()));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += bd[j];
  return GradTape::emit("add_bias", {t, bias}, t.shape(), std::move(out),
                        [m, f](std::span<const double> g, Grads gin) {
                          if (gin[0]) accumulate(gin[0], g);
                          if (auto* gb = gin[1]) {
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < f; ++j) (*gb)[j] += g[i * f + j];
                          }
                        });
}

Tensor sum(const Tensor& t, std::optional<std::size_t> axis) {
  if (!axis) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return GradTape::emit("sum", {t}, {}, {s}, [](std::span<const double> g, Grads gin) {
      for (auto& v : *gin[0]) v += g[0];
    });
  }
  auto sp = split_axis(t, *axis, "sum");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto d = t.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += d[(o * sp.len + l) * sp.inner + i];
  return GradTape::emit("sum", {t}, sp.out_shape, std::move(out),
                        [sp](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t l = 0; l < sp.len; ++l)
                              for (std::size_t i = 0; i < sp.inner; ++i)
                                gt[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
                        });
}

Tensor mean(const Tensor& t, std::optional<std::size_t> axis) {
  const std::size_t count = axis ? split_axis(t, *axis, "mean").len : t.numel();
  if (count == 0) throw DimensionError("mean of an empty extent");
  return scale(sum(t, axis), 1.0 / static_cast<double>(count));
}

Tensor max(const Tensor& t, std::optional<std::size_t> axis) {
  if (t.numel() == 0) throw DimensionError("max of an empty tensor");
  AxisSplit sp = axis ? split_axis(t, *axis, "max") : AxisSplit{1, t.numel(), 1, {}};
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> argmax(out.size());
  const auto d = t.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t idx = (o * sp.len + l) * sp.inner + i;
        if (d[idx] > d[best]) best = idx;
      }
      out[o * sp.inner + i] = d[best];
      argmax[o * sp.inner + i] = best;
    }
  return GradTape::emit("max", {t}, sp.out_shape, std::move(out),
                        [argmax = std::move(argmax)](std::span<const double> g, Grads gin) {
                          auto& gt = *gin[0];
                          for (std::size_t k = 0; k < argmax.size(); ++k) gt[argmax[k]] += g[k];
                        });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return GradTape::emit("reshape", {t}, std::move(shape), std::move(out),
                        [](std::span<const double> g, Grads gin) { accumulate(gin[0], g); });
}

Tensor vstack(const Tensor& top, const Tensor& bottom) {
  require_rank(top, 2, "vstack");
  require_rank(bottom, 2, "vstack");
  if (top.dim(1) != bottom.dim(1)) {
    throw DimensionError("vstack: shapes " + shape_str(top.shape()) + " and " +
                         shape_str(bottom.shape()) + " differ in columns");
  }
  std::vector<double> out;
  out.reserve(top.numel() + bottom.numel());
  out.insert(out.end(), top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  const std::size_t split = top.numel();
  return GradTape::emit("vstack", {top, bottom}, {top.dim(0) + bottom.dim(0), top.dim(1)},
                        std::move(out), [split](std::span<const double> g, Grads gin) {
                          if (gin[0]) accumulate(gin[0], g.subspan(0, split));
                          if (gin[1]) accumulate(gin[1], g.subspan(split));
                        });
}

Tensor row_l2_normalize(const Tensor& t) {
  require_rank(t, 2, "row_l2_normalize");
  const std::size_t m = t.dim(0), dcols = t.dim(1);
  const auto d = t.data();
  std::vector<double> norms(m);
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dcols; ++j) s += d[i * dcols + j] * d[i * dcols + j];
    norms[i] = std::sqrt(s);
    if (norms[i] < 1e-12) {
      throw DomainError("row_l2_normalize: degenerate row " + std::to_string(i) + " (norm " +
                        std::to_string(norms[i]) + ")");
    }
    for (std::size_t j = 0; j < dcols; ++j) out[i * dcols + j] = d[i * dcols + j] / norms[i];
  }
  auto unit = out;
  return GradTape::emit(
      "row_l2_normalize", {t}, t.shape(), std::move(out),
      [m, dcols, norms = std::move(norms), unit = std::move(unit)](std::span<const double> g,
                                                                   Grads gin) {
        // d(v/|v|) = (g - u (u.g)) / |v|
        auto& gt = *gin[0];
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < dcols; ++j) dot += unit[i * dcols + j] * g[i * dcols + j];
          for (std::size_t j = 0; j < dcols; ++j) {
            gt[i * dcols + j] += (g[i * dcols + j] - unit[i * dcols + j] * dot) / norms[i];
          }
        }
      });
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 4, "conv2d_3x3");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.rank() != 2 || weight.dim(1) != c * 9 || bias.numel() != weight.dim(0)) {
    throw DimensionError("conv2d_3x3: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  const std::size_t o = weight.dim(0);
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  std::vector<double> out(n * o * h * w);
  auto in_at = [&](std::span<const double> src, std::size_t b, std::size_t ch, long r,
                   long col) -> double {
    if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w)) return 0.0;
    return src[((b * c + ch) * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(col)];
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col) {
          double s = bd[oc];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (long kr = 0; kr < 3; ++kr)
              for (long kc = 0; kc < 3; ++kc) {
                s += wd[oc * c * 9 + ch * 9 + static_cast<std::size_t>(kr * 3 + kc)] *
                     in_at(xd, b, ch, static_cast<long>(r) + kr - 1, static_cast<long>(col) + kc - 1);
              }
          out[((b * o + oc) * h + r) * w + col] = s;
        }
  return GradTape::emit(
      "conv2d_3x3", {x, weight, bias}, {n, o, h, w}, std::move(out),
      [x, weight, n, c, h, w, o](std::span<const double> g, Grads gin) {
        const auto xd = x.data();
        const auto wd = weight.data();
        auto* gx = gin[0];
        auto* gw = gin[1];
        auto* gb = gin[2];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t r = 0; r < h; ++r)
              for (std::size_t col = 0; col < w; ++col) {
                const double go = g[((b * o + oc) * h + r) * w + col];
                if (gb) (*gb)[oc] += go;
                for (std::size_t ch = 0; ch < c; ++ch)
                  for (long kr = 0; kr < 3; ++kr)
                    for (long kc = 0; kc < 3; ++kc) {
                      const long rr = static_cast<long>(r) + kr - 1;
                      const long cc = static_cast<long>(col) + kc - 1;
                      if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w))
                        continue;
                      const std::size_t xi = ((b * c + ch) * h + static_cast<std::size_t>(rr)) * w +
                                             static_cast<std::size_t>(cc);
                      const std::size_t wi = oc * c * 9 + ch * 9 + static_cast<std::size_t>(kr * 3 + kc);
                      if (gw) (*gw)[wi] += go * xd[xi];
                      if (gx) (*gx)[xi] += go * wd[wi];
                    }
              }
      });
}

Tensor max_pool_2x2(const Tensor& x) {
  require_rank(x, 4, "max_pool_2x2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("max_pool_2x2: spatial size must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  const auto d = x.data();
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t col = 0; col < ow; ++col) {
        std::size_t best = (p * h + 2 * r) * w + 2 * col;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = (p * h + 2 * r + dr) * w + 2 * col + dc;
            if (d[idx] > d[best]) best = idx;
          }
        const std::size_t k = (p * oh + r) * ow + col;
        out[k] = d[best];
        argmax[k] = best;
      }
  return GradTape::emit("max_pool_2x2", {x}, {n, c, oh, ow}, std::move(out),
                        [argmax = std::move(argmax)](std::span<const double> g, Grads gin) {
                          auto& gx = *gin[0];
                          for (std::size_t k = 0; k < argmax.size(); ++k) gx[argmax[k]] += g[k];
                        });
}

}  // namespace cdis
