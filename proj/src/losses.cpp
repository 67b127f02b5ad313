#include "cdis/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdis/error.hpp"
#include "cdis/ops.hpp"

namespace cdis {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": views have shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
}

void check_nt_xent_inputs(const Tensor& sim, const PairIndex& pairs, double tau) {
  if (!(tau > 0.0)) throw ParameterError("nt_xent: temperature must be positive");
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1)) {
    throw DimensionError("nt_xent: similarity matrix must be square, got " +
                         shape_str(sim.shape()));
  }
  const std::size_t m = sim.dim(0);
  if (m < 2 || m % 2 != 0) {
    throw DimensionError("nt_xent: need an even number of anchors, got " + std::to_string(m));
  }
  if (pairs.total != m) {
    throw DimensionError("nt_xent: pair index covers " + std::to_string(pairs.total) +
                         " anchors, matrix has " + std::to_string(m));
  }
  for (double v : sim.data()) {
    if (!std::isfinite(v)) throw NumericError("nt_xent: non-finite similarity");
  }
}

// Row-wise log-sum-exp over k != i of sim(i,k)/tau, with max subtraction.
std::vector<double> masked_lse(std::span<const double> s, std::size_t m, double tau) {
  std::vector<double> lse(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, s[i * m + k] / tau);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) acc += std::exp(s[i * m + k] / tau - mx);
    }
    lse[i] = mx + std::log(acc);
  }
  return lse;
}

}  // namespace

Tensor concat_instance(const Tensor& z1, const Tensor& z2) {
  require_same_shape(z1, z2, "concat_instance");
  return vstack(z1, z2);
}

Tensor concat_feature(const Tensor& y1, const Tensor& y2) {
  require_same_shape(y1, y2, "concat_feature");
  return vstack(transpose(y1), transpose(y2));
}

Tensor cosine_similarity_matrix(const Tensor& rows) {
  Tensor unit = row_l2_normalize(rows);
  return matmul(unit, transpose(unit));
}

std::vector<double> nt_xent_terms(const Tensor& sim, const PairIndex& pairs, double tau) {
  check_nt_xent_inputs(sim, pairs, tau);
  const std::size_t m = sim.dim(0);
  const auto s = sim.data();
  const auto lse = masked_lse(s, m, tau);
  std::vector<double> terms(m);
  for (std::size_t i = 0; i < m; ++i) terms[i] = lse[i] - s[i * m + pairs.pos(i)] / tau;
  return terms;
}

Tensor nt_xent(const Tensor& sim, const PairIndex& pairs, double tau) {
  check_nt_xent_inputs(sim, pairs, tau);
  const std::size_t m = sim.dim(0);
  const auto s = sim.data();
  auto lse = masked_lse(s, m, tau);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total += lse[i] - s[i * m + pairs.pos(i)] / tau;
  const double loss = total / static_cast<double>(m);

  return GradTape::emit(
      "nt_xent", {sim}, {}, {loss},
      [sim, pairs, tau, m, lse = std::move(lse)](std::span<const double> g, auto gin) {
        // d loss / d sim(i,k) = (softmax_i(k) - [k == pos(i)]) / (tau * M), k != i.
        const auto s = sim.data();
        auto& gs = *gin[0];
        const double coef = g[0] / (tau * static_cast<double>(m));
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t p = pairs.pos(i);
          for (std::size_t k = 0; k < m; ++k) {
            if (k == i) continue;
            const double prob = std::exp(s[i * m + k] / tau - lse[i]);
            gs[i * m + k] += coef * (prob - (k == p ? 1.0 : 0.0));
          }
        }
      });
}

Tensor normalized_entropy(const Tensor& y_rows) {
  if (y_rows.rank() != 2 || y_rows.dim(1) == 0 || y_rows.dim(0) == 0) {
    throw DimensionError("normalized_entropy: expected a non-empty matrix, got " +
                         shape_str(y_rows.shape()));
  }
  for (double v : y_rows.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("normalized_entropy: prediction " + std::to_string(v) +
                        " outside [0,1]");
    }
  }
  const double rows = static_cast<double>(y_rows.dim(0));
  const double n = static_cast<double>(y_rows.dim(1));
  Tensor p = clamp(y_rows, kEntropyClamp, 1.0 - kEntropyClamp);
  Tensor q = add_scalar(neg(p), 1.0);
  Tensor plogp = add(mul(p, log(p)), mul(q, log(q)));
  return scale(sum(plogp), -1.0 / (rows * n * std::numbers::ln2));
}

LossTerms total_loss(const Tensor& z1, const Tensor& z2, const Tensor& y1, const Tensor& y2,
                     const Temperatures& temps, double alpha) {
  LossOptions opts;
  opts.temps = temps;
  opts.alpha = alpha;
  return total_loss(z1, z2, y1, y2, opts);
}

LossTerms total_loss(const Tensor& z1, const Tensor& z2, const Tensor& y1, const Tensor& y2,
                     const LossOptions& options) {
  const Tensor z = concat_instance(z1, z2);
  const Tensor inst = nt_xent(cosine_similarity_matrix(z), PairIndex::halves(z1.dim(0)),
                              options.temps.tau_inst);
  LossTerms out;
  out.values.l_inst = inst.item();
  if (!options.use_feature_head) {
    out.total = inst;
    out.values.l_total = inst.item();
    return out;
  }
  const Tensor y = concat_feature(y1, y2);
  const Tensor feat = nt_xent(cosine_similarity_matrix(y), PairIndex::halves(y1.dim(1)),
                              options.temps.tau_feat);
  const Tensor ent = normalized_entropy(y);
  const double alpha = options.use_entropy ? options.alpha : 0.0;
  out.total = add(inst, sub(feat, scale(ent, alpha)));
  out.values.l_feat = feat.item();
  out.values.l_entropy = ent.item();
  out.values.alpha = alpha;
  out.values.l_total = out.total.item();
  return out;
}

}  // namespace cdis
