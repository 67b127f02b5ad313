#pragma once

#include <vector>

#include "cdis/tensor.hpp"

namespace cdis {

/// Positive-pair map for a stack of two views: anchor i < half pairs with
/// i + half and vice versa.
struct PairIndex {
  std::size_t total = 0;

  static PairIndex halves(std::size_t half) { return PairIndex{2 * half}; }
  std::size_t half() const { return total / 2; }
  std::size_t pos(std::size_t i) const { return i < half() ? i + half() : i - half(); }
};

struct Temperatures {
  double tau_inst = 0.5;
  double tau_feat = 1.0;
};

struct LossBreakdown {
  double l_inst = 0.0;
  double l_feat = 0.0;
  double l_entropy = 0.0;
  double alpha = 0.0;
  double l_total = 0.0;
};

/// Differentiable scalar terms plus their values.
struct LossTerms {
  Tensor total;
  LossBreakdown values;
};

/// Which terms enter the objective. Disabling the feature head leaves only
/// the instance loss; disabling the entropy term keeps L_feat.
struct LossOptions {
  Temperatures temps;
  double alpha = 1.0;
  bool use_feature_head = true;
  bool use_entropy = true;
};

/// [z1; z2] as a 2N x d matrix; pairs with PairIndex::halves(N).
Tensor concat_instance(const Tensor& z1, const Tensor& z2);
/// [y1^T; y2^T] as a 2K x N matrix; row i < K is head i over the batch.
Tensor concat_feature(const Tensor& y1, const Tensor& y2);

/// Cosine similarity between every pair of rows.
Tensor cosine_similarity_matrix(const Tensor& rows);

/// Mean over all M anchors of -log softmax of the positive similarity
/// against every other row (self excluded), at temperature tau.
Tensor nt_xent(const Tensor& sim, const PairIndex& pairs, double tau);
/// Per-anchor terms of nt_xent, not differentiated.
std::vector<double> nt_xent_terms(const Tensor& sim, const PairIndex& pairs, double tau);

/// Lower bound applied to predictions (and 1 - predictions) before the logs.
inline constexpr double kEntropyClamp = 1e-7;

/// Mean per-row binary entropy, in bits, of a matrix with entries in [0,1].
Tensor normalized_entropy(const Tensor& y_rows);

/// L_total = L_inst + (L_feat - alpha * L_entropy).
LossTerms total_loss(const Tensor& z1, const Tensor& z2, const Tensor& y1, const Tensor& y2,
                     const Temperatures& temps, double alpha);
/// As above, honoring the ablation switches. y1/y2 are ignored when the
/// feature head is disabled. With use_entropy off, l_entropy is still
/// reported and alpha is recorded as 0.
LossTerms total_loss(const Tensor& z1, const Tensor& z2, const Tensor& y1, const Tensor& y2,
                     const LossOptions& options);

}  // namespace cdis
