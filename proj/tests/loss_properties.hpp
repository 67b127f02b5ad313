#pragma once

// Randomized symmetry checks for the loss terms. Each function runs `trials`
// random cases and returns the largest deviation it observed, so unit tests
// and the acceptance suite can apply their own thresholds.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdis/losses.hpp"
#include "cdis/rng.hpp"
#include "test_support.hpp"

namespace cdis::testing {

struct LossCase {
  Tensor z1, z2, y1, y2;
  std::size_t n = 0, d = 0, k = 0;
};

inline LossCase random_loss_case(Rng& rng, std::size_t max_dim = 6) {
  LossCase c;
  c.n = 2 + rng.uniform_int(max_dim - 1);
  c.d = 2 + rng.uniform_int(max_dim - 1);
  c.k = 2 + rng.uniform_int(max_dim - 1);
  c.z1 = random_tensor(rng, {c.n, c.d});
  c.z2 = random_tensor(rng, {c.n, c.d});
  c.y1 = random_tensor(rng, {c.n, c.k}, 0.02, 0.98);
  c.y2 = random_tensor(rng, {c.n, c.k}, 0.02, 0.98);
  return c;
}

inline Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t cols = t.dim(1);
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = t.at(perm[i], j);
  return Tensor(t.shape(), std::move(out));
}

inline Tensor permute_cols(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = t.at(i, perm[j]);
  return Tensor(t.shape(), std::move(out));
}

inline std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(p));
  return p;
}

inline double breakdown_diff(const LossBreakdown& a, const LossBreakdown& b) {
  return std::max({std::abs(a.l_inst - b.l_inst), std::abs(a.l_feat - b.l_feat),
                   std::abs(a.l_entropy - b.l_entropy), std::abs(a.l_total - b.l_total)});
}

/// Swapping (z1, y1) with (z2, y2): every component unchanged.
inline double view_swap_deviation(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto c = random_loss_case(rng);
    auto a = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, 1.0).values;
    auto b = total_loss(c.z2, c.z1, c.y2, c.y1, Temperatures{}, 1.0).values;
    worst = std::max(worst, breakdown_diff(a, b));
  }
  return worst;
}

/// Same permutation of samples in both views: every component unchanged.
inline double sample_permutation_deviation(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto c = random_loss_case(rng);
    auto perm = random_perm(rng, c.n);
    auto a = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, 1.0).values;
    auto b = total_loss(permute_rows(c.z1, perm), permute_rows(c.z2, perm),
                        permute_rows(c.y1, perm), permute_rows(c.y2, perm), Temperatures{}, 1.0)
                 .values;
    worst = std::max(worst, breakdown_diff(a, b));
  }
  return worst;
}

/// Same permutation of feature heads in both views: L_feat and L_entropy unchanged.
inline double head_permutation_deviation(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto c = random_loss_case(rng);
    auto perm = random_perm(rng, c.k);
    auto a = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, 1.0).values;
    auto b = total_loss(c.z1, c.z2, permute_cols(c.y1, perm), permute_cols(c.y2, perm),
                        Temperatures{}, 1.0)
                 .values;
    worst = std::max({worst, std::abs(a.l_feat - b.l_feat), std::abs(a.l_entropy - b.l_entropy)});
  }
  return worst;
}

/// Multiplying one row of z by a positive scalar: L_inst unchanged.
inline double row_scaling_deviation(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto c = random_loss_case(rng);
    const std::size_t row = rng.uniform_int(c.n);
    const double factor = std::exp(rng.uniform(-3.0, 3.0));
    Tensor scaled = c.z1.detach();
    auto data = scaled.mutable_data();
    for (std::size_t j = 0; j < c.d; ++j) data[row * c.d + j] *= factor;
    auto a = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, 1.0).values;
    auto b = total_loss(scaled, c.z2, c.y1, c.y2, Temperatures{}, 1.0).values;
    worst = std::max(worst, std::abs(a.l_inst - b.l_inst));
  }
  return worst;
}

}  // namespace cdis::testing
