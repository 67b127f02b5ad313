#include <cmath>

#include "cdis/error.hpp"
#include "cdis/gradcheck.hpp"
#include "cdis/losses.hpp"
#include "cdis/ops.hpp"
#include "doctest.h"
#include "loss_oracle.hpp"
#include "loss_properties.hpp"

using namespace cdis;
using namespace cdis::testing;

namespace {

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("PairIndex is a fixed-point-free involution") {
  auto p = PairIndex::halves(5);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(p.pos(p.pos(i)) == i);
    CHECK(p.pos(i) != i);
  }
  CHECK(p.pos(0) == 5);
  CHECK(p.pos(7) == 2);
}

TEST_CASE("concat_instance layout") {
  auto c = concat_instance(Tensor({1, 1}, {2.0}), Tensor({1, 1}, {3.0}));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0, 0) == 2.0);
  CHECK(c.at(1, 0) == 3.0);
  CHECK(PairIndex::halves(1).pos(0) == 1);

  Rng rng(1);
  auto z1 = random_tensor(rng, {4, 3});
  auto z2 = random_tensor(rng, {4, 3});
  auto z = concat_instance(z1, z2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(z.at(i, j) == z1.at(i, j));
      CHECK(z.at(i + 4, j) == z2.at(i, j));
    }
  CHECK_THROWS_AS(concat_instance(z1, Tensor::zeros({3, 3})), DimensionError);
}

TEST_CASE("concat_feature transposes each view") {
  Rng rng(2);
  auto y1 = random_tensor(rng, {3, 2}, 0.1, 0.9);
  auto y2 = random_tensor(rng, {3, 2}, 0.1, 0.9);
  auto y = concat_feature(y1, y2);
  CHECK(y.shape() == Shape{4, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(y.at(0, j) == y1.at(j, 0));
    CHECK(y.at(3, j) == y2.at(j, 1));
  }
  auto same = cosine_similarity_matrix(concat_feature(y1, y1));
  auto pairs = PairIndex::halves(2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same.at(i, pairs.pos(i)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(concat_feature(y1, Tensor::zeros({3, 3})), DimensionError);
}

TEST_CASE("cosine_similarity_matrix") {
  auto s = cosine_similarity_matrix(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(0, 0) == 1.0);

  auto t = cosine_similarity_matrix(Tensor({2, 2}, {1, 1, 1, 0}));
  CHECK(std::abs(t.at(0, 1) - 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(t.at(0, 1) - 0.70711) < 1e-5);

  Rng rng(3);
  auto v = random_tensor(rng, {2, 4});
  auto scaled = v.detach();
  for (std::size_t j = 0; j < 4; ++j) scaled.mutable_data()[j] *= 3.7;
  CHECK(std::abs(cosine_similarity_matrix(v).at(0, 1) - cosine_similarity_matrix(scaled).at(0, 1)) <
        1e-15);

  auto r = random_tensor(rng, {6, 5});
  auto sr = cosine_similarity_matrix(r);
  auto ref = cosine_reference(to_matrix(r));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(std::abs(sr.at(i, j) - ref[i][j]) < 1e-14);
      CHECK(sr.at(i, j) == sr.at(j, i));
      CHECK(sr.at(i, j) <= 1.0 + 1e-15);
      CHECK(sr.at(i, j) >= -1.0 - 1e-15);
    }

  // Feature rows with entries in (0,1) give strictly positive similarities.
  auto f = cosine_similarity_matrix(random_tensor(rng, {4, 5}, 0.01, 0.99));
  for (double x : f.data()) CHECK(x > 0.0);

  CHECK_THROWS_AS(cosine_similarity_matrix(Tensor({2, 2}, {0, 0, 1, 1})), DomainError);
}

TEST_CASE("nt_xent: closed-form cases") {
  // Every pair identical: each term is -log(e^2 / (3 e^2)) = log 3.
  auto ones = Tensor::full({4, 4}, 1.0);
  CHECK(std::abs(nt_xent(ones, PairIndex::halves(2), 0.5).item() - std::log(3.0)) < 1e-10);

  // Single pair: the denominator holds only the positive.
  Rng rng(5);
  auto z1 = random_tensor(rng, {1, 4});
  auto z2 = random_tensor(rng, {1, 4});
  auto sim = cosine_similarity_matrix(concat_instance(z1, z2));
  CHECK(nt_xent(sim, PairIndex::halves(1), 0.5).item() == 0.0);
}

TEST_CASE("nt_xent: agrees with the direct formula") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t half = 1 + rng.uniform_int(6);
    auto rows = random_tensor(rng, {2 * half, 4});
    auto sim = cosine_similarity_matrix(rows);
    for (double tau : {0.1, 0.5, 1.0, 2.0}) {
      const double got = nt_xent(sim, PairIndex::halves(half), tau).item();
      CHECK(std::abs(got - nt_xent_reference(to_matrix(sim), tau)) < 1e-12);
    }
  }
}

TEST_CASE("nt_xent: permuting anchors jointly with pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t half = 2 + rng.uniform_int(4);
    auto sim = cosine_similarity_matrix(random_tensor(rng, {2 * half, 3}));
    // Relabel sample indices within the halves and optionally swap halves.
    auto perm = random_perm(rng, half);
    const bool swap = rng.bernoulli(0.5);
    std::vector<std::size_t> full(2 * half);
    for (std::size_t i = 0; i < half; ++i) {
      full[i] = perm[i] + (swap ? half : 0);
      full[i + half] = perm[i] + (swap ? 0 : half);
    }
    std::vector<double> permuted(sim.numel());
    for (std::size_t i = 0; i < 2 * half; ++i)
      for (std::size_t j = 0; j < 2 * half; ++j)
        permuted[i * 2 * half + j] = sim.at(full[i], full[j]);
    const double a = nt_xent(sim, PairIndex::halves(half), 0.5).item();
    const double b = nt_xent(Tensor(sim.shape(), permuted), PairIndex::halves(half), 0.5).item();
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("nt_xent: every term positive when M > 2") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t half = 2 + rng.uniform_int(5);
    auto sim = cosine_similarity_matrix(random_tensor(rng, {2 * half, 3}));
    for (double term : nt_xent_terms(sim, PairIndex::halves(half), 0.5)) CHECK(term > 0.0);
  }
}

TEST_CASE("nt_xent: errors") {
  auto ones = Tensor::full({4, 4}, 1.0);
  CHECK_THROWS_AS(nt_xent(ones, PairIndex::halves(2), 0.0), ParameterError);
  CHECK_THROWS_AS(nt_xent(ones, PairIndex::halves(2), -1.0), ParameterError);
  CHECK_THROWS_AS(nt_xent(Tensor::full({3, 3}, 1.0), PairIndex{3}, 0.5), DimensionError);
  auto bad = ones.detach();
  bad.mutable_data()[1] = NAN;
  CHECK_THROWS_AS(nt_xent(bad, PairIndex::halves(2), 0.5), NumericError);
}

TEST_CASE("normalized_entropy: reference values") {
  CHECK(std::abs(normalized_entropy(Tensor::full({4, 3}, 0.5)).item() - 1.0) < 1e-12);
  CHECK(normalized_entropy(Tensor::full({4, 3}, kEntropyClamp)).item() < 1e-5);
  CHECK(normalized_entropy(Tensor::full({4, 3}, 0.0)).item() < 1e-5);
  CHECK(normalized_entropy(Tensor::full({4, 3}, 1.0)).item() < 1e-5);

  const double h = normalized_entropy(Tensor({2, 2}, {0.9, 0.1, 0.9, 0.1})).item();
  const double expected =
      -(1.0 / (2.0 * std::log(2.0))) * 2.0 * (0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  CHECK(std::abs(h - expected) < 1e-12);
  CHECK(std::abs(h - 0.4690) < 5e-5);

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto y = random_tensor(rng, {6, 5}, 0.001, 0.999);
    const double v = normalized_entropy(y).item();
    CHECK(std::abs(v - entropy_reference(to_matrix(y))) < 1e-12);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  CHECK_THROWS_AS(normalized_entropy(Tensor({2, 1}, {0.5, 1.5})), DomainError);
  CHECK_THROWS_AS(normalized_entropy(Tensor({2, 1}, {-0.1, 0.5})), DomainError);
}

TEST_CASE("normalized_entropy: zero gradient in the clamped region") {
  auto y = Tensor::parameter({2, 2}, {0.0, 0.3, 1.0, 0.6});
  GradTape tape;
  GradTape::Scope scope(tape);
  tape.backward(normalized_entropy(y));
  CHECK(y.grad()[0] == 0.0);
  CHECK(y.grad()[2] == 0.0);
  CHECK(y.grad()[1] != 0.0);
}

TEST_CASE("total_loss: breakdown identities") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_loss_case(rng);
    const double alpha = rng.uniform(0.0, 2.0);
    auto v = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, alpha).values;
    CHECK(std::abs(v.l_total - (v.l_inst + v.l_feat - alpha * v.l_entropy)) < 1e-12);
    CHECK(v.alpha == alpha);
    CHECK(v.l_inst >= 0.0);
    CHECK(v.l_feat >= 0.0);
    CHECK(v.l_entropy >= 0.0);
    CHECK(v.l_entropy <= 1.0);

    auto zero = total_loss(c.z1, c.z2, c.y1, c.y2, Temperatures{}, 0.0).values;
    CHECK(zero.l_total == zero.l_inst + zero.l_feat);
  }
}

TEST_CASE("total_loss: ablation switches") {
  Rng rng(11);
  auto c = random_loss_case(rng);
  LossOptions opts;
  auto full = total_loss(c.z1, c.z2, c.y1, c.y2, opts).values;

  opts.use_entropy = false;
  auto no_ne = total_loss(c.z1, c.z2, c.y1, c.y2, opts).values;
  CHECK(no_ne.alpha == 0.0);
  CHECK(no_ne.l_total == no_ne.l_inst + no_ne.l_feat);
  CHECK(no_ne.l_entropy == full.l_entropy);

  opts.use_feature_head = false;
  auto inst_only = total_loss(c.z1, c.z2, Tensor(), Tensor(), opts).values;
  CHECK(inst_only.l_total == full.l_inst);
  CHECK(inst_only.l_feat == 0.0);
}

TEST_CASE("total_loss: identical views match the direct formula") {
  Rng rng(12);
  auto z = random_tensor(rng, {4, 5});
  auto y = random_tensor(rng, {4, 3}, 0.05, 0.95);
  auto v = total_loss(z, z, y, y, Temperatures{}, 1.0).values;

  auto zm = to_matrix(z);
  auto sim_z = cosine_reference(stack(zm, zm));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(sim_z[i][i + 4] - 1.0) < 1e-14);
  CHECK(std::abs(v.l_inst - nt_xent_reference(sim_z, 0.5)) < 1e-12);

  auto yt = transpose(to_matrix(y));
  auto sim_y = cosine_reference(stack(yt, yt));
  CHECK(std::abs(v.l_feat - nt_xent_reference(sim_y, 1.0)) < 1e-12);
  CHECK(std::abs(v.l_entropy - entropy_reference(stack(yt, yt))) < 1e-12);
}

TEST_CASE("total_loss: gradients w.r.t. z and y match finite differences") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto c = random_loss_case(rng);
    auto z1 = Tensor::parameter(c.z1.shape(), to_vec(c.z1.data()));
    auto z2 = Tensor::parameter(c.z2.shape(), to_vec(c.z2.data()));
    auto y1 = Tensor::parameter(c.y1.shape(), to_vec(c.y1.data()));
    auto y2 = Tensor::parameter(c.y2.shape(), to_vec(c.y2.data()));
    auto report = grad_check_parameters(
        [&] { return total_loss(z1, z2, y1, y2, Temperatures{}, 1.0).total; },
        {{"z1", z1}, {"z2", z2}, {"y1", y1}, {"y2", y2}});
    CHECK(report.max_error < 1e-4);
  }
}

TEST_CASE("symmetry properties") {
  Rng rng(14);
  CHECK(view_swap_deviation(rng, 100) < 1e-12);
  CHECK(sample_permutation_deviation(rng, 100) < 1e-10);
  CHECK(head_permutation_deviation(rng, 100) < 1e-10);
  CHECK(row_scaling_deviation(rng, 100) < 1e-10);
}
