#include <cmath>

#include "cdis/error.hpp"
#include "cdis/gradcheck.hpp"
#include "cdis/nn.hpp"
#include "cdis/ops.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cdis;
using cdis::testing::random_tensor;
using cdis::testing::to_vec;

namespace {

ModelConfig small_config(std::size_t in = 10, std::size_t dh = 32, std::size_t d = 16,
                         std::size_t k = 8, std::size_t hidden = 8) {
  ModelConfig cfg;
  cfg.encoder.input_dim = in;
  cfg.encoder.hidden_dims = {12};
  cfg.encoder.output_dim = dh;
  cfg.projector = {dh, hidden, d};
  cfg.predictor = {d, hidden, k};
  return cfg;
}

}  // namespace

TEST_CASE("encoder: output shape and identical rows") {
  CdModel model(small_config(), 1);
  Rng rng(4);
  auto x = random_tensor(rng, {8, 10});
  auto h = model.encode(x);
  CHECK(h.shape() == Shape{8, 32});

  // Rows 0 and 1 identical, train-mode BN included.
  std::vector<double> data(80);
  for (std::size_t i = 0; i < 80; ++i) data[i] = x.data()[i / 10 == 1 ? i - 10 : i];
  auto h2 = model.encode(Tensor({8, 10}, data));
  for (std::size_t j = 0; j < 32; ++j) CHECK(h2.at(0, j) == h2.at(1, j));

  CHECK_THROWS_AS(model.encode(Tensor::zeros({8, 9})), DimensionError);
}

TEST_CASE("encoder: zero-initialized final layer leaves only the bias") {
  CdModel model(small_config(), 1);
  auto& out = model.encoder().output_layer();
  for (auto& w : out.weight.mutable_data()) w = 0.0;
  auto bias = out.bias.mutable_data();
  for (std::size_t j = 0; j < bias.size(); ++j) bias[j] = 0.1 * static_cast<double>(j);
  auto h = model.encode(Tensor::zeros({4, 10}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 32; ++j) CHECK(h.at(i, j) == 0.1 * static_cast<double>(j));
}

TEST_CASE("encoder: conv stem") {
  ModelConfig cfg = small_config(3 * 8 * 8);
  cfg.encoder.use_conv = true;
  cfg.encoder.channels = 3;
  cfg.encoder.height = 8;
  cfg.encoder.width = 8;
  cfg.encoder.hidden_dims = {4, 4};
  CdModel model(cfg, 2);
  Rng rng(8);
  auto x = random_tensor(rng, {3, 3, 8, 8}, 0.0, 1.0);
  CHECK(model.encode(x).shape() == Shape{3, 32});
  CHECK(model.encode(reshape(x, {3, 192})).shape() == Shape{3, 32});

  cfg.encoder.height = 6;
  CHECK_THROWS_AS(CdModel(cfg, 2), ContractError);
}

TEST_CASE("projector and predictor: shapes and ranges") {
  CdModel model(small_config(), 3);
  Rng rng(6);
  auto z = model.project(random_tensor(rng, {8, 32}));
  CHECK(z.shape() == Shape{8, 16});
  auto y = model.predict(z);
  CHECK(y.shape() == Shape{8, 8});
  CHECK_THROWS_AS(model.project(Tensor::zeros({8, 31})), DimensionError);
  CHECK_THROWS_AS(model.predict(Tensor::zeros({8, 15})), DimensionError);

  for (int trial = 0; trial < 1000; ++trial) {
    auto yt = model.predict(random_tensor(rng, {2, 16}, -5.0, 5.0));
    for (double v : yt.data()) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("predictor: zero final pre-activation gives 0.5") {
  CdModel model(small_config(), 3);
  auto& out = model.predictor().output_layer();
  for (auto& w : out.weight.mutable_data()) w = 0.0;
  Rng rng(1);
  auto y = model.predict(random_tensor(rng, {4, 16}));
  for (double v : y.data()) CHECK(v == 0.5);
}

TEST_CASE("eval-mode forward is a pure function of input") {
  CdModel model(small_config(), 5);
  Rng rng(2);
  // Warm up running statistics.
  for (int i = 0; i < 3; ++i) model.project(model.encode(random_tensor(rng, {8, 10})));
  model.set_mode(Mode::eval);
  auto x = random_tensor(rng, {5, 10});
  auto a = model.project(model.encode(x));
  auto b = model.project(model.encode(x));
  CHECK(to_vec(a.data()) == to_vec(b.data()));
  // Single-row batches are fine in eval mode and agree with the batched pass.
  auto row = model.project(model.encode(Tensor({1, 10}, {x.data().begin(), x.data().begin() + 10})));
  for (std::size_t j = 0; j < 16; ++j) CHECK(row.at(0, j) == a.at(0, j));
}

TEST_CASE("batchnorm: normalization, identity and errors") {
  Rng rng(12);
  BatchNorm bn(3);
  auto x = random_tensor(rng, {16, 3}, -20.0, 30.0);
  auto y = bn.forward(x);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += y.at(i, j);
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += (y.at(i, j) - m) * (y.at(i, j) - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
  // Running buffers moved toward the batch statistics and stay non-negative.
  for (double v : bn.running_var.data()) CHECK(v >= 0.0);
  CHECK(bn.running_mean.at(0) != 0.0);

  BatchNorm ident(3);
  ident.mode = Mode::eval;
  ident.eps = 0.0;
  auto e = ident.forward(x);
  CHECK(to_vec(e.data()) == to_vec(x.data()));

  BatchNorm single(3);
  CHECK_THROWS_AS(single.forward(Tensor::zeros({1, 3})), ContractError);
}

TEST_CASE("batchnorm: gradients match finite differences in both modes") {
  Rng rng(21);
  for (Mode mode : {Mode::train, Mode::eval}) {
    BatchNorm bn(4);
    bn.mode = mode;
    auto g = bn.gamma.mutable_data();
    auto b = bn.beta.mutable_data();
    for (std::size_t j = 0; j < 4; ++j) {
      g[j] = 0.5 + 0.3 * static_cast<double>(j);
      b[j] = -0.2 * static_cast<double>(j);
      bn.running_mean.mutable_data()[j] = 0.1 * static_cast<double>(j);
      bn.running_var.mutable_data()[j] = 0.5 + static_cast<double>(j);
    }
    auto w = random_tensor(rng, {5, 4});
    auto f = [&](const Tensor& x) { return sum(mul(bn.forward(x), w)); };
    CHECK(grad_check(f, random_tensor(rng, {5, 4}), 1e-5) < 1e-4);
    Tensor x = random_tensor(rng, {5, 4});
    auto rep = grad_check_parameters([&] { return sum(mul(bn.forward(x), w)); },
                                     {{"gamma", bn.gamma}, {"beta", bn.beta}});
    CHECK(rep.max_error < 1e-4);
  }
}

TEST_CASE("projector: gradient through BN matches finite differences") {
  CdModel model(small_config(), 9);
  Rng rng(10);
  auto h = random_tensor(rng, {6, 32});
  auto w = random_tensor(rng, {6, 16});
  auto rep = grad_check_parameters([&] { return sum(mul(model.project(h), w)); },
                                   model.parameters());
  CHECK(rep.max_error < 1e-4);
  auto f = [&](const Tensor& x) { return sum(mul(model.project(x), w)); };
  CHECK(grad_check(f, h) < 1e-4);
}

TEST_CASE("init_parameters: determinism, seed sensitivity, bounds") {
  auto cfg = small_config();
  CdModel a = init_parameters(42, cfg);
  CdModel b = init_parameters(42, cfg);
  CdModel c = init_parameters(43, cfg);
  auto pa = a.parameters();
  auto pb = b.parameters();
  auto pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(to_vec(pa[i].tensor.data()) == to_vec(pb[i].tensor.data()));
    any_diff = any_diff || to_vec(pa[i].tensor.data()) != to_vec(pc[i].tensor.data());
  }
  CHECK(any_diff);

  for (const auto& p : pa) {
    CAPTURE(p.name);
    const bool is_weight = p.name.ends_with("weight");
    if (is_weight) {
      const double bound = std::sqrt(1.0 / static_cast<double>(p.tensor.dim(0)));
      for (double v : p.tensor.data()) CHECK(std::abs(v) <= bound);
    } else if (p.name.ends_with("bias") || p.name.ends_with("beta")) {
      for (double v : p.tensor.data()) CHECK(v == 0.0);
    } else if (p.name.ends_with("gamma")) {
      for (double v : p.tensor.data()) CHECK(v == 1.0);
    }
  }
}

TEST_CASE("shared parameters: an update through one view changes the other view") {
  CdModel model(small_config(), 7);
  Rng rng(3);
  auto x1 = random_tensor(rng, {4, 10});
  auto x2 = random_tensor(rng, {4, 10});
  auto before = to_vec(model.encode(x2).data());
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    tape.backward(sum(model.encode(x1)));
  }
  for (auto& p : model.parameters()) {
    auto d = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < d.size() && !g.empty(); ++i) d[i] -= 0.1 * g[i];
  }
  CHECK(to_vec(model.encode(x2).data()) != before);
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.predictor.num_features = 1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = small_config();
  cfg.projector.in_dim = 5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = small_config();
  cfg.encoder.hidden_dims = {0};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}
