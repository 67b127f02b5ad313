#include "cdis/nn.hpp"

#include <cmath>

#include "cdis/error.hpp"
#include "cdis/ops.hpp"

namespace cdis {
namespace {

using Grads = std::span<std::vector<double>* const>;

void require_positive(std::size_t v, const char* what) {
  if (v < 1) throw ContractError(std::string(what) + " must be >= 1");
}

std::vector<double> uniform_fan_in(Rng& rng, std::size_t n, std::size_t fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       std::vector<double>& batch_mean, std::vector<double>& batch_var) {
  const std::size_t n = x.dim(0), f = x.dim(1);
  const auto xd = x.data();
  batch_mean.assign(f, 0.0);
  batch_var.assign(f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) batch_mean[j] += xd[i * f + j];
  for (auto& m : batch_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double c = xd[i * f + j] - batch_mean[j];
      batch_var[j] += c * c;
    }
  for (auto& v : batch_var) v /= static_cast<double>(n);

  std::vector<double> inv_std(f);
  for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(batch_var[j] + eps);
  std::vector<double> xhat(n * f);
  std::vector<double> out(n * f);
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = i * f + j;
      xhat[k] = (xd[k] - batch_mean[j]) * inv_std[j];
      out[k] = gd[j] * xhat[k] + bd[j];
    }
  return GradTape::emit(
      "batchnorm", {x, gamma, beta}, x.shape(), std::move(out),
      [gamma, n, f, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, Grads gin) {
        const auto gd = gamma.data();
        if (auto* gg = gin[1]) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) (*gg)[j] += g[i * f + j] * xhat[i * f + j];
        }
        if (auto* gb = gin[2]) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) (*gb)[j] += g[i * f + j];
        }
        if (auto* gx = gin[0]) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t j = 0; j < f; ++j) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double dxhat = g[i * f + j] * gd[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat[i * f + j];
            }
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t k = i * f + j;
              const double dxhat = g[k] * gd[j];
              (*gx)[k] += inv_n * inv_std[j] *
                          (static_cast<double>(n) * dxhat - sum_dxhat - xhat[k] * sum_dxhat_xhat);
            }
          }
        }
      });
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& running_mean, const Tensor& running_var, double eps) {
  const std::size_t n = x.dim(0), f = x.dim(1);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  const auto rm = running_mean.data();
  const auto rv = running_var.data();
  std::vector<double> inv_std(f);
  for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(rv[j] + eps);
  std::vector<double> out(n * f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = i * f + j;
      out[k] = gd[j] * (xd[k] - rm[j]) * inv_std[j] + bd[j];
    }
  return GradTape::emit(
      "batchnorm_eval", {x, gamma, beta}, x.shape(), std::move(out),
      [x, gamma, running_mean, n, f, inv_std = std::move(inv_std)](std::span<const double> g,
                                                                   Grads gin) {
        const auto xd = x.data();
        const auto gd = gamma.data();
        const auto rm = running_mean.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < f; ++j) {
            const std::size_t k = i * f + j;
            if (gin[0]) (*gin[0])[k] += g[k] * gd[j] * inv_std[j];
            if (gin[1]) (*gin[1])[j] += g[k] * (xd[k] - rm[j]) * inv_std[j];
            if (gin[2]) (*gin[2])[j] += g[k];
          }
      });
}

}  // namespace

void EncoderConfig::validate() const {
  require_positive(input_dim, "encoder.input_dim");
  require_positive(output_dim, "encoder.output_dim");
  for (auto d : hidden_dims) require_positive(d, "encoder hidden dim");
  if (use_conv) {
    require_positive(channels, "encoder.channels");
    require_positive(height, "encoder.height");
    require_positive(width, "encoder.width");
    if (channels * height * width != input_dim) {
      throw ContractError("encoder: channels*height*width != input_dim");
    }
    const std::size_t pools = hidden_dims.size();
    if (height % (std::size_t{1} << pools) != 0 || width % (std::size_t{1} << pools) != 0) {
      throw ContractError("encoder: image size must be divisible by 2^(number of conv layers)");
    }
  }
}

void ProjectorConfig::validate() const {
  require_positive(in_dim, "projector.in_dim");
  require_positive(hidden_dim, "projector.hidden_dim");
  require_positive(out_dim, "projector.out_dim");
}

void PredictorConfig::validate() const {
  require_positive(in_dim, "predictor.in_dim");
  require_positive(hidden_dim, "predictor.hidden_dim");
  if (num_features < 2) throw ContractError("predictor.num_features must be >= 2");
}

void ModelConfig::validate() const {
  encoder.validate();
  projector.validate();
  predictor.validate();
  if (projector.in_dim != encoder.output_dim) {
    throw ContractError("projector.in_dim must equal encoder.output_dim");
  }
  if (predictor.in_dim != projector.out_dim) {
    throw ContractError("predictor.in_dim must equal projector.out_dim");
  }
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::parameter({in, out}, uniform_fan_in(rng, in * out, in))),
      bias(Tensor::parameter({1, out}, std::vector<double>(out, 0.0))) {}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  return add_bias(matmul(x, weight), bias);
}

BatchNorm::BatchNorm(std::size_t features)
    : gamma(Tensor::parameter({1, features}, std::vector<double>(features, 1.0))),
      beta(Tensor::parameter({1, features}, std::vector<double>(features, 0.0))),
      running_mean(Tensor::zeros({1, features})),
      running_var(Tensor::full({1, features}, 1.0)) {}

Tensor BatchNorm::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != gamma.numel()) {
    throw DimensionError("batchnorm: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(gamma.numel()) + " features");
  }
  if (mode == Mode::eval) {
    return batchnorm_eval(x, gamma, beta, running_mean, running_var, eps);
  }
  const std::size_t n = x.dim(0);
  if (n < 2) throw ContractError("batchnorm: train mode needs at least 2 rows");
  std::vector<double> mu, var;
  Tensor out = batchnorm_train(x, gamma, beta, eps, mu, var);
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t j = 0; j < rm.size(); ++j) {
    rm[j] = (1.0 - momentum) * rm[j] + momentum * mu[j];
    rv[j] = (1.0 - momentum) * rv[j] + momentum * var[j] * unbias;
  }
  return out;
}

Conv3x3::Conv3x3(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::parameter({out, in * 9}, uniform_fan_in(rng, out * in * 9, in * 9))),
      bias(Tensor::parameter({1, out}, std::vector<double>(out, 0.0))) {}

Tensor Conv3x3::forward(const Tensor& x) const { return conv2d_3x3(x, weight, bias); }

// ---------------------------------------------------------------------------

Encoder::Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.use_conv) {
    std::size_t ch = cfg_.channels, h = cfg_.height, w = cfg_.width;
    for (auto out_ch : cfg_.hidden_dims) {
      convs_.emplace_back(ch, out_ch, rng);
      ch = out_ch;
      h /= 2;
      w /= 2;
    }
    out_ = Linear(ch * h * w, cfg_.output_dim, rng);
  } else {
    std::size_t in = cfg_.input_dim;
    for (auto hidden : cfg_.hidden_dims) {
      fcs_.emplace_back(in, hidden, rng);
      bns_.emplace_back(hidden);
      in = hidden;
    }
    out_ = Linear(in, cfg_.output_dim, rng);
  }
}

Tensor Encoder::forward(const Tensor& x) {
  if (x.rank() == 0 || x.numel() != x.dim(0) * cfg_.input_dim) {
    throw DimensionError("encoder: input " + shape_str(x.shape()) + " does not match input_dim " +
                         std::to_string(cfg_.input_dim));
  }
  const std::size_t n = x.dim(0);
  if (cfg_.use_conv) {
    Tensor a = x.rank() == 4 ? x : reshape(x, {n, cfg_.channels, cfg_.height, cfg_.width});
    if (a.shape() != Shape{n, cfg_.channels, cfg_.height, cfg_.width}) {
      throw DimensionError("encoder: image input " + shape_str(x.shape()) + " has wrong layout");
    }
    for (const auto& conv : convs_) a = max_pool_2x2(relu(conv.forward(a)));
    return out_.forward(reshape(a, {n, a.numel() / n}));
  }
  if (x.rank() != 2) {
    throw DimensionError("encoder: MLP input must be N x input_dim, got " + shape_str(x.shape()));
  }
  Tensor a = x;
  for (std::size_t i = 0; i < fcs_.size(); ++i) a = relu(bns_[i].forward(fcs_[i].forward(a)));
  return out_.forward(a);
}

void Encoder::set_mode(Mode mode) {
  for (auto& bn : bns_) bn.mode = mode;
}

void Encoder::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                      std::vector<NamedTensor>& buffers) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto p = prefix + "conv" + std::to_string(i) + ".";
    params.push_back({p + "weight", convs_[i].weight});
    params.push_back({p + "bias", convs_[i].bias});
  }
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    const auto p = prefix + "fc" + std::to_string(i) + ".";
    params.push_back({p + "weight", fcs_[i].weight});
    params.push_back({p + "bias", fcs_[i].bias});
    const auto b = prefix + "bn" + std::to_string(i) + ".";
    params.push_back({b + "gamma", bns_[i].gamma});
    params.push_back({b + "beta", bns_[i].beta});
    buffers.push_back({b + "running_mean", bns_[i].running_mean});
    buffers.push_back({b + "running_var", bns_[i].running_var});
  }
  params.push_back({prefix + "out.weight", out_.weight});
  params.push_back({prefix + "out.bias", out_.bias});
}

MlpHead::MlpHead(std::size_t in, std::size_t hidden, std::size_t out, bool sigmoid_output,
                 Rng& rng)
    : fc1_(in, hidden, rng), bn_(hidden), fc2_(hidden, out, rng), sigmoid_output_(sigmoid_output) {}

Tensor MlpHead::forward(const Tensor& x) {
  Tensor y = fc2_.forward(relu(bn_.forward(fc1_.forward(x))));
  return sigmoid_output_ ? sigmoid(y) : y;
}

void MlpHead::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                      std::vector<NamedTensor>& buffers) {
  params.push_back({prefix + "fc1.weight", fc1_.weight});
  params.push_back({prefix + "fc1.bias", fc1_.bias});
  params.push_back({prefix + "bn.gamma", bn_.gamma});
  params.push_back({prefix + "bn.beta", bn_.beta});
  params.push_back({prefix + "fc2.weight", fc2_.weight});
  params.push_back({prefix + "fc2.bias", fc2_.bias});
  buffers.push_back({prefix + "bn.running_mean", bn_.running_mean});
  buffers.push_back({prefix + "bn.running_var", bn_.running_var});
}

CdModel::CdModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = Encoder(cfg_.encoder, rng);
  projector_ = MlpHead(cfg_.projector.in_dim, cfg_.projector.hidden_dim, cfg_.projector.out_dim,
                       false, rng);
  predictor_ = MlpHead(cfg_.predictor.in_dim, cfg_.predictor.hidden_dim,
                       cfg_.predictor.num_features, true, rng);
}

void CdModel::set_mode(Mode mode) {
  mode_ = mode;
  encoder_.set_mode(mode);
  projector_.set_mode(mode);
  predictor_.set_mode(mode);
}

std::vector<NamedTensor> CdModel::parameters() {
  std::vector<NamedTensor> params, buffers;
  encoder_.collect("encoder.", params, buffers);
  projector_.collect("projector.", params, buffers);
  predictor_.collect("predictor.", params, buffers);
  return params;
}

std::vector<NamedTensor> CdModel::buffers() {
  std::vector<NamedTensor> params, buffers;
  encoder_.collect("encoder.", params, buffers);
  projector_.collect("projector.", params, buffers);
  predictor_.collect("predictor.", params, buffers);
  return buffers;
}

CdModel init_parameters(std::uint64_t seed, const ModelConfig& cfg) { return CdModel(cfg, seed); }

}  // namespace cdis
