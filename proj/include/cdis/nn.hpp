#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdis/rng.hpp"
#include "cdis/tensor.hpp"

namespace cdis {

enum class Mode { train, eval };

/// Backbone f. Vector data uses an MLP (Linear -> BN -> ReLU per hidden
/// layer, then Linear). Image data uses a conv stem: per hidden entry a 3x3
/// conv with that many channels, ReLU and 2x2 max pooling; then a Linear.
struct EncoderConfig {
  std::size_t input_dim = 0;  // flattened sample size
  bool use_conv = false;
  std::size_t channels = 0;  // conv stem only: C x H x W == input_dim
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;  // d_h

  void validate() const;
};

/// Instance projector g: Linear -> BN -> ReLU -> Linear.
struct ProjectorConfig {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t out_dim = 0;  // d

  void validate() const;
};

/// Feature predictor: Linear -> BN -> ReLU -> Linear -> sigmoid, K outputs.
struct PredictorConfig {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_features = 0;  // K

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  ProjectorConfig projector;
  PredictorConfig predictor;

  /// Validates each part and that the stages chain (d_h -> g, d -> predictor).
  void validate() const;
};

/// Dense layer y = x W + b with W stored as [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

/// Per-feature batch normalization over the rows of an N x F input.
struct BatchNorm {
  Tensor gamma;          // 1 x F
  Tensor beta;           // 1 x F
  Tensor running_mean;   // 1 x F buffer
  Tensor running_var;    // 1 x F buffer
  double momentum = 0.1;
  double eps = 1e-5;
  Mode mode = Mode::train;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t features);

  /// Train mode normalizes with batch statistics (N >= 2) and updates the
  /// running buffers; eval mode uses the buffers and is a fixed affine map.
  Tensor forward(const Tensor& x);
};

struct Conv3x3 {
  Tensor weight;  // out x (in * 9)
  Tensor bias;    // 1 x out

  Conv3x3() = default;
  Conv3x3(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig cfg, Rng& rng);

  /// x: N x input_dim, or N x C x H x W for the conv stem.
  Tensor forward(const Tensor& x);
  void set_mode(Mode mode);
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

  const EncoderConfig& config() const { return cfg_; }
  Linear& output_layer() { return out_; }

 private:
  EncoderConfig cfg_;
  std::vector<Linear> fcs_;
  std::vector<BatchNorm> bns_;
  std::vector<Conv3x3> convs_;
  Linear out_;
};

/// Two linear layers with BN and ReLU between them; optional sigmoid output.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden, std::size_t out, bool sigmoid_output, Rng& rng);

  Tensor forward(const Tensor& x);
  void set_mode(Mode mode) { bn_.mode = mode; }
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

  std::size_t in_dim() const { return fc1_.weight.dim(0); }
  Linear& output_layer() { return fc2_; }

 private:
  Linear fc1_;
  BatchNorm bn_;
  Linear fc2_;
  bool sigmoid_output_ = false;
};

/// Encoder, instance projector and feature predictor with shared parameters
/// for both views. Parameters are drawn deterministically from `seed`.
class CdModel {
 public:
  CdModel(ModelConfig cfg, std::uint64_t seed);
  // Copies would alias the parameter storage.
  CdModel(const CdModel&) = delete;
  CdModel& operator=(const CdModel&) = delete;
  CdModel(CdModel&&) = default;
  CdModel& operator=(CdModel&&) = default;

  Tensor encode(const Tensor& x) { return encoder_.forward(x); }
  Tensor project(const Tensor& h) { return projector_.forward(h); }
  Tensor predict(const Tensor& z) { return predictor_.forward(z); }

  void set_mode(Mode mode);
  Mode mode() const { return mode_; }

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  MlpHead& projector() { return projector_; }
  MlpHead& predictor() { return predictor_; }

  /// Learnable tensors in a fixed order with stable dotted names.
  std::vector<NamedTensor> parameters();
  /// BN running statistics.
  std::vector<NamedTensor> buffers();

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  MlpHead projector_;
  MlpHead predictor_;
  Mode mode_ = Mode::train;
};

/// Same as constructing CdModel(cfg, seed).
CdModel init_parameters(std::uint64_t seed, const ModelConfig& cfg);

}  // namespace cdis
