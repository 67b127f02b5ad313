#pragma once

#include <cstdint>
#include <span>

#include "cdis/data.hpp"
#include "cdis/rng.hpp"
#include "cdis/tensor.hpp"

namespace cdis {

/// Random resized crop. The output keeps the input resolution.
struct CropPolicy {
  bool enabled = false;
  double scale_min = 0.08;  // fraction of the image area
  double scale_max = 1.0;
};

struct ColorJitterPolicy {
  double brightness = 0.0;  // factors drawn from [1-s, 1+s]
  double contrast = 0.0;
  double saturation = 0.0;
  double apply_prob = 0.0;
};

struct BlurPolicy {
  bool enabled = false;
  std::size_t kernel_size = 3;  // odd
  double sigma_min = 0.1;
  double sigma_max = 2.0;
};

struct AugmentPolicy {
  CropPolicy crop;
  double hflip_prob = 0.0;
  ColorJitterPolicy color_jitter;
  double grayscale_prob = 0.0;
  BlurPolicy gaussian_blur;
  // Vector samples only.
  double vector_noise_sigma = 0.0;
  double vector_dropout_prob = 0.0;
  // Salt for the augmentation stream, kept apart from parameter init.
  std::uint64_t seed_stream = 0;

  /// Throws ParameterError on probabilities outside [0,1], a scale range
  /// outside (0,1], negative strengths or an even blur kernel.
  void validate() const;

  /// Every transform disabled.
  static AugmentPolicy identity() { return {}; }
  /// Crop, flip, jitter and grayscale in the usual contrastive strengths.
  static AugmentPolicy image_default();
  /// Noise plus coordinate dropout for vector data.
  static AugmentPolicy vector_default();
};

/// Pipelines for the two views.
struct ViewPolicy {
  AugmentPolicy first;
  AugmentPolicy second;
};

ViewPolicy dual_view(const AugmentPolicy& policy);
/// View 1 passes through untouched; view 2 follows `policy`.
ViewPolicy single_view_mode(const AugmentPolicy& policy);

struct ViewPair {
  Tensor x1;
  Tensor x2;
};

/// Augments each row of `batch` (N x shape.size()) twice. View 1 for every
/// sample is drawn before view 2, all from `rng`. Image pixels are clamped
/// to [0,1]; vector samples are not clamped.
ViewPair make_views(const Tensor& batch, const SampleShape& shape, const ViewPolicy& policy,
                    Rng& rng);

/// Augments a single sample in place.
void augment_sample(std::span<double> sample, const SampleShape& shape,
                    const AugmentPolicy& policy, Rng& rng);

// Individual transforms on one planar C x H x W image.
void hflip(std::span<double> image, const SampleShape& shape);
void to_grayscale(std::span<double> image, const SampleShape& shape);
void gaussian_blur(std::span<double> image, const SampleShape& shape, std::size_t kernel_size,
                   double sigma);

}  // namespace cdis
