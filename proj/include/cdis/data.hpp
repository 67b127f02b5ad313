#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cdis/tensor.hpp"

namespace cdis {

/// Layout of one raw sample: an image (C x H x W, planar) or a flat vector.
struct SampleShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;  // vector samples; 0 for images

  static SampleShape vector(std::size_t dim) { return {0, 0, 0, dim}; }
  static SampleShape image(std::size_t c, std::size_t h, std::size_t w) { return {c, h, w, 0}; }

  bool is_image() const { return dim == 0; }
  std::size_t size() const { return is_image() ? channels * height * width : dim; }
  bool operator==(const SampleShape&) const = default;
};

/// Unlabeled samples: the only view of a dataset the training code receives.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(SampleShape shape, std::vector<double> values);

  std::size_t size() const { return count_; }
  const SampleShape& shape() const { return shape_; }
  std::span<const double> sample(std::size_t i) const;
  std::span<const double> values() const { return values_; }

  /// Rows `indices` as an N x size() tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  /// All samples as an N x size() tensor.
  Tensor all() const;

 private:
  SampleShape shape_;
  std::vector<double> values_;
  std::size_t count_ = 0;
};

/// Samples plus ground-truth labels. Labels are for evaluation only; pass
/// `samples` (not the whole dataset) to training.
struct LabeledDataset {
  SampleSet samples;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
  /// Throws ContractError unless labels lie in [0, num_classes) and lengths match.
  void validate() const;
};

/// num_classes isotropic unit-variance Gaussians in `dim` dimensions. Class c
/// is centered at separation * (+/-) e_(c mod dim); classes beyond 2*dim are
/// pushed further out along the same axes. Samples are grouped by class.
LabeledDataset gen_gaussian_mixture(int num_classes, std::size_t n_per_class, std::size_t dim,
                                    double separation, std::uint64_t seed);

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

/// Reads a CIFAR-10 binary batch: 3073-byte records of one label byte and
/// 3072 pixel bytes (R, G, B planes of 32x32, row-major). Pixels map to
/// byte / 255.
LabeledDataset read_cifar_binary(const std::filesystem::path& path);
/// Writes a 3x32x32 dataset (labels 0-9) in the same layout; pixels are
/// rounded to the nearest byte.
void write_cifar_binary(const LabeledDataset& ds, const std::filesystem::path& path);

/// Shuffled, full-size minibatches of sample indices for one epoch. The
/// trailing partial batch is dropped. The order depends only on
/// (shuffle_seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::uint64_t epoch);

}  // namespace cdis
