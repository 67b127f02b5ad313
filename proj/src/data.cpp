#include "cdis/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cdis/error.hpp"
#include "cdis/rng.hpp"

namespace cdis {

SampleSet::SampleSet(SampleShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  const std::size_t per = shape_.size();
  if (per == 0) throw ContractError("sample shape has zero size");
  if (values_.size() % per != 0) {
    throw ContractError("sample buffer of " + std::to_string(values_.size()) +
                        " values is not a multiple of the sample size " + std::to_string(per));
  }
  count_ = values_.size() / per;
}

std::span<const double> SampleSet::sample(std::size_t i) const {
  if (i >= count_) throw ContractError("sample index " + std::to_string(i) + " out of range");
  const std::size_t per = shape_.size();
  return std::span<const double>(values_).subspan(i * per, per);
}

Tensor SampleSet::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = shape_.size();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto i : indices) {
    auto s = sample(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return Tensor({indices.size(), per}, std::move(out));
}

Tensor SampleSet::all() const { return Tensor({count_, shape_.size()}, values_); }

void LabeledDataset::validate() const {
  if (labels.size() != samples.size()) {
    throw ContractError("dataset has " + std::to_string(samples.size()) + " samples but " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw ContractError("label " + std::to_string(l) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset gen_gaussian_mixture(int num_classes, std::size_t n_per_class, std::size_t dim,
                                    double separation, std::uint64_t seed) {
  if (num_classes < 1 || n_per_class < 1 || dim < 1 || separation < 0.0) {
    throw ContractError("gen_gaussian_mixture: arguments must be positive");
  }
  Rng rng(seed);
  const auto classes = static_cast<std::size_t>(num_classes);
  std::vector<double> values;
  values.reserve(classes * n_per_class * dim);
  std::vector<int> labels;
  labels.reserve(classes * n_per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t axis = c % dim;
    const double sign = (c / dim) % 2 == 0 ? 1.0 : -1.0;
    const double radius = separation * static_cast<double>(1 + c / (2 * dim));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        values.push_back(rng.normal() + (j == axis ? sign * radius : 0.0));
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  LabeledDataset ds{SampleSet(SampleShape::vector(dim), std::move(values)), std::move(labels),
                    num_classes};
  return ds;
}

LabeledDataset read_cifar_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::size_t records = bytes.size() / kCifarRecord;
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("truncated CIFAR record at byte offset " +
                      std::to_string(records * kCifarRecord) + " in " + path.string());
  }
  std::vector<double> values;
  values.reserve(records * kCifarPixels);
  std::vector<int> labels;
  labels.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecord;
    const int label = bytes[off];
    if (label > 9) {
      throw FormatError("CIFAR label " + std::to_string(label) + " > 9 at byte offset " +
                        std::to_string(off));
    }
    labels.push_back(label);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      values.push_back(static_cast<double>(bytes[off + 1 + p]) / 255.0);
    }
  }
  return LabeledDataset{
      SampleSet(SampleShape::image(3, kCifarSide, kCifarSide), std::move(values)),
      std::move(labels), 10};
}

void write_cifar_binary(const LabeledDataset& ds, const std::filesystem::path& path) {
  if (ds.samples.shape() != SampleShape::image(3, kCifarSide, kCifarSide)) {
    throw ContractError("write_cifar_binary: samples must be 3x32x32 images");
  }
  std::vector<char> bytes;
  bytes.reserve(ds.size() * kCifarRecord);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels.at(i) < 0 || ds.labels[i] > 9) {
      throw ContractError("write_cifar_binary: label " + std::to_string(ds.labels[i]) +
                          " does not fit the format");
    }
    bytes.push_back(static_cast<char>(ds.labels[i]));
    for (double v : ds.samples.sample(i)) {
      const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0 || batch_size > dataset_size) {
    throw ContractError("batch size " + std::to_string(batch_size) +
                        " must be in [1, dataset size " + std::to_string(dataset_size) + "]");
  }
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng({shuffle_seed, epoch});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + batch_size <= dataset_size; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

}  // namespace cdis
