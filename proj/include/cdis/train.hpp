#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdis/augment.hpp"
#include "cdis/config.hpp"
#include "cdis/data.hpp"
#include "cdis/losses.hpp"
#include "cdis/nn.hpp"

namespace cdis {

inline constexpr std::uint64_t kDefaultSeed = 42;

/// Seeds of the three independent random streams.
struct SeedStreams {
  std::uint64_t init = 0;
  std::uint64_t augment = 0;
  std::uint64_t shuffle = 0;

  static SeedStreams derive(std::uint64_t master);
  bool operator==(const SeedStreams&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 128;
  double lr = 3e-4;
  double tau_inst = 0.5;
  double tau_feat = 1.0;
  double alpha = 1.0;
  double grad_clip_norm = 1.0;
  bool use_scheduler = true;
  bool use_clipping = true;
  bool use_feature_head = true;
  bool use_entropy_loss = true;
  bool dual_view = true;
  std::uint64_t seed = kDefaultSeed;
  SeedStreams seeds = SeedStreams::derive(kDefaultSeed);

  /// Throws ParameterError on lr <= 0, epochs or batch size of 0, a
  /// non-positive temperature or clip norm.
  void validate() const;
  LossOptions loss_options() const;
};

/// Everything that determines a training run apart from the data.
struct TrainSetup {
  ModelConfig model;
  TrainConfig train;
  AugmentPolicy augment;

  void validate() const;
  /// `model.*`, `train.*`, `seed.*` and `augment.*` keys, all explicit.
  ConfigMap to_config() const;
  /// Reads the same keys; absent keys keep their defaults.
  static TrainSetup from_config(ConfigReader& reader);
};

/// 0.5 * base_lr * (1 + cos(pi * step / total_steps)) for step in [0, total_steps].
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

/// Scales all gradients by max_norm / g when their global L2 norm g exceeds
/// max_norm and returns the factor applied (1 when untouched). Parameters
/// without a gradient are skipped.
double clip_gradients(std::span<NamedTensor> params, double max_norm);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_parameters(std::span<const NamedTensor> params);
};

/// One bias-corrected Adam update. Parameters without a gradient are left
/// alone; a step with no gradients at all is a ContractError.
void adam_step(std::span<NamedTensor> params, AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown mean;     // averaged over the epoch's steps
  double lr = 0.0;        // rate used by the epoch's last step
};

/// Complete, resumable training state.
struct TrainState {
  TrainSetup setup;
  CdModel model;
  AdamState adam;
  std::size_t epoch = 0;  // epochs completed
  std::size_t step = 0;   // optimizer steps taken

  explicit TrainState(TrainSetup setup);
  TrainState(TrainSetup setup, CdModel model, AdamState adam);
};

struct StepInfo {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global
  double lr = 0.0;
  LossBreakdown loss;
};

using StepCallback = std::function<void(const StepInfo&)>;

/// Trains `epochs` more epochs. Batch order depends on (seeds.shuffle, epoch)
/// and augmentation on (seeds.augment, seed_stream, epoch, batch), so a run
/// split across calls or processes matches an uninterrupted one bit for bit.
/// A non-finite loss or gradient aborts with a NumericError that names the
/// epoch and step.
std::vector<EpochRecord> run_epochs(TrainState& state, const SampleSet& data, std::size_t epochs,
                                    const StepCallback& on_step = {});

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> log;
};

/// Fresh state trained for setup.train.epochs epochs.
TrainResult train_loop(const TrainSetup& setup, const SampleSet& data,
                       const StepCallback& on_step = {});

std::size_t batches_per_epoch(const TrainSetup& setup, const SampleSet& data);

void write_loss_csv(const std::vector<EpochRecord>& log, const std::filesystem::path& path);
std::string loss_csv(const std::vector<EpochRecord>& log);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(TrainState& state);
/// Throws VersionError for an unknown version, FormatError for bad magic or
/// inconsistent lengths, ChecksumError when the trailing CRC-32 disagrees.
TrainState decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace cdis
