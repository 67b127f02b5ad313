#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdis/config.hpp"
#include "cdis/data.hpp"
#include "cdis/eval.hpp"
#include "cdis/train.hpp"

namespace cdis {

/// Where the samples come from: a generated Gaussian mixture or a CIFAR-10
/// binary file.
struct DataSpec {
  std::string source = "mixture";  // mixture | cifar
  int classes = 4;
  std::size_t per_class = 256;
  std::size_t dim = 16;
  double separation = 4.0;
  std::uint64_t seed = 0;
  std::string path;  // cifar only

  SampleShape shape() const;
  LabeledDataset load() const;
};

/// Everything a CLI run needs. A resolved RunConfig has every value
/// explicit, so persisting and resolving it again is a fixpoint.
struct RunConfig {
  TrainSetup setup;
  DataSpec data;
  std::string output_dir = "run";
  std::vector<Stage> stages{Stage::backbone, Stage::final_output};
  std::uint64_t kmeans_seed = 0;

  ConfigMap to_config() const;
};

/// Applies defaults, derives the model input shape from the data spec, turns
/// the zero placeholders for model.projector_hidden, model.predictor_hidden
/// and model.num_features into the batch size, fills unset seed streams from
/// seed.master and validates. Unknown keys are a ConfigError naming the key.
RunConfig resolve_config(const ConfigMap& raw);

/// Comma-separated stage names; ConfigError if empty or unknown.
std::vector<Stage> parse_stage_list(const std::string& text);

/// `--section.key value` / `--section.key=value` pairs. A few short aliases
/// are accepted: --epochs, --seed, --lr, --batch-size, --out.
ConfigMap parse_overrides(const std::vector<std::string>& args);

/// Overrides replace file values. Overriding seed.master also drops the
/// file's explicit seed streams so they follow the new master, unless the
/// overrides set them too.
ConfigMap apply_overrides(ConfigMap file, const ConfigMap& overrides);

}  // namespace cdis
