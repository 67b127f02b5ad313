#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cdis/eval.hpp"
#include "cdis/run_config.hpp"

namespace cdis {

/// Which values of one ablation axis to run.
enum class AxisChoice { both, on, off };

struct AblationFlags {
  bool entropy = true;       // normalized entropy term
  bool feature_head = true;  // feature predictor and its losses
  bool dual_view = true;     // augment both views
  bool sched_clip = true;    // cosine schedule and gradient clipping together
};

/// Keys ablate.entropy, ablate.feature_head, ablate.dual_view and
/// ablate.sched_clip, each both|on|off (default both).
struct AblationGrid {
  AxisChoice entropy = AxisChoice::both;
  AxisChoice feature_head = AxisChoice::both;
  AxisChoice dual_view = AxisChoice::both;
  AxisChoice sched_clip = AxisChoice::both;

  /// Reads and removes the ablate.* keys from `config`.
  static AblationGrid take_from(ConfigMap& config);
  /// Cartesian product, "on" before "off" on every axis.
  std::vector<AblationFlags> cells() const;
};

/// Copy of `base` with the flags applied and the master seed offset by
/// `seed_offset`; the seed streams are re-derived from the new master.
RunConfig apply_ablation(RunConfig base, const AblationFlags& flags, std::size_t seed_offset);

struct AblationRow {
  AblationFlags flags;
  std::size_t seeds = 0;     // requested
  std::size_t seeds_ok = 0;  // finished without error
  ClusteringReport backbone{Stage::backbone};
  ClusteringReport final_output{Stage::final_output};  // medians over the finished seeds
  std::vector<double> final_nmi;  // per finished seed, in seed order
  std::string status = "ok";
};

struct AblationOptions {
  std::size_t seeds = 5;
  std::size_t threads = 1;
};

/// Trains and evaluates every (cell, seed) pair on the same data. Seed s of
/// every cell uses master seed base + s. A failing pair is recorded in its
/// row's status and does not stop the grid. Results do not depend on
/// `threads`.
std::vector<AblationRow> run_ablation(const RunConfig& base, const LabeledDataset& data,
                                      const AblationGrid& grid, const AblationOptions& options,
                                      const std::function<void(const std::string&)>& progress = {});

/// Header: entropy,feature_head,dual_view,sched_clip,seeds,seeds_ok,
/// backbone_nmi,backbone_ari,backbone_acc,final_nmi,final_ari,final_acc,status
std::string ablation_csv(const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

}  // namespace cdis
