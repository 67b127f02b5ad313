#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cdis/data.hpp"
#include "cdis/tensor.hpp"
#include "cdis/train.hpp"

namespace cdis {

struct ClusterAssignment {
  std::vector<int> assignments;
  int k = 0;
  double inertia = 0.0;  // sum of squared distances to assigned centroids
};

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 300;
  double tolerance = 1e-4;  // largest centroid shift that counts as converged
};

/// One Lloyd run from k-means++ seeds. inertia_trace[i] is the inertia right
/// after the i-th assignment step.
struct LloydRun {
  ClusterAssignment result;
  std::vector<double> inertia_trace;
  int iterations = 0;
};

LloydRun kmeans_single(const Tensor& points, int k, Rng& rng, const KMeansOptions& options = {});

/// Best of options.restarts Lloyd runs by inertia. A cluster that empties
/// is re-seeded at the point farthest from its own centroid. Throws
/// ContractError unless 1 <= k <= number of points.
ClusterAssignment kmeans(const Tensor& points, int k, std::uint64_t seed,
                         const KMeansOptions& options = {});

/// Mutual information over the arithmetic mean of the two entropies; 1 when
/// both partitions have a single cluster.
double nmi(std::span<const int> labels, std::span<const int> preds);
/// Adjusted Rand index from the pair-counting contingency table; 1 in the
/// degenerate case where the index cannot be adjusted. Needs n >= 2.
double ari(std::span<const int> labels, std::span<const int> preds);
/// Fraction of samples matched under the best one-to-one cluster-to-class map.
double acc(std::span<const int> labels, std::span<const int> preds);

/// Minimum-cost perfect matching on a square matrix; result[row] = column.
std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

enum class Stage { backbone, final_output };

std::string stage_name(Stage stage);
/// Throws ConfigError for anything but "backbone" or "final_output".
Stage parse_stage(const std::string& name);

struct ClusteringReport {
  Stage stage = Stage::backbone;
  double nmi = 0.0;
  double ari = 0.0;
  double acc = 0.0;
};

/// Eval-mode embeddings of every sample: encoder output for the backbone
/// stage; predictor output for final_output, or the projection when the run
/// trained without the feature head.
Tensor embed(TrainState& state, const SampleSet& data, Stage stage);

ClusteringReport evaluate_embeddings(const Tensor& embeddings, const LabeledDataset& ds,
                                     Stage stage, std::uint64_t kmeans_seed);
/// k-means with k = ds.num_classes on embed(state, ds.samples, stage).
ClusteringReport evaluate_model(TrainState& state, const LabeledDataset& ds, Stage stage,
                                std::uint64_t kmeans_seed);

/// CSV with header e0,...,e<d-1>,label and one row per sample.
void export_embeddings(TrainState& state, const LabeledDataset& ds, Stage stage,
                       const std::filesystem::path& path);

/// "stage,nmi,ari,acc" followed by one line per report.
std::string report_csv(const std::vector<ClusteringReport>& reports);

}  // namespace cdis
