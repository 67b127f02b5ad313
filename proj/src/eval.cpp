#include "cdis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "cdis/config.hpp"
#include "cdis/error.hpp"
#include "cdis/rng.hpp"

namespace cdis {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

std::vector<double> plus_plus_seeds(const double* x, std::size_t m, std::size_t d, std::size_t k,
                                    Rng& rng) {
  std::vector<double> c(k * d);
  std::size_t first = rng.uniform_int(m);
  std::copy(x + first * d, x + (first + 1) * d, c.begin());
  std::vector<double> best(m);
  for (std::size_t i = 0; i < m; ++i) best[i] = sq_dist(x + i * d, c.data(), d);
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (double b : best) total += b;
    std::size_t pick = m - 1;
    if (total > 0.0) {
      // rounding fallback: the last point with positive weight
      while (best[pick] == 0.0) --pick;
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < m; ++i) {
        r -= best[i];
        if (r < 0.0 && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(m);
    }
    std::copy(x + pick * d, x + (pick + 1) * d, c.begin() + static_cast<std::ptrdiff_t>(j * d));
    for (std::size_t i = 0; i < m; ++i)
      best[i] = std::min(best[i], sq_dist(x + i * d, c.data() + j * d, d));
  }
  return c;
}

void check_points(const Tensor& points, int k) {
  if (points.rank() != 2) throw DimensionError("kmeans expects an M x D matrix");
  if (k < 1 || static_cast<std::size_t>(k) > points.dim(0)) {
    throw ContractError("kmeans: k = " + std::to_string(k) + " needs 1 <= k <= M = " +
                        std::to_string(points.dim(0)));
  }
}

// Compact ids in order of first appearance; returns the cluster count.
std::size_t compact(std::span<const int> ids, std::vector<std::size_t>& out) {
  std::map<int, std::size_t> index;
  out.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index.emplace(ids[i], index.size()).first;
    out[i] = it->second;
  }
  return index.size();
}

struct Contingency {
  std::size_t n = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> cell;  // rows x cols
  std::vector<std::size_t> row_sum, col_sum;
};

Contingency contingency(std::span<const int> labels, std::span<const int> preds,
                        std::size_t min_n, const char* what) {
  if (labels.size() != preds.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(labels.size()) + " labels vs " +
                        std::to_string(preds.size()) + " predictions");
  }
  if (labels.size() < min_n) {
    throw ContractError(std::string(what) + " needs at least " + std::to_string(min_n) + " samples");
  }
  std::vector<std::size_t> u, v;
  Contingency c;
  c.n = labels.size();
  c.rows = compact(labels, u);
  c.cols = compact(preds, v);
  c.cell.assign(c.rows * c.cols, 0);
  c.row_sum.assign(c.rows, 0);
  c.col_sum.assign(c.cols, 0);
  for (std::size_t i = 0; i < c.n; ++i) {
    ++c.cell[u[i] * c.cols + v[i]];
    ++c.row_sum[u[i]];
    ++c.col_sum[v[i]];
  }
  return c;
}

// Sum after sorting, so the result does not depend on label order.
double ordered_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

double entropy(const std::vector<std::size_t>& counts, double n) {
  std::vector<double> terms;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    terms.push_back(-p * std::log(p));
  }
  return ordered_sum(std::move(terms));
}

__int128 choose2(std::size_t n) {
  const auto v = static_cast<__int128>(n);
  return v * (v - 1) / 2;
}

}  // namespace

LloydRun kmeans_single(const Tensor& points, int k, Rng& rng, const KMeansOptions& options) {
  check_points(points, k);
  const std::size_t m = points.dim(0), d = points.dim(1), kk = static_cast<std::size_t>(k);
  const double* x = points.data().data();
  std::vector<double> c = plus_plus_seeds(x, m, d, kk, rng);
  std::vector<int> assign(m, 0);
  std::vector<double> dist(m, 0.0);
  LloydRun run;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t j = 0; j < kk; ++j) {
        const double s = sq_dist(x + i * d, c.data() + j * d, d);
        if (s < best) {
          best = s;
          arg = static_cast<int>(j);
        }
      }
      assign[i] = arg;
      dist[i] = best;
      inertia += best;
    }
    run.inertia_trace.push_back(inertia);
    run.iterations = iter + 1;

    std::vector<double> next(kk * d, 0.0);
    std::vector<std::size_t> count(kk, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto j = static_cast<std::size_t>(assign[i]);
      ++count[j];
      for (std::size_t t = 0; t < d; ++t) next[j * d + t] += x[i * d + t];
    }
    for (std::size_t j = 0; j < kk; ++j) {
      if (count[j] != 0) continue;
      // Re-seed at the point worst served by its centroid, taken from a
      // cluster that keeps at least one member (one exists since k <= M).
      std::size_t far = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (count[static_cast<std::size_t>(assign[i])] < 2) continue;
        if (far == m || dist[i] > dist[far]) far = i;
      }
      const auto old = static_cast<std::size_t>(assign[far]);
      --count[old];
      for (std::size_t t = 0; t < d; ++t) next[old * d + t] -= x[far * d + t];
      assign[far] = static_cast<int>(j);
      dist[far] = 0.0;
      count[j] = 1;
      for (std::size_t t = 0; t < d; ++t) next[j * d + t] = x[far * d + t];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < kk; ++j) {
      for (std::size_t t = 0; t < d; ++t) next[j * d + t] /= static_cast<double>(count[j]);
      shift = std::max(shift, std::sqrt(sq_dist(next.data() + j * d, c.data() + j * d, d)));
    }
    c = std::move(next);
    if (shift < options.tolerance) break;
  }

  run.result.k = k;
  run.result.assignments = assign;
  double inertia = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    inertia += sq_dist(x + i * d, c.data() + static_cast<std::size_t>(assign[i]) * d, d);
  run.result.inertia = inertia;
  return run;
}

ClusterAssignment kmeans(const Tensor& points, int k, std::uint64_t seed,
                         const KMeansOptions& options) {
  check_points(points, k);
  if (options.restarts < 1) throw ParameterError("kmeans needs at least one restart");
  ClusterAssignment best;
  for (int r = 0; r < options.restarts; ++r) {
    Rng rng({seed, static_cast<std::uint64_t>(r)});
    auto run = kmeans_single(points, k, rng, options);
    if (r == 0 || run.result.inertia < best.inertia) best = std::move(run.result);
  }
  return best;
}

double nmi(std::span<const int> labels, std::span<const int> preds) {
  const auto c = contingency(labels, preds, 1, "nmi");
  const double n = static_cast<double>(c.n);
  const double hu = entropy(c.row_sum, n);
  const double hv = entropy(c.col_sum, n);
  if (c.rows == 1 && c.cols == 1) return 1.0;
  if (hu == 0.0 || hv == 0.0) return 0.0;
  std::vector<double> terms;
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) {
      const auto nij = c.cell[i * c.cols + j];
      if (nij == 0) continue;
      const double p = static_cast<double>(nij) / n;
      terms.push_back(p * std::log(n * static_cast<double>(nij) /
                                   (static_cast<double>(c.row_sum[i]) *
                                    static_cast<double>(c.col_sum[j]))));
    }
  const double mi = ordered_sum(std::move(terms));
  return std::clamp(mi / (0.5 * (hu + hv)), 0.0, 1.0);
}

double ari(std::span<const int> labels, std::span<const int> preds) {
  const auto c = contingency(labels, preds, 2, "ari");
  __int128 index = 0, a = 0, b = 0;
  for (auto v : c.cell) index += choose2(v);
  for (auto v : c.row_sum) a += choose2(v);
  for (auto v : c.col_sum) b += choose2(v);
  const __int128 pairs = choose2(c.n);
  // (index - a b / P) / ((a + b) / 2 - a b / P), scaled by 2P to stay integral.
  const __int128 num = 2 * (index * pairs - a * b);
  const __int128 den = (a + b) * pairs - 2 * a * b;
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  for (const auto& row : cost)
    if (row.size() != n) throw DimensionError("hungarian: cost matrix must be square");
  if (n == 0) return {};
  // Potentials formulation, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

double acc(std::span<const int> labels, std::span<const int> preds) {
  const auto c = contingency(labels, preds, 1, "acc");
  const std::size_t s = std::max(c.rows, c.cols);
  // Rows are predicted clusters, columns classes; padding cells are zero.
  std::vector<std::vector<double>> cost(s, std::vector<double>(s, 0.0));
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j)
      cost[j][i] = -static_cast<double>(c.cell[i * c.cols + j]);
  const auto match = hungarian_min_cost(cost);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < s; ++r) {
    if (r < c.cols && match[r] < c.rows) hit += c.cell[match[r] * c.cols + r];
  }
  return static_cast<double>(hit) / static_cast<double>(c.n);
}

std::string stage_name(Stage stage) {
  return stage == Stage::backbone ? "backbone" : "final_output";
}

Stage parse_stage(const std::string& name) {
  if (name == "backbone") return Stage::backbone;
  if (name == "final_output") return Stage::final_output;
  throw ConfigError("unknown evaluation stage '" + name + "' (expected backbone or final_output)");
}

Tensor embed(TrainState& state, const SampleSet& data, Stage stage) {
  if (data.shape().size() != state.setup.model.encoder.input_dim) {
    throw DimensionError("dataset samples have " + std::to_string(data.shape().size()) +
                         " values, model expects " +
                         std::to_string(state.setup.model.encoder.input_dim));
  }
  CdModel& model = state.model;
  const Mode previous = model.mode();
  model.set_mode(Mode::eval);
  constexpr std::size_t kChunk = 256;
  std::vector<double> out;
  std::size_t width = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + kChunk, data.size()); ++i) idx.push_back(i);
    Tensor e = model.encode(data.gather(idx));
    if (stage == Stage::final_output) {
      e = model.project(e);
      if (state.setup.train.use_feature_head) e = model.predict(e);
    }
    width = e.dim(1);
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  model.set_mode(previous);
  return Tensor({data.size(), width}, std::move(out));
}

ClusteringReport evaluate_embeddings(const Tensor& embeddings, const LabeledDataset& ds,
                                     Stage stage, std::uint64_t kmeans_seed) {
  ds.validate();
  if (embeddings.rank() != 2 || embeddings.dim(0) != ds.size()) {
    throw DimensionError("embeddings " + shape_str(embeddings.shape()) + " do not cover " +
                         std::to_string(ds.size()) + " samples");
  }
  const auto clusters = kmeans(embeddings, ds.num_classes, kmeans_seed);
  ClusteringReport r;
  r.stage = stage;
  r.nmi = nmi(ds.labels, clusters.assignments);
  r.ari = ari(ds.labels, clusters.assignments);
  r.acc = acc(ds.labels, clusters.assignments);
  return r;
}

ClusteringReport evaluate_model(TrainState& state, const LabeledDataset& ds, Stage stage,
                                std::uint64_t kmeans_seed) {
  return evaluate_embeddings(embed(state, ds.samples, stage), ds, stage, kmeans_seed);
}

void export_embeddings(TrainState& state, const LabeledDataset& ds, Stage stage,
                       const std::filesystem::path& path) {
  ds.validate();
  const Tensor e = embed(state, ds.samples, stage);
  const std::size_t d = e.dim(1);
  std::string text;
  for (std::size_t j = 0; j < d; ++j) text += "e" + std::to_string(j) + ",";
  text += "label\n";
  for (std::size_t i = 0; i < e.dim(0); ++i) {
    for (std::size_t j = 0; j < d; ++j) text += format_double(e.at(i, j)) + ",";
    text += std::to_string(ds.labels[i]) + "\n";
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string report_csv(const std::vector<ClusteringReport>& reports) {
  std::string out = "stage,nmi,ari,acc\n";
  for (const auto& r : reports) {
    out += stage_name(r.stage) + "," + format_double(r.nmi) + "," + format_double(r.ari) + "," +
           format_double(r.acc) + "\n";
  }
  return out;
}

}  // namespace cdis
