#include "cdis/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "cdis/error.hpp"

namespace cdis {

namespace {

AxisChoice parse_axis(const std::string& key, const std::string& value) {
  if (value == "both") return AxisChoice::both;
  if (value == "on") return AxisChoice::on;
  if (value == "off") return AxisChoice::off;
  throw ConfigError("config key '" + key + "': expected both, on or off, got '" + value + "'");
}

std::vector<bool> axis_values(AxisChoice c) {
  switch (c) {
    case AxisChoice::on:
      return {true};
    case AxisChoice::off:
      return {false};
    case AxisChoice::both:
      break;
  }
  return {true, false};
}

struct Outcome {
  bool ok = false;
  ClusteringReport backbone, final_output;
  std::string error;
};

Outcome run_one(const RunConfig& rc, const LabeledDataset& data) {
  Outcome o;
  try {
    auto result = train_loop(rc.setup, data.samples);
    o.backbone = evaluate_model(result.state, data, Stage::backbone, rc.kmeans_seed);
    o.final_output = evaluate_model(result.state, data, Stage::final_output, rc.kmeans_seed);
    o.ok = true;
  } catch (const std::exception& e) {
    o.error = e.what();
  }
  return o;
}

std::string csv_safe(std::string s) {
  std::ranges::replace(s, ',', ';');
  std::ranges::replace(s, '\n', ' ');
  return s;
}

}  // namespace

AblationGrid AblationGrid::take_from(ConfigMap& config) {
  AblationGrid g;
  const std::pair<const char*, AxisChoice*> axes[] = {{"ablate.entropy", &g.entropy},
                                                      {"ablate.feature_head", &g.feature_head},
                                                      {"ablate.dual_view", &g.dual_view},
                                                      {"ablate.sched_clip", &g.sched_clip}};
  for (auto [key, slot] : axes) {
    if (auto v = config.get(key)) {
      *slot = parse_axis(key, *v);
      config.erase(key);
    }
  }
  for (const auto& [key, value] : config.entries()) {
    if (key.rfind("ablate.", 0) == 0) throw ConfigError("unknown config key '" + key + "'");
  }
  return g;
}

std::vector<AblationFlags> AblationGrid::cells() const {
  std::vector<AblationFlags> out;
  for (bool ne : axis_values(entropy))
    for (bool fh : axis_values(feature_head))
      for (bool dv : axis_values(dual_view))
        for (bool sc : axis_values(sched_clip)) out.push_back({ne, fh, dv, sc});
  return out;
}

RunConfig apply_ablation(RunConfig rc, const AblationFlags& flags, std::size_t seed_offset) {
  auto& t = rc.setup.train;
  t.use_entropy_loss = flags.entropy;
  t.use_feature_head = flags.feature_head;
  t.dual_view = flags.dual_view;
  t.use_scheduler = flags.sched_clip;
  t.use_clipping = flags.sched_clip;
  t.seed += seed_offset;
  t.seeds = SeedStreams::derive(t.seed);
  return rc;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::ranges::sort(v);
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const LabeledDataset& data,
                                      const AblationGrid& grid, const AblationOptions& options,
                                      const std::function<void(const std::string&)>& progress) {
  if (options.seeds == 0) throw ParameterError("ablation needs at least one seed");
  const auto cells = grid.cells();
  const std::size_t jobs = cells.size() * options.seeds;
  std::vector<Outcome> outcomes(jobs);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs;) {
      const auto& flags = cells[j / options.seeds];
      outcomes[j] = run_one(apply_ablation(base, flags, j % options.seeds), data);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress("cell " + std::to_string(j / options.seeds + 1) + "/" + std::to_string(cells.size()) +
                 " seed " + std::to_string(j % options.seeds) + ": " +
                 (outcomes[j].ok ? "final nmi " + format_double(outcomes[j].final_output.nmi)
                                 : "failed: " + outcomes[j].error));
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(options.threads, 1, jobs);
  std::vector<std::jthread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  pool.clear();

  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    AblationRow row;
    row.flags = cells[c];
    row.seeds = options.seeds;
    std::vector<double> m[6];
    std::string errors;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      const auto& o = outcomes[c * options.seeds + s];
      if (!o.ok) {
        errors += (errors.empty() ? "" : " | ") + ("seed " + std::to_string(s) + ": " + o.error);
        continue;
      }
      ++row.seeds_ok;
      row.final_nmi.push_back(o.final_output.nmi);
      m[0].push_back(o.backbone.nmi);
      m[1].push_back(o.backbone.ari);
      m[2].push_back(o.backbone.acc);
      m[3].push_back(o.final_output.nmi);
      m[4].push_back(o.final_output.ari);
      m[5].push_back(o.final_output.acc);
    }
    row.backbone = {Stage::backbone, median(m[0]), median(m[1]), median(m[2])};
    row.final_output = {Stage::final_output, median(m[3]), median(m[4]), median(m[5])};
    if (!errors.empty()) row.status = csv_safe(errors);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "entropy,feature_head,dual_view,sched_clip,seeds,seeds_ok,"
      "backbone_nmi,backbone_ari,backbone_acc,final_nmi,final_ari,final_acc,status\n";
  auto onoff = [](bool b) { return std::string(b ? "on" : "off"); };
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  for (const auto& r : rows) {
    out += onoff(r.flags.entropy) + "," + onoff(r.flags.feature_head) + "," + onoff(r.flags.dual_view) +
           "," + onoff(r.flags.sched_clip) + "," + std::to_string(r.seeds) + "," +
           std::to_string(r.seeds_ok) + "," + num(r.backbone.nmi) + "," + num(r.backbone.ari) + "," +
           num(r.backbone.acc) + "," + num(r.final_output.nmi) + "," + num(r.final_output.ari) + "," +
           num(r.final_output.acc) + "," + r.status + "\n";
  }
  return out;
}

}  // namespace cdis
