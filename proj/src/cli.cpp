#include "cdis/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cdis/ablate.hpp"
#include "cdis/error.hpp"
#include "cdis/losses.hpp"
#include "cdis/nn.hpp"
#include "cdis/run_config.hpp"
#include "cdis/tensor.hpp"
#include "cdis/train.hpp"

namespace cdis {

namespace fs = std::filesystem;

namespace {

constexpr const char* kResolvedName = "config.resolved";
constexpr const char* kCheckpointName = "checkpoint.bin";
constexpr const char* kLossName = "loss.csv";
constexpr const char* kReportName = "report.csv";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& extras) {
  return resolve_config(apply_overrides(ConfigMap::load(path), parse_overrides(extras)));
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Restores the backward rules when the check ends, however it ends.
struct FaultGuard {
  FaultGuard(const std::string& op, double factor) {
    if (!op.empty()) debug::inject_backward_fault(op, factor);
  }
  ~FaultGuard() { debug::clear_backward_fault(); }
  FaultGuard(const FaultGuard&) = delete;
  FaultGuard& operator=(const FaultGuard&) = delete;
};

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor({rows, cols}, std::move(v));
}

// Vectors from a Gaussian mixture pushed through a fixed random linear map
// and a sigmoid, so each class gets its own image statistics.
LabeledDataset synthetic_images(const LabeledDataset& latent, std::uint64_t seed) {
  const std::size_t d = latent.samples.shape().size();
  Rng rng({seed, 0x696d67ULL});
  std::vector<double> w(d * kCifarPixels);
  for (auto& x : w) x = rng.normal() / std::sqrt(static_cast<double>(d));
  std::vector<double> pixels(latent.size() * kCifarPixels);
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const auto z = latent.samples.sample(i);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      double a = 0.0;
      for (std::size_t j = 0; j < d; ++j) a += z[j] * w[j * kCifarPixels + p];
      pixels[i * kCifarPixels + p] = 1.0 / (1.0 + std::exp(-a));
    }
  }
  return {SampleSet(SampleShape::image(3, kCifarSide, kCifarSide), std::move(pixels)), latent.labels,
          latent.num_classes};
}

void write_vector_csv(const LabeledDataset& ds, const fs::path& path) {
  const std::size_t d = ds.samples.shape().size();
  std::string text;
  for (std::size_t j = 0; j < d; ++j) text += "x" + std::to_string(j) + ",";
  text += "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.samples.sample(i)) text += format_double(v) + ",";
    text += std::to_string(ds.labels[i]) + "\n";
  }
  write_text(path, text);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& extras, std::ostream& out) {
  const RunConfig rc = load_run_config(config_path, extras);
  const auto data = rc.data.load();
  const fs::path dir(rc.output_dir);
  ensure_dir(dir);
  write_text(dir / kResolvedName, rc.to_config().serialize());

  TrainState state(rc.setup);
  const std::size_t epochs = rc.setup.train.epochs;
  const std::size_t every = std::max<std::size_t>(1, epochs / 10);
  std::vector<EpochRecord> log;
  out << "training " << epochs << " epochs, " << batches_per_epoch(rc.setup, data.samples)
      << " steps each, on " << data.size() << " samples\n";
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto rec = run_epochs(state, data.samples, 1);
    log.insert(log.end(), rec.begin(), rec.end());
    const auto& r = log.back();
    if (r.epoch % every == 0 || r.epoch == epochs) {
      out << "epoch " << r.epoch << " loss " << fixed(r.mean.l_total) << " (inst " << fixed(r.mean.l_inst)
          << ", feat " << fixed(r.mean.l_feat) << ", entropy " << fixed(r.mean.l_entropy) << ") lr "
          << format_double(r.lr) << "\n";
    }
  }
  save_checkpoint(state, dir / kCheckpointName);
  write_loss_csv(log, dir / kLossName);
  out << "wrote " << (dir / kResolvedName).string() << ", " << (dir / kCheckpointName).string() << ", "
      << (dir / kLossName).string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string stages;
  std::string report;
  std::string export_dir;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& extras, std::ostream& out) {
  const fs::path ckpt(a.checkpoint);
  TrainState state = load_checkpoint(ckpt);
  const std::string config =
      a.config.empty() ? (ckpt.parent_path() / kResolvedName).string() : a.config;
  const RunConfig rc = load_run_config(config, extras);
  const auto stages = a.stages.empty() ? rc.stages : parse_stage_list(a.stages);
  const auto data = rc.data.load();

  std::vector<ClusteringReport> reports;
  for (Stage s : stages) {
    reports.push_back(evaluate_model(state, data, s, rc.kmeans_seed));
    const auto& r = reports.back();
    out << stage_name(s) << ": nmi " << fixed(r.nmi) << " ari " << fixed(r.ari) << " acc " << fixed(r.acc)
        << "\n";
  }
  const fs::path report = a.report.empty() ? ckpt.parent_path() / kReportName : fs::path(a.report);
  ensure_dir(report.parent_path());
  write_text(report, report_csv(reports));
  out << "wrote " << report.string() << "\n";
  if (!a.export_dir.empty()) {
    ensure_dir(a.export_dir);
    for (Stage s : stages) {
      const auto path = fs::path(a.export_dir) / ("embeddings_" + stage_name(s) + ".csv");
      export_embeddings(state, data, s, path);
      out << "wrote " << path.string() << "\n";
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const GradCheckSpec& spec, double threshold, const std::string& fault, double factor,
                  std::ostream& out) {
  GradCheckReport report;
  {
    FaultGuard guard(fault, factor);
    report = full_stack_grad_check(spec);
  }
  out << "gradcheck N=" << spec.batch << " K=" << spec.features << " d=" << spec.dim
      << (spec.conv ? " conv" : " mlp") << " eps=" << format_double(spec.eps) << "\n";
  for (const auto& p : report.params) {
    out << "  " << p.name << " " << format_double(p.max_error) << "\n";
  }
  const bool pass = report.max_error < threshold;
  out << (pass ? "PASS" : "FAIL") << ": max relative error " << format_double(report.max_error)
      << " in " << report.worst_param << " (threshold " << format_double(threshold) << ")\n";
  return pass ? kExitOk : kExitNumeric;
}

struct AblateArgs {
  std::string config;
  std::size_t seeds = 5;
  std::size_t threads = 1;
  std::string out;
};

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& extras, std::ostream& out,
               std::ostream& err) {
  ConfigMap raw = apply_overrides(ConfigMap::load(a.config), parse_overrides(extras));
  const auto grid = AblationGrid::take_from(raw);
  const RunConfig base = resolve_config(raw);
  const auto data = base.data.load();
  const auto rows = run_ablation(base, data, grid, {a.seeds, a.threads},
                                 [&](const std::string& line) { err << line << "\n"; });
  const fs::path path = a.out.empty() ? fs::path(base.output_dir) / "ablation.csv" : fs::path(a.out);
  ensure_dir(path.parent_path());
  const auto csv = ablation_csv(rows);
  write_text(path, csv);
  out << csv << "wrote " << path.string() << "\n";
  const bool all_ok = std::ranges::all_of(rows, [](const auto& r) { return r.seeds_ok == r.seeds; });
  return all_ok ? kExitOk : kExitNumeric;
}

struct GendataArgs {
  std::string out;
  std::string format = "csv";
  int classes = 4;
  std::size_t per_class = 256;
  std::size_t dim = 16;
  double separation = 4.0;
  std::uint64_t seed = 0;
};

int cmd_gendata(const GendataArgs& a, std::ostream& out) {
  const auto latent = gen_gaussian_mixture(a.classes, a.per_class, a.dim, a.separation, a.seed);
  const fs::path path(a.out);
  ensure_dir(path.parent_path());
  if (a.format == "cifar") {
    if (a.classes > 10) throw ParameterError("cifar format holds at most 10 classes");
    write_cifar_binary(synthetic_images(latent, a.seed), path);
  } else {
    write_vector_csv(latent, path);
  }
  out << "wrote " << latent.size() << " samples to " << path.string() << "\n";
  return kExitOk;
}

}  // namespace

GradCheckReport full_stack_grad_check(const GradCheckSpec& spec) {
  if (spec.batch < 2 || spec.batch > 6 || spec.features < 1 || spec.features > 6 || spec.dim < 1) {
    throw ParameterError("gradcheck needs 2 <= N <= 6, 1 <= K <= 6 and d >= 1");
  }
  ModelConfig cfg;
  auto& e = cfg.encoder;
  if (spec.conv) {
    e.use_conv = true;
    e.channels = 2;
    e.height = 4;
    e.width = 4;
    e.input_dim = 32;
    e.hidden_dims = {3};
  } else {
    e.input_dim = 5;
    e.hidden_dims = {6};
  }
  e.output_dim = 6;
  cfg.projector = {6, 6, spec.dim};
  cfg.predictor = {spec.dim, 6, spec.features};
  CdModel model(cfg, spec.seed);
  Rng rng({spec.seed, 0x6763ULL});
  const Tensor x1 = random_matrix(rng, spec.batch, e.input_dim);
  const Tensor x2 = random_matrix(rng, spec.batch, e.input_dim);
  const LossOptions options;
  auto loss = [&] {
    const Tensor z1 = model.project(model.encode(x1));
    const Tensor z2 = model.project(model.encode(x2));
    return total_loss(z1, z2, model.predict(z1), model.predict(z2), options).total;
  };
  return grad_check_parameters(loss, model.parameters(), spec.eps);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive deep clustering: train, evaluate, check gradients, ablate, generate data",
               "cdis"};
  app.require_subcommand(1);

  std::string train_config;
  auto* train = app.add_subcommand("train", "Train from a config file; overrides follow as --section.key value");
  train->add_option("config", train_config, "Config file")->required();
  train->allow_extras();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Cluster a checkpoint's embeddings and report NMI, ARI and ACC");
  eval->add_option("checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", eval_args.config, "Run config (default: config.resolved beside the checkpoint)");
  eval->add_option("--stages", eval_args.stages, "Comma-separated: backbone,final_output");
  eval->add_option("--report", eval_args.report, "Report CSV (default: report.csv beside the checkpoint)");
  eval->add_option("--export", eval_args.export_dir, "Directory for per-stage embedding CSVs");
  eval->allow_extras();

  GradCheckSpec gc;
  double gc_threshold = 1e-4;
  std::string gc_fault;
  double gc_factor = 2.0;
  auto* grad = app.add_subcommand("gradcheck", "Check model gradients of the total loss against finite differences");
  grad->add_option("--batch", gc.batch, "Batch size N")->capture_default_str();
  grad->add_option("--features", gc.features, "Feature heads K")->capture_default_str();
  grad->add_option("--dim", gc.dim, "Projection width d")->capture_default_str();
  grad->add_option("--seed", gc.seed, "Model and batch seed")->capture_default_str();
  grad->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  grad->add_option("--threshold", gc_threshold, "Largest accepted relative error")->capture_default_str();
  grad->add_flag("--conv", gc.conv, "Use the conv encoder");
  grad->add_option("--fault", gc_fault, "Scale the backward rule of this op (harness self-test)");
  grad->add_option("--fault-factor", gc_factor, "Scale used by --fault")->capture_default_str();

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate over the ablation flag grid");
  ablate->add_option("config", ab.config, "Config file; ablate.* keys select the grid")->required();
  ablate->add_option("--seeds", ab.seeds, "Seeds per cell")->capture_default_str();
  ablate->add_option("--threads", ab.threads, "Cells trained concurrently")->capture_default_str();
  ablate->add_option("--out", ab.out, "CSV path (default: <output.dir>/ablation.csv)");
  ablate->allow_extras();

  GendataArgs gd;
  auto* gendata = app.add_subcommand("gendata", "Write a synthetic Gaussian-mixture dataset");
  gendata->add_option("--out", gd.out, "Output file")->required();
  gendata->add_option("--format", gd.format, "csv or cifar")
      ->check(CLI::IsMember({"csv", "cifar"}))
      ->capture_default_str();
  gendata->add_option("--classes", gd.classes)->capture_default_str();
  gendata->add_option("--per-class", gd.per_class)->capture_default_str();
  gendata->add_option("--dim", gd.dim, "Latent dimension")->capture_default_str();
  gendata->add_option("--separation", gd.separation)->capture_default_str();
  gendata->add_option("--seed", gd.seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_config, train->remaining(), out);
    if (*eval) return cmd_eval(eval_args, eval->remaining(), out);
    if (*grad) return cmd_gradcheck(gc, gc_threshold, gc_fault, gc_factor, out);
    if (*ablate) return cmd_ablate(ab, ablate->remaining(), out, err);
    if (*gendata) return cmd_gendata(gd, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cdis
