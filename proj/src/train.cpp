#include "cdis/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "cdis/error.hpp"
#include "cdis/rng.hpp"

namespace cdis {

SeedStreams SeedStreams::derive(std::uint64_t master) {
  return {mix_seed(master ^ 0x696e6974ull),        // "init"
          mix_seed(master ^ 0x6175676d656e74ull),  // "augment"
          mix_seed(master ^ 0x73687566666c65ull)}; // "shuffle"
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("train.epochs must be >= 1");
  if (batch_size < 2) throw ParameterError("train.batch_size must be >= 2");
  if (!(lr > 0.0)) throw ParameterError("train.lr must be > 0");
  if (!(tau_inst > 0.0) || !(tau_feat > 0.0)) throw ParameterError("temperatures must be > 0");
  if (!std::isfinite(alpha)) throw ParameterError("train.alpha must be finite");
  if (!(grad_clip_norm > 0.0)) throw ParameterError("train.grad_clip_norm must be > 0");
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.temps = {tau_inst, tau_feat};
  o.alpha = alpha;
  o.use_feature_head = use_feature_head;
  o.use_entropy = use_entropy_loss;
  return o;
}

void TrainSetup::validate() const {
  model.validate();
  train.validate();
  augment.validate();
}

ConfigMap TrainSetup::to_config() const {
  ConfigMap c;
  const auto& e = model.encoder;
  c.set("model.encoder", e.use_conv ? "conv" : "mlp");
  c.set("model.input_dim", std::to_string(e.input_dim));
  c.set("model.channels", std::to_string(e.channels));
  c.set("model.height", std::to_string(e.height));
  c.set("model.width", std::to_string(e.width));
  c.set("model.hidden_dims", format_size_list(e.hidden_dims));
  c.set("model.feature_dim", std::to_string(e.output_dim));
  c.set("model.projector_hidden", std::to_string(model.projector.hidden_dim));
  c.set("model.projection_dim", std::to_string(model.projector.out_dim));
  c.set("model.predictor_hidden", std::to_string(model.predictor.hidden_dim));
  c.set("model.num_features", std::to_string(model.predictor.num_features));

  const auto& t = train;
  c.set("train.epochs", std::to_string(t.epochs));
  c.set("train.batch_size", std::to_string(t.batch_size));
  c.set("train.lr", format_double(t.lr));
  c.set("train.tau_inst", format_double(t.tau_inst));
  c.set("train.tau_feat", format_double(t.tau_feat));
  c.set("train.alpha", format_double(t.alpha));
  c.set("train.grad_clip_norm", format_double(t.grad_clip_norm));
  c.set("train.use_scheduler", format_bool(t.use_scheduler));
  c.set("train.use_clipping", format_bool(t.use_clipping));
  c.set("train.use_feature_head", format_bool(t.use_feature_head));
  c.set("train.use_entropy_loss", format_bool(t.use_entropy_loss));
  c.set("train.dual_view", format_bool(t.dual_view));
  c.set("seed.master", std::to_string(t.seed));
  c.set("seed.init", std::to_string(t.seeds.init));
  c.set("seed.augment", std::to_string(t.seeds.augment));
  c.set("seed.shuffle", std::to_string(t.seeds.shuffle));

  const auto& a = augment;
  c.set("augment.crop", format_bool(a.crop.enabled));
  c.set("augment.crop_scale_min", format_double(a.crop.scale_min));
  c.set("augment.crop_scale_max", format_double(a.crop.scale_max));
  c.set("augment.hflip_prob", format_double(a.hflip_prob));
  c.set("augment.jitter_brightness", format_double(a.color_jitter.brightness));
  c.set("augment.jitter_contrast", format_double(a.color_jitter.contrast));
  c.set("augment.jitter_saturation", format_double(a.color_jitter.saturation));
  c.set("augment.jitter_prob", format_double(a.color_jitter.apply_prob));
  c.set("augment.grayscale_prob", format_double(a.grayscale_prob));
  c.set("augment.blur", format_bool(a.gaussian_blur.enabled));
  c.set("augment.blur_kernel", std::to_string(a.gaussian_blur.kernel_size));
  c.set("augment.blur_sigma_min", format_double(a.gaussian_blur.sigma_min));
  c.set("augment.blur_sigma_max", format_double(a.gaussian_blur.sigma_max));
  c.set("augment.vector_noise_sigma", format_double(a.vector_noise_sigma));
  c.set("augment.vector_dropout_prob", format_double(a.vector_dropout_prob));
  c.set("augment.seed_stream", std::to_string(a.seed_stream));
  return c;
}

TrainSetup TrainSetup::from_config(ConfigReader& r) {
  TrainSetup s;
  auto& e = s.model.encoder;
  const auto kind = r.get_string("model.encoder", "mlp");
  if (kind != "mlp" && kind != "conv") {
    throw ConfigError("config key 'model.encoder': expected 'mlp' or 'conv', got '" + kind + "'");
  }
  e.use_conv = kind == "conv";
  e.input_dim = r.get_size("model.input_dim", 0);
  e.channels = r.get_size("model.channels", 0);
  e.height = r.get_size("model.height", 0);
  e.width = r.get_size("model.width", 0);
  e.hidden_dims = r.get_size_list("model.hidden_dims", {});
  e.output_dim = r.get_size("model.feature_dim", 0);
  s.model.projector.in_dim = e.output_dim;
  s.model.projector.hidden_dim = r.get_size("model.projector_hidden", 0);
  s.model.projector.out_dim = r.get_size("model.projection_dim", 0);
  s.model.predictor.in_dim = s.model.projector.out_dim;
  s.model.predictor.hidden_dim = r.get_size("model.predictor_hidden", 0);
  s.model.predictor.num_features = r.get_size("model.num_features", 0);

  auto& t = s.train;
  t.epochs = r.get_size("train.epochs", t.epochs);
  t.batch_size = r.get_size("train.batch_size", t.batch_size);
  t.lr = r.get_double("train.lr", t.lr);
  t.tau_inst = r.get_double("train.tau_inst", t.tau_inst);
  t.tau_feat = r.get_double("train.tau_feat", t.tau_feat);
  t.alpha = r.get_double("train.alpha", t.alpha);
  t.grad_clip_norm = r.get_double("train.grad_clip_norm", t.grad_clip_norm);
  t.use_scheduler = r.get_bool("train.use_scheduler", t.use_scheduler);
  t.use_clipping = r.get_bool("train.use_clipping", t.use_clipping);
  t.use_feature_head = r.get_bool("train.use_feature_head", t.use_feature_head);
  t.use_entropy_loss = r.get_bool("train.use_entropy_loss", t.use_entropy_loss);
  t.dual_view = r.get_bool("train.dual_view", t.dual_view);
  t.seed = r.get_u64("seed.master", t.seed);
  const auto derived = SeedStreams::derive(t.seed);
  t.seeds.init = r.get_u64("seed.init", derived.init);
  t.seeds.augment = r.get_u64("seed.augment", derived.augment);
  t.seeds.shuffle = r.get_u64("seed.shuffle", derived.shuffle);

  auto& a = s.augment;
  a.crop.enabled = r.get_bool("augment.crop", a.crop.enabled);
  a.crop.scale_min = r.get_double("augment.crop_scale_min", a.crop.scale_min);
  a.crop.scale_max = r.get_double("augment.crop_scale_max", a.crop.scale_max);
  a.hflip_prob = r.get_double("augment.hflip_prob", a.hflip_prob);
  a.color_jitter.brightness = r.get_double("augment.jitter_brightness", a.color_jitter.brightness);
  a.color_jitter.contrast = r.get_double("augment.jitter_contrast", a.color_jitter.contrast);
  a.color_jitter.saturation = r.get_double("augment.jitter_saturation", a.color_jitter.saturation);
  a.color_jitter.apply_prob = r.get_double("augment.jitter_prob", a.color_jitter.apply_prob);
  a.grayscale_prob = r.get_double("augment.grayscale_prob", a.grayscale_prob);
  a.gaussian_blur.enabled = r.get_bool("augment.blur", a.gaussian_blur.enabled);
  a.gaussian_blur.kernel_size = r.get_size("augment.blur_kernel", a.gaussian_blur.kernel_size);
  a.gaussian_blur.sigma_min = r.get_double("augment.blur_sigma_min", a.gaussian_blur.sigma_min);
  a.gaussian_blur.sigma_max = r.get_double("augment.blur_sigma_max", a.gaussian_blur.sigma_max);
  a.vector_noise_sigma = r.get_double("augment.vector_noise_sigma", a.vector_noise_sigma);
  a.vector_dropout_prob = r.get_double("augment.vector_dropout_prob", a.vector_dropout_prob);
  a.seed_stream = r.get_u64("augment.seed_stream", a.seed_stream);
  return s;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

namespace {

void check_finite_gradients(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
    }
  }
}

}  // namespace

double clip_gradients(std::span<NamedTensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ParameterError("clip norm must be > 0");
  check_finite_gradients(params);
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params)
    for (double& g : p.tensor.mutable_grad()) g *= factor;
  return factor;
}

AdamState AdamState::for_parameters(std::span<const NamedTensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<NamedTensor> params, AdamState& state, double lr) {
  if (!(lr >= 0.0)) throw ParameterError("learning rate must be >= 0");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  bool any = false;
  for (const auto& p : params) any = any || p.tensor.has_grad();
  if (!any) throw ContractError("adam step without gradients; run backward first");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ContractError("adam state shape mismatch for " + params[i].name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

namespace {

std::string step_context(std::size_t epoch, std::size_t step) {
  return "epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1) + ": ";
}

const TrainSetup& validated(const TrainSetup& s) {
  s.validate();
  return s;
}

}  // namespace

TrainState::TrainState(TrainSetup s)
    : setup(std::move(s)), model(validated(setup).model, setup.train.seeds.init) {
  adam = AdamState::for_parameters(model.parameters());
}

TrainState::TrainState(TrainSetup s, CdModel m, AdamState a)
    : setup(std::move(s)), model(std::move(m)), adam(std::move(a)) {}

std::size_t batches_per_epoch(const TrainSetup& setup, const SampleSet& data) {
  if (setup.train.batch_size > data.size()) {
    throw ContractError("batch size " + std::to_string(setup.train.batch_size) +
                        " exceeds dataset size " + std::to_string(data.size()));
  }
  return data.size() / setup.train.batch_size;
}

std::vector<EpochRecord> run_epochs(TrainState& state, const SampleSet& data, std::size_t epochs,
                                    const StepCallback& on_step) {
  const TrainConfig& cfg = state.setup.train;
  if (state.epoch + epochs > cfg.epochs) {
    throw ContractError("cannot run " + std::to_string(epochs) + " epochs after " +
                        std::to_string(state.epoch) + " of " + std::to_string(cfg.epochs));
  }
  if (data.shape().size() != state.setup.model.encoder.input_dim) {
    throw DimensionError("dataset samples have " + std::to_string(data.shape().size()) +
                         " values, model expects " +
                         std::to_string(state.setup.model.encoder.input_dim));
  }
  const std::size_t per_epoch = batches_per_epoch(state.setup, data);
  const std::size_t total_steps = cfg.epochs * per_epoch;
  const ViewPolicy views =
      cfg.dual_view ? dual_view(state.setup.augment) : single_view_mode(state.setup.augment);
  const LossOptions loss_opts = cfg.loss_options();
  auto params = state.model.parameters();
  state.model.set_mode(Mode::train);

  std::vector<EpochRecord> log;
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = state.epoch;
    const auto batches = epoch_batches(data.size(), cfg.batch_size, cfg.seeds.shuffle, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor x = data.gather(batches[b]);
      Rng aug_rng({cfg.seeds.augment, state.setup.augment.seed_stream, epoch, b});
      const ViewPair pair = make_views(x, data.shape(), views, aug_rng);
      for (auto& p : params) p.tensor.zero_grad();

      LossBreakdown values;
      try {
        GradTape tape;
        LossTerms terms;
        {
          GradTape::Scope scope(tape);
          const Tensor z1 = state.model.project(state.model.encode(pair.x1));
          const Tensor z2 = state.model.project(state.model.encode(pair.x2));
          Tensor y1, y2;
          if (cfg.use_feature_head) {
            y1 = state.model.predict(z1);
            y2 = state.model.predict(z2);
          }
          terms = total_loss(z1, z2, y1, y2, loss_opts);
        }
        values = terms.values;
        if (!std::isfinite(values.l_total) || !std::isfinite(values.l_inst) ||
            !std::isfinite(values.l_feat) || !std::isfinite(values.l_entropy)) {
          throw NumericError("non-finite loss");
        }
        tape.backward(terms.total);
        if (cfg.use_clipping) {
          clip_gradients(params, cfg.grad_clip_norm);
        } else {
          check_finite_gradients(params);
        }
      } catch (const NumericError& err) {
        throw NumericError(step_context(epoch, state.step) + err.what());
      } catch (const DomainError& err) {
        throw DomainError(step_context(epoch, state.step) + err.what());
      }

      state.step += 1;
      const double lr = cfg.use_scheduler ? cosine_lr(state.step, total_steps, cfg.lr) : cfg.lr;
      adam_step(params, state.adam, lr);

      rec.mean.l_inst += values.l_inst;
      rec.mean.l_feat += values.l_feat;
      rec.mean.l_entropy += values.l_entropy;
      rec.mean.alpha += values.alpha;
      rec.mean.l_total += values.l_total;
      rec.lr = lr;
      if (on_step) on_step({epoch + 1, state.step, lr, values});
    }
    const double n = static_cast<double>(batches.size());
    rec.mean.l_inst /= n;
    rec.mean.l_feat /= n;
    rec.mean.l_entropy /= n;
    rec.mean.alpha /= n;
    rec.mean.l_total /= n;
    state.epoch += 1;
    log.push_back(rec);
  }
  return log;
}

TrainResult train_loop(const TrainSetup& setup, const SampleSet& data,
                       const StepCallback& on_step) {
  TrainResult result{TrainState(setup), {}};
  result.log = run_epochs(result.state, data, setup.train.epochs, on_step);
  return result;
}

std::string loss_csv(const std::vector<EpochRecord>& log) {
  std::string out = "epoch,l_inst,l_feat,l_entropy,l_total,lr\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + format_double(r.mean.l_inst) + "," +
           format_double(r.mean.l_feat) + "," + format_double(r.mean.l_entropy) + "," +
           format_double(r.mean.l_total) + "," + format_double(r.lr) + "\n";
  }
  return out;
}

void write_loss_csv(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << loss_csv(log);
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace cdis
