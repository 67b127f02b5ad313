#include "cdis/run_config.hpp"

#include <algorithm>
#include <map>

#include "cdis/error.hpp"

namespace cdis {

SampleShape DataSpec::shape() const {
  if (source == "mixture") return SampleShape::vector(dim);
  if (source == "cifar") return SampleShape::image(3, kCifarSide, kCifarSide);
  throw ConfigError("config key 'data.source': expected 'mixture' or 'cifar', got '" + source + "'");
}

LabeledDataset DataSpec::load() const {
  if (source == "cifar") {
    if (path.empty()) throw ConfigError("config key 'data.path' is required for cifar data");
    auto ds = read_cifar_binary(path);
    // k for clustering follows the labels in the file, not the format's 10.
    if (!ds.labels.empty()) ds.num_classes = *std::ranges::max_element(ds.labels) + 1;
    return ds;
  }
  shape();
  return gen_gaussian_mixture(classes, per_class, dim, separation, seed);
}

ConfigMap RunConfig::to_config() const {
  ConfigMap c = setup.to_config();
  c.set("data.source", data.source);
  c.set("data.classes", std::to_string(data.classes));
  c.set("data.per_class", std::to_string(data.per_class));
  c.set("data.dim", std::to_string(data.dim));
  c.set("data.separation", format_double(data.separation));
  c.set("data.seed", std::to_string(data.seed));
  c.set("data.path", data.path);
  c.set("output.dir", output_dir);
  std::string names;
  for (std::size_t i = 0; i < stages.size(); ++i) names += (i ? "," : "") + stage_name(stages[i]);
  c.set("eval.stages", names);
  c.set("eval.kmeans_seed", std::to_string(kmeans_seed));
  return c;
}

std::vector<Stage> parse_stage_list(const std::string& text) {
  std::vector<Stage> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(parse_stage(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("no evaluation stages given");
  return out;
}

namespace {

// Defaults that depend on the kind of data.
ConfigMap defaults_for(const SampleShape& shape) {
  TrainSetup base;
  auto& e = base.model.encoder;
  if (shape.is_image()) {
    e.use_conv = true;
    e.channels = shape.channels;
    e.height = shape.height;
    e.width = shape.width;
    e.hidden_dims = {16, 32};
    base.augment = AugmentPolicy::image_default();
  } else {
    e.hidden_dims = {128};
    base.augment = AugmentPolicy::vector_default();
  }
  e.input_dim = shape.size();
  e.output_dim = 64;
  base.model.projector.out_dim = 64;
  ConfigMap m = base.to_config();
  // Left unset so they follow seed.master.
  m.erase("seed.init");
  m.erase("seed.augment");
  m.erase("seed.shuffle");
  return m;
}

void require_match(const char* key, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ConfigError(std::string("config key '") + key + "' = " + std::to_string(got) +
                      " does not match the data (" + std::to_string(want) + ")");
  }
}

}  // namespace

RunConfig resolve_config(const ConfigMap& raw) {
  RunConfig rc;
  // The data shape picks the model and augmentation defaults.
  ConfigReader data_reader(raw);
  rc.data.source = data_reader.get_string("data.source", rc.data.source);
  rc.data.dim = data_reader.get_size("data.dim", rc.data.dim);

  ConfigMap full = defaults_for(rc.data.shape());
  full.merge(raw);
  ConfigReader r(full);
  rc.data.source = r.get_string("data.source", rc.data.source);
  rc.data.classes = static_cast<int>(r.get_u64("data.classes", static_cast<std::uint64_t>(rc.data.classes)));
  rc.data.per_class = r.get_size("data.per_class", rc.data.per_class);
  rc.data.dim = r.get_size("data.dim", rc.data.dim);
  rc.data.separation = r.get_double("data.separation", rc.data.separation);
  rc.data.seed = r.get_u64("data.seed", rc.data.seed);
  rc.data.path = r.get_string("data.path", rc.data.path);
  rc.output_dir = r.get_string("output.dir", rc.output_dir);
  rc.stages = parse_stage_list(r.get_string("eval.stages", "backbone,final_output"));
  rc.kmeans_seed = r.get_u64("eval.kmeans_seed", rc.kmeans_seed);
  rc.setup = TrainSetup::from_config(r);
  r.reject_unknown();

  if (rc.data.classes < 1) throw ConfigError("config key 'data.classes' must be >= 1");
  if (rc.data.source == "mixture" && (rc.data.per_class < 1 || rc.data.dim < 1)) {
    throw ConfigError("config keys 'data.per_class' and 'data.dim' must be >= 1");
  }
  const SampleShape actual = rc.data.shape();
  auto& enc = rc.setup.model.encoder;
  require_match("model.input_dim", enc.input_dim, actual.size());
  if (enc.use_conv) {
    require_match("model.channels", enc.channels, actual.channels);
    require_match("model.height", enc.height, actual.height);
    require_match("model.width", enc.width, actual.width);
  }

  const std::size_t batch = rc.setup.train.batch_size;
  auto& m = rc.setup.model;
  if (m.projector.hidden_dim == 0) m.projector.hidden_dim = batch;
  if (m.predictor.hidden_dim == 0) m.predictor.hidden_dim = batch;
  if (m.predictor.num_features == 0) m.predictor.num_features = batch;

  try {
    rc.setup.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return rc;
}

ConfigMap parse_overrides(const std::vector<std::string>& args) {
  static const std::map<std::string, std::string> aliases{
      {"epochs", "train.epochs"},        {"seed", "seed.master"}, {"lr", "train.lr"},
      {"batch-size", "train.batch_size"}, {"out", "output.dir"},
  };
  ConfigMap out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) {
      throw ConfigError("unexpected argument '" + a + "' (overrides look like --section.key value)");
    }
    std::string key = a.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("override --" + key + " is missing a value");
      value = args[++i];
    }
    if (auto it = aliases.find(key); it != aliases.end()) key = it->second;
    if (key.find('.') == std::string::npos) throw ConfigError("unknown option '--" + key + "'");
    out.set(key, value);
  }
  return out;
}

ConfigMap apply_overrides(ConfigMap file, const ConfigMap& overrides) {
  if (overrides.contains("seed.master")) {
    for (const char* k : {"seed.init", "seed.augment", "seed.shuffle"}) file.erase(k);
  }
  file.merge(overrides);
  return file;
}

}  // namespace cdis
