// Checkpoint layout, all integers little-endian:
//
//   magic "CDCKPT\0\0" | u32 version
//   u64 length | config text (key = value lines)
//   u64 epoch | u64 step
//   f64 beta1 | f64 beta2 | f64 eps | u64 adam t
//   u64 seed.init | u64 seed.augment | u64 seed.shuffle | u64 augment stream
//   u64 count | count x (u32 name length | name | u32 rank | rank x u64 dim | u64 offset)
//   u64 value count | value count x f64
//   u32 CRC-32 of every preceding byte
//
// Offsets count f64 values from the start of the value blob. Tensors are
// parameters, then BN buffers, then "adam.m.<param>" and "adam.v.<param>".

#include <zlib.h>

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include "cdis/error.hpp"
#include "cdis/train.hpp"

namespace cdis {

namespace {

constexpr unsigned char kMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', 0, 0};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> in) : in_(in) {}

  std::span<const unsigned char> take(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw FormatError(std::string("checkpoint truncated or corrupt: ") + what + " at byte offset " +
                        std::to_string(pos_) + " needs " + std::to_string(n) + " bytes, " +
                        std::to_string(in_.size() - pos_) + " remain");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    auto s = take(n, what);
    return std::string(s.begin(), s.end());
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const unsigned char> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const unsigned char> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

struct Entry {
  std::string name;
  Shape shape;
  std::vector<double>* target;  // decode side
  std::span<const double> source;  // encode side
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(TrainState& state) {
  auto params = state.model.parameters();
  auto buffers = state.model.buffers();
  if (state.adam.m.size() != params.size() || state.adam.v.size() != params.size()) {
    throw ContractError("adam state does not match the model parameters");
  }
  std::vector<Entry> entries;
  for (const auto& p : params) entries.push_back({p.name, p.tensor.shape(), nullptr, p.tensor.data()});
  for (const auto& b : buffers) entries.push_back({b.name, b.tensor.shape(), nullptr, b.tensor.data()});
  for (std::size_t i = 0; i < params.size(); ++i)
    entries.push_back({"adam.m." + params[i].name, params[i].tensor.shape(), nullptr, state.adam.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i)
    entries.push_back({"adam.v." + params[i].name, params[i].tensor.shape(), nullptr, state.adam.v[i]});

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const std::string config = state.setup.to_config().serialize();
  w.u64(config.size());
  w.bytes(config.data(), config.size());
  w.u64(state.epoch);
  w.u64(state.step);
  w.f64(state.adam.beta1);
  w.f64(state.adam.beta2);
  w.f64(state.adam.eps);
  w.u64(state.adam.t);
  const auto& seeds = state.setup.train.seeds;
  w.u64(seeds.init);
  w.u64(seeds.augment);
  w.u64(seeds.shuffle);
  w.u64(state.setup.augment.seed_stream);

  w.u64(entries.size());
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (e.source.size() != shape_numel(e.shape)) {
      throw ContractError("checkpoint tensor " + e.name + " has inconsistent size");
    }
    w.str32(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    w.u64(offset);
    offset += e.source.size();
  }
  w.u64(offset);
  for (const auto& e : entries)
    for (double v : e.source) w.f64(v);
  w.u32(crc(w.buffer()));
  return std::move(w.buffer());
}

TrainState decode_checkpoint(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof kMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t config_len = r.u64("config length");
  const std::string config_text = r.str(config_len, "config block");
  const std::uint64_t epoch = r.u64("epoch");
  const std::uint64_t step = r.u64("step");
  AdamState adam;
  adam.beta1 = r.f64("adam beta1");
  adam.beta2 = r.f64("adam beta2");
  adam.eps = r.f64("adam eps");
  adam.t = r.u64("adam step");
  SeedStreams seeds;
  seeds.init = r.u64("rng block");
  seeds.augment = r.u64("rng block");
  seeds.shuffle = r.u64("rng block");
  const std::uint64_t stream = r.u64("rng block");

  struct Stored {
    Shape shape;
    std::uint64_t offset;
  };
  std::map<std::string, Stored> manifest;
  const std::uint64_t count = r.u64("manifest count");
  if (count > r.remaining() / 16) throw FormatError("checkpoint manifest count is corrupt");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32("manifest name length"), "manifest name");
    const std::uint32_t rank = r.u32("manifest rank");
    if (rank > 8) throw FormatError("checkpoint tensor " + name + " has corrupt rank");
    Stored s;
    for (std::uint32_t k = 0; k < rank; ++k) s.shape.push_back(r.u64("manifest dims"));
    s.offset = r.u64("manifest offset");
    if (!manifest.emplace(name, s).second) throw FormatError("duplicate checkpoint tensor " + name);
  }
  const std::uint64_t values = r.u64("value count");
  if (values > r.remaining() / 8) {
    throw FormatError("checkpoint truncated or corrupt: value blob at byte offset " +
                      std::to_string(r.pos()) + " declares " + std::to_string(values) + " values");
  }
  const std::size_t blob_pos = r.pos();
  r.take(values * 8, "value blob");
  const std::size_t body_end = r.pos();
  const std::uint32_t stored_crc = r.u32("checksum");
  if (r.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  if (crc(bytes.subspan(0, body_end)) != stored_crc) {
    throw ChecksumError("checkpoint checksum mismatch");
  }

  TrainSetup setup;
  {
    const ConfigMap cfg = ConfigMap::parse(config_text, "checkpoint config");
    ConfigReader reader(cfg);
    setup = TrainSetup::from_config(reader);
    reader.reject_unknown();
  }
  if (!(setup.train.seeds == seeds) || setup.augment.seed_stream != stream) {
    throw FormatError("checkpoint rng block disagrees with its config");
  }
  TrainState state(setup);
  state.epoch = epoch;
  state.step = step;

  auto params = state.model.parameters();
  auto buffers = state.model.buffers();
  adam.m.assign(params.size(), {});
  adam.v.assign(params.size(), {});
  std::vector<Entry> expected;
  for (auto& p : params) expected.push_back({p.name, p.tensor.shape(), nullptr, {}});
  for (auto& b : buffers) expected.push_back({b.name, b.tensor.shape(), nullptr, {}});
  for (std::size_t i = 0; i < params.size(); ++i)
    expected.push_back({"adam.m." + params[i].name, params[i].tensor.shape(), &adam.m[i], {}});
  for (std::size_t i = 0; i < params.size(); ++i)
    expected.push_back({"adam.v." + params[i].name, params[i].tensor.shape(), &adam.v[i], {}});
  if (expected.size() != manifest.size()) {
    throw FormatError("checkpoint holds " + std::to_string(manifest.size()) + " tensors, model needs " +
                      std::to_string(expected.size()));
  }

  auto read_values = [&](const std::string& name, const Shape& shape) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second.shape != shape) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape) +
                        ", model needs " + shape_str(shape));
    }
    const std::size_t n = shape_numel(shape);
    if (it->second.offset > values || n > values - it->second.offset) {
      throw FormatError("checkpoint tensor " + name + " lies outside the value blob");
    }
    Reader blob(bytes.subspan(blob_pos + it->second.offset * 8, n * 8));
    std::vector<double> out(n);
    for (auto& v : out) v = blob.f64("value");
    return out;
  };

  std::size_t next = 0;
  for (auto* group : {&params, &buffers}) {
    for (auto& t : *group) {
      auto vals = read_values(expected[next++].name, t.tensor.shape());
      std::copy(vals.begin(), vals.end(), t.tensor.mutable_data().begin());
    }
  }
  for (; next < expected.size(); ++next) {
    *expected[next].target = read_values(expected[next].name, expected[next].shape);
  }
  state.adam = std::move(adam);
  return state;
}

void save_checkpoint(TrainState& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cdis
