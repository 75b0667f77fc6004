#include "patchmeta/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "patchmeta/data.hpp"
#include "patchmeta/errors.hpp"

namespace patchmeta {

const char* group_name(ParamGroup g) { return g == ParamGroup::emb ? "emb" : "def"; }

ParamGroup parse_group(const std::string& name) {
  if (name == "emb") return ParamGroup::emb;
  if (name == "def") return ParamGroup::def;
  throw ConfigError("unknown parameter group '" + name + "' (expected emb|def)");
}

Tensor& ParameterSet::add(const std::string& name, ParamGroup group, Shape shape,
                          std::vector<double> values) {
  if (contains(name)) throw UsageError("parameter '" + name + "' already registered");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, group, Tensor::leaf(std::move(shape), std::move(values), mask_of(group))});
  return entries_.back().tensor;
}

Tensor& ParameterSet::add_uniform(const std::string& name, ParamGroup group, Shape shape,
                                  std::size_t fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return add(name, group, std::move(shape), std::move(v));
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

ParamGroup ParameterSet::group_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].group;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::string> ParameterSet::names(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.group == group) out.push_back(e.name);
  }
  return out;
}

std::size_t ParameterSet::scalar_count(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == group) n += e.tensor.numel();
  }
  return n;
}

void ParameterSet::backward(const Tensor& loss, GroupMask mask) {
  // A loss that never touched the masked groups leaves them exactly zero.
  if (loss.track() & mask) patchmeta::backward(loss, mask);
  for (auto& e : entries_) {
    if (mask_of(e.group) & mask) {
      e.tensor.mutable_grad();
      e.grad_ready = true;
    }
  }
}

bool ParameterSet::has_grad(ParamGroup group) const {
  for (const auto& e : entries_) {
    if (e.group == group && e.grad_ready) return true;
  }
  return false;
}

void ParameterSet::zero_grad(ParamGroup group) {
  for (auto& e : entries_) {
    if (e.group == group) {
      e.tensor.zero_grad();
      e.grad_ready = false;
    }
  }
}

void ParameterSet::zero_grad() {
  zero_grad(ParamGroup::emb);
  zero_grad(ParamGroup::def);
}

namespace {

void hash_entry(Fnv1a& h, const std::string& name, ParamGroup group, const Tensor& t) {
  h.update(name);
  h.update_value(static_cast<std::uint8_t>(group));
  for (auto d : t.shape()) h.update_value(static_cast<std::uint64_t>(d));
  h.update(std::as_bytes(t.data()));
}

}  // namespace

std::uint64_t ParameterSet::hash() const {
  Fnv1a h;
  for (const auto& e : entries_) hash_entry(h, e.name, e.group, e.tensor);
  return h.digest();
}

std::uint64_t ParameterSet::hash(ParamGroup group) const {
  Fnv1a h;
  for (const auto& e : entries_) {
    if (e.group == group) hash_entry(h, e.name, e.group, e.tensor);
  }
  return h.digest();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) {
    auto d = e.tensor.data();
    out.add(e.name, e.group, e.tensor.shape(), std::vector<double>(d.begin(), d.end()));
  }
  return out;
}

void SgdConfig::validate(const std::string& label) const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError(label + ".lr must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError(label + ".decay must be in (0,1]");
  if (decay_interval < 1) throw ConfigError(label + ".decay_interval must be >= 1");
  if (batch_size < 1) throw ConfigError(label + ".batch_size must be >= 1");
}

double SgdConfig::rate(int epoch) const {
  return lr * std::pow(decay, static_cast<double>(epoch / decay_interval));
}

void sgd_step(ParameterSet& params, ParamGroup group, const SgdConfig& cfg, int epoch) {
  if (!params.has_grad(group)) {
    throw UsageError(std::string("sgd_step: no gradients populated for group ") + group_name(group));
  }
  const double rate = cfg.rate(epoch);
  for (auto& e : params.entries_) {
    if (e.group != group) continue;
    auto v = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    if (g.size() == v.size()) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= rate * g[i];
      check_finite(v, ("sgd_step(" + e.name + ")").c_str());
    }
  }
  params.zero_grad(group);
}

// ---- checkpoint container -------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};
static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes little-endian");

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    auto b = std::as_bytes(std::span<const T>(&v, 1));
    out.insert(out.end(), b.begin(), b.end());
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    auto b = std::as_bytes(std::span(s.data(), s.size()));
    out.insert(out.end(), b.begin(), b.end());
  }
  std::vector<std::byte> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IntegrityError("checkpoint: truncated payload");
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt) {
  Writer payload;
  payload.pod(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    payload.str(k);
    payload.str(v);
  }
  const auto names = ckpt.params.names();
  payload.pod(static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const Tensor& t = ckpt.params.get(name);
    payload.str(name);
    payload.pod(static_cast<std::uint8_t>(ckpt.params.group_of(name)));
    payload.pod(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) payload.pod(static_cast<std::uint64_t>(d));
    auto b = std::as_bytes(t.data());
    payload.out.insert(payload.out.end(), b.begin(), b.end());
  }

  Writer file;
  for (char c : kMagic) file.pod(c);
  file.pod(kCheckpointVersion);
  file.pod(static_cast<std::uint64_t>(payload.out.size()));
  file.out.insert(file.out.end(), payload.out.begin(), payload.out.end());
  file.pod(fnv1a(payload.out));
  return std::move(file.out);
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  Reader head(bytes);
  for (char c : kMagic) {
    if (head.pod<char>() != c) throw IntegrityError("checkpoint: bad magic, not a patchmeta checkpoint");
  }
  const auto version = head.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint: format version " + std::to_string(version) +
                         " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = head.pod<std::uint64_t>();
  constexpr std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() != header + len + sizeof(std::uint64_t)) {
    throw IntegrityError("checkpoint (format version " + std::to_string(version) +
                         "): size does not match declared payload length");
  }
  auto payload = bytes.subspan(header, len);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + header + len, sizeof(stored));
  if (stored != fnv1a(payload)) {
    throw IntegrityError("checkpoint (format version " + std::to_string(version) + "): checksum mismatch");
  }

  Reader r(payload);
  Checkpoint ckpt;
  const auto meta_count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto g = r.pod<std::uint8_t>();
    if (g != kEmbGroup && g != kDefGroup) throw IntegrityError("checkpoint: bad group tag for " + name);
    const auto ndim = r.pod<std::uint32_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = r.pod<double>();
    ckpt.params.add(name, static_cast<ParamGroup>(g), std::move(shape), std::move(values));
  }
  if (!r.done()) throw IntegrityError("checkpoint: trailing bytes in payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::as_bytes(std::span(raw.data(), raw.size())));
}

}  // namespace patchmeta
