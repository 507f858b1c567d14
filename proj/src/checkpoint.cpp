#include "pvae/checkpoint.hpp"

#include "pvae/binary_io.hpp"

namespace pvae {

namespace {

constexpr std::string_view kMagic = "PVCK";
constexpr std::string_view kParamPrefix = "param/";

void put_tensor(bin::Writer& w, std::string_view name, const Matrix& m) {
  w.put(static_cast<std::uint16_t>(name.size()));
  w.put_bytes(name);
  w.put(static_cast<std::uint64_t>(m.rows()));
  w.put(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.put(m.data()[i]);
}

NamedTensor get_tensor(bin::Reader& r) {
  NamedTensor t;
  t.name = std::string(r.get_bytes(r.get<std::uint16_t>()));
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (rows != 0 && cols > r.remaining() / 8 / rows) {
    throw DataError(r.source() + ": tensor '" + t.name + "' claims more data than the file holds");
  }
  r.require(rows * cols * 8);
  t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.get<double>();
  return t;
}

std::string finish(bin::Writer& w) {
  w.put(bin::fnv1a64(w.bytes()));
  return w.bytes();
}

void put_header(bin::Writer& w, ArchiveKind kind, const LinearVae* model, const Matrix& phi, std::uint32_t n) {
  w.put_bytes(kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(kind));
  w.put(static_cast<std::uint8_t>(model ? model->family : Family::kPoisson));
  w.put(static_cast<std::uint8_t>(model ? model->encoder.kind : EncoderKind::kLinear));
  w.put(static_cast<std::uint8_t>(model ? model->mode : GradMode::kExact));
  w.put(std::uint16_t{0});
  w.put(static_cast<std::uint64_t>(phi.rows()));
  w.put(static_cast<std::uint64_t>(phi.cols()));
  w.put(static_cast<std::uint64_t>(model ? model->encoder.hidden : 0));
  w.put(model ? model->beta : 0.0);
  w.put(n);
}

Matrix* param_slot(VaeParams& p, std::string_view field) {
  Matrix* slot = nullptr;
  const auto check = [&](std::string_view name, Matrix& m) {
    if (name == field) slot = &m;
  };
  check("hidden_w", p.hidden_w);
  check("hidden_b", p.hidden_b);
  check("loc_w", p.loc_w);
  check("loc_b", p.loc_b);
  check("scale_w", p.scale_w);
  check("scale_b", p.scale_b);
  check("phi", p.phi);
  check("log_rate", p.log_rate);
  return slot;
}

}  // namespace

const NamedTensor* Checkpoint::find_extra(std::string_view name) const {
  for (const auto& t : extra) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const LinearVae& model, std::span<const NamedTensor> extra) {
  std::uint32_t n = static_cast<std::uint32_t>(extra.size());
  model.params.for_each([&n](const char*, const Matrix&) { ++n; });
  bin::Writer w;
  put_header(w, ArchiveKind::kVae, &model, model.params.phi, n);
  model.params.for_each(
      [&w](const char* name, const Matrix& m) { put_tensor(w, std::string(kParamPrefix) + name, m); });
  for (const auto& t : extra) put_tensor(w, t.name, t.value);
  return finish(w);
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 8) throw DataError(source + ": file too short to be a checkpoint");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  bin::Reader tail(bytes.substr(bytes.size() - 8), source);
  if (tail.get<std::uint64_t>() != bin::fnv1a64(body)) throw DataError(source + ": checksum mismatch");

  bin::Reader r(body, source);
  if (r.get_bytes(4) != kMagic) throw DataError(source + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = static_cast<ArchiveKind>(r.get<std::uint8_t>());
  const auto family = r.get<std::uint8_t>();
  const auto encoder = r.get<std::uint8_t>();
  const auto mode = r.get<std::uint8_t>();
  r.get<std::uint16_t>();
  const auto m = r.get<std::uint64_t>();
  const auto k = r.get<std::uint64_t>();
  const auto h = r.get<std::uint64_t>();
  const auto beta = r.get<double>();
  const auto n = r.get<std::uint32_t>();
  if (ck.kind != ArchiveKind::kVae && ck.kind != ArchiveKind::kDictionary) throw DataError(source + ": unknown archive kind");
  if (family > 2 || encoder > 1 || mode > 2) throw DataError(source + ": invalid model tags");

  ck.model.family = static_cast<Family>(family);
  ck.model.encoder = EncoderSpec{static_cast<EncoderKind>(encoder), static_cast<Eigen::Index>(h)};
  ck.model.mode = static_cast<GradMode>(mode);
  ck.model.beta = beta;

  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t = get_tensor(r);
    if (ck.kind == ArchiveKind::kDictionary && t.name == "dictionary") {
      ck.dictionary = std::move(t.value);
    } else if (ck.kind == ArchiveKind::kVae && t.name.starts_with(kParamPrefix)) {
      Matrix* slot = param_slot(ck.model.params, std::string_view(t.name).substr(kParamPrefix.size()));
      if (slot == nullptr) throw DataError(source + ": unknown parameter tensor '" + t.name + "'");
      *slot = std::move(t.value);
    } else {
      ck.extra.push_back(std::move(t));
    }
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after the last tensor");

  const Matrix& phi = ck.kind == ArchiveKind::kVae ? ck.model.params.phi : ck.dictionary;
  if (static_cast<std::uint64_t>(phi.rows()) != m || static_cast<std::uint64_t>(phi.cols()) != k) {
    throw DataError(source + ": header shape disagrees with the dictionary tensor");
  }
  return ck;
}

void save_checkpoint(const std::string& path, const LinearVae& model, std::span<const NamedTensor> extra) {
  bin::write_file(path, serialize_checkpoint(model, extra));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(bin::read_file(path), path); }

void save_dictionary(const std::string& path, const Matrix& phi) {
  bin::Writer w;
  put_header(w, ArchiveKind::kDictionary, nullptr, phi, 1);
  put_tensor(w, "dictionary", phi);
  bin::write_file(path, finish(w));
}

Matrix load_dictionary(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return ck.kind == ArchiveKind::kDictionary ? std::move(ck.dictionary) : std::move(ck.model.params.phi);
}

}  // namespace pvae
