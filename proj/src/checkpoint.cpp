#include "resgen/checkpoint.hpp"

#include "resgen/binary.hpp"

namespace resgen::checkpoint {

namespace {

config::KeyValues model_shape(const backbone::BackboneConfig& m) {
  return {{"layers", std::to_string(m.layers)},       {"width", std::to_string(m.width)},
          {"heads", std::to_string(m.heads)},         {"components", std::to_string(m.components)},
          {"rank", std::to_string(m.rank)},           {"length", std::to_string(m.length)},
          {"depth", std::to_string(m.depth)},         {"vocab", std::to_string(m.vocab)},
          {"dim", std::to_string(m.dim)},             {"num_classes", std::to_string(m.num_classes)},
          {"positional", m.positional ? "1" : "0"},   {"stop_q", m.stop_q ? "1" : "0"}};
}

backbone::BackboneConfig parse_shape(const config::KeyValues& kv, const std::string& context) {
  auto get = [&](const char* key) -> std::size_t {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(context + ": model shape lacks '" + key + "'");
    return std::stoull(it->second);
  };
  backbone::BackboneConfig m;
  m.layers = get("layers");
  m.width = get("width");
  m.heads = get("heads");
  m.components = get("components");
  m.rank = get("rank");
  m.length = get("length");
  m.depth = get("depth");
  m.vocab = get("vocab");
  m.dim = get("dim");
  m.num_classes = get("num_classes");
  m.positional = get("positional") != 0;
  m.stop_q = get("stop_q") != 0;
  return m;
}

void write_map(ByteWriter& w, const TensorMap& m) {
  w.u64(m.size());
  for (const auto& [name, t] : m) {
    w.str(name);
    w.u32(std::uint32_t(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    w.f64s(t.data);
  }
}

TensorMap read_map(ByteReader& r) {
  TensorMap m;
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(r.context() + ": tensor '" + name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    std::uint64_t size = 1;
    for (auto& d : shape) {
      d = r.u64();
      size *= d;
    }
    if (size * 8 > r.remaining()) throw FormatError(r.context() + ": tensor '" + name + "' overruns file");
    Tensor t(shape, r.f64s(size));
    if (!m.emplace(std::move(name), std::move(t)).second) throw FormatError(r.context() + ": duplicate tensor");
  }
  return m;
}

}  // namespace

std::string serialize(const Checkpoint& c) {
  ByteWriter w;
  w.bytes("RGCK");
  w.u32(kCheckpointVersion);
  w.str(config::format_key_values(config::to_key_values(c.config)));
  w.str(config::format_key_values(model_shape(c.model)));
  w.str(rvq::serialize_codebook(c.book));
  write_map(w, c.state.params);
  write_map(w, c.state.adam_m);
  write_map(w, c.state.adam_v);
  write_map(w, c.state.ema);
  w.u64(c.state.step);
  w.u64(c.state.root_seed);
  return w.data();
}

Checkpoint deserialize(const std::string& bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("RGCK");
  r.expect_version(kCheckpointVersion);
  Checkpoint c;
  try {
    config::apply(c.config, config::parse_key_values(r.str(), context + " config"));
    c.model = parse_shape(config::parse_key_values(r.str(), context + " shape"), context);
  } catch (const std::invalid_argument& e) {
    throw FormatError(context + ": " + e.what());
  }
  c.book = rvq::deserialize_codebook(r.str(), context + " codebook");
  c.state.params = read_map(r);
  c.state.adam_m = read_map(r);
  c.state.adam_v = read_map(r);
  c.state.ema = read_map(r);
  c.state.step = r.u64();
  c.state.root_seed = r.u64();
  r.expect_end();

  // The tensors must be exactly what this model shape builds.
  const TensorMap fresh = backbone::Model(c.model).init_params(0);
  for (const TensorMap* m : {&c.state.params, &c.state.adam_m, &c.state.adam_v, &c.state.ema}) {
    if (m->size() != fresh.size()) throw FormatError(context + ": tensor set does not match the model shape");
    for (const auto& [name, t] : fresh) {
      const auto it = m->find(name);
      if (it == m->end() || it->second.shape != t.shape) {
        throw FormatError(context + ": tensor '" + name + "' missing or misshapen");
      }
    }
  }
  if (c.book.depth() != c.model.depth || c.book.vocab() != c.model.vocab || c.book.dim() != c.model.dim) {
    throw FormatError(context + ": codebook does not match the model shape");
  }
  return c;
}

void save(const Checkpoint& c, const std::string& path) { write_file_atomic(path, serialize(c)); }

Checkpoint load(const std::string& path) { return deserialize(read_file(path), path); }

}  // namespace resgen::checkpoint
