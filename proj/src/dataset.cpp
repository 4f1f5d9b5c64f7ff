#include "resgen/dataset.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "resgen/binary.hpp"

namespace resgen::data {

rvq::LatentSequence Dataset::sequence(std::size_t n) const {
  rvq::LatentSequence s(length, dim);
  auto r = record(n);
  std::copy(r.begin(), r.end(), s.data.begin());
  return s;
}

std::vector<rvq::LatentSequence> Dataset::sequences() const {
  std::vector<rvq::LatentSequence> out;
  out.reserve(size());
  for (std::size_t n = 0; n < size(); ++n) out.push_back(sequence(n));
  return out;
}

Dataset Dataset::slice(std::size_t from, std::size_t to) const {
  if (from > to || to > size()) throw std::out_of_range("dataset slice out of range");
  Dataset d{length, dim, num_classes, {}, {}};
  d.labels.assign(labels.begin() + from, labels.begin() + to);
  d.values.assign(values.begin() + from * record_size(), values.begin() + to * record_size());
  return d;
}

void Dataset::validate() const {
  if (length == 0 || dim == 0) throw std::invalid_argument("dataset: L and H must be positive");
  if (values.size() != size() * record_size()) throw std::invalid_argument("dataset: value count mismatch");
  for (std::uint32_t l : labels) {
    if (l > num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(l) + " exceeds num_classes " +
                                  std::to_string(num_classes));
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite value");
  }
}

std::string serialize_dataset(const Dataset& d) {
  d.validate();
  ByteWriter w;
  w.bytes("RGDS");
  w.u32(kDatasetVersion);
  w.u64(d.size());
  w.u32(std::uint32_t(d.length));
  w.u32(std::uint32_t(d.dim));
  w.u32(std::uint32_t(d.num_classes));
  for (std::size_t n = 0; n < d.size(); ++n) {
    w.u32(d.labels[n]);
    for (double v : d.record(n)) w.f64(v);
  }
  return w.data();
}

Dataset deserialize_dataset(const std::string& bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("RGDS");
  r.expect_version(kDatasetVersion);
  const std::uint64_t n = r.u64();
  Dataset d;
  d.length = r.u32();
  d.dim = r.u32();
  d.num_classes = r.u32();
  const std::uint64_t record = 4 + 8 * std::uint64_t(d.length) * d.dim;
  if (d.length == 0 || d.dim == 0 || r.remaining() != n * record) {
    throw FormatError(context + ": file length " + std::to_string(bytes.size()) +
                      " does not match header (N=" + std::to_string(n) + ", L=" + std::to_string(d.length) +
                      ", H=" + std::to_string(d.dim) + ")");
  }
  d.labels.resize(n);
  d.values.reserve(n * d.record_size());
  for (std::uint64_t k = 0; k < n; ++k) {
    d.labels[k] = r.u32();
    for (std::size_t e = 0; e < d.record_size(); ++e) d.values.push_back(r.f64());
  }
  r.expect_end();
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(context + ": " + e.what());
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  write_file_atomic(path, serialize_dataset(d));
}

Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_file(path), path); }

std::string token_dump(const std::vector<TokenGrid>& grids) {
  std::ostringstream out;
  for (const auto& g : grids) {
    bool first = true;
    for (std::size_t j = 0; j < g.depth; ++j) {
      for (std::size_t i = 0; i < g.length; ++i) {
        if (!first) out << ' ';
        out << g.at(i, j);
        first = false;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace resgen::data
