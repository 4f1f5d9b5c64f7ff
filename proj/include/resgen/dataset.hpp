#pragma once

// Vector-sequence datasets and the RGDS file format:
//   "RGDS", u32 version, u64 N, u32 L, u32 H, u32 num_classes,
//   then N records of (u32 label, L*H f64), little-endian.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "resgen/rvq.hpp"

namespace resgen::data {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint32_t> labels;  // 0 = none; class c stored as c + 1
  std::vector<double> values;         // N x L x H

  std::size_t size() const { return labels.size(); }
  std::size_t record_size() const { return length * dim; }
  std::span<const double> record(std::size_t n) const {
    return {values.data() + n * record_size(), record_size()};
  }
  rvq::LatentSequence sequence(std::size_t n) const;
  std::vector<rvq::LatentSequence> sequences() const;
  // Records [from, to).
  Dataset slice(std::size_t from, std::size_t to) const;
  void validate() const;
};

std::string serialize_dataset(const Dataset& d);
Dataset deserialize_dataset(const std::string& bytes, const std::string& context = "dataset");
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// One grid per line: depth-major token indices separated by spaces.
std::string token_dump(const std::vector<TokenGrid>& grids);

}  // namespace resgen::data
