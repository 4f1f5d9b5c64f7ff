#pragma once

// Synthetic mixture datasets with known generating parameters.
//
// Each mode m has a 2-D location c_m. Every position of a record from mode m is
//   c_m[0] u + c_m[1] v (+ class offset along w) + noise * N(0, I)
// with (u, v, w) one random orthonormal triple, so a record's positions share
// its mode and the vectors themselves form the stated number of clusters.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "resgen/dataset.hpp"

namespace resgen::synth {

struct Spec {
  std::string family = "grid";  // grid | ring | shifted
  std::size_t count = 10000;
  std::size_t length = 8;
  std::size_t dim = 8;
  std::size_t modes = 9;        // per class; a perfect square for grid and shifted
  std::size_t classes = 3;      // shifted only
  double spacing = 4.0;
  double noise = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Truth {
  std::string family;
  std::size_t length = 0;
  std::size_t dim = 0;
  double noise = 0.0;
  std::vector<std::vector<double>> means;  // per mode, L*H
  std::vector<std::uint32_t> mode_label;   // stored label of each mode
  std::vector<double> weights;

  std::size_t modes() const { return means.size(); }
  // Index of the nearest mode mean.
  std::size_t classify(std::span<const double> record) const;
};

Truth make_truth(const Spec& spec);

struct Generated {
  data::Dataset dataset;
  Truth truth;
  std::vector<std::size_t> modes;  // generating mode of each record
};

Generated generate(const Spec& spec);

std::string truth_to_json(const Truth& t);
Truth truth_from_json(const std::string& text);

}  // namespace resgen::synth
