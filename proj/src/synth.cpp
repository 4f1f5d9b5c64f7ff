#include "resgen/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "resgen/random.hpp"

namespace resgen::synth {

namespace {

std::size_t square_side(std::size_t modes) {
  const auto k = std::size_t(std::llround(std::sqrt(double(modes))));
  return k * k == modes ? k : 0;
}

// Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = standard_normal(rng);
    for (const auto& u : out) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += v[k] * u[k];
      for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * u[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void Spec::validate() const {
  if (family != "grid" && family != "ring" && family != "shifted") {
    throw std::invalid_argument("unknown synth family '" + family + "' (grid|ring|shifted)");
  }
  if (count == 0) throw std::invalid_argument("synth: count must be positive");
  if (length == 0 || dim < 2) throw std::invalid_argument("synth: need length >= 1 and dim >= 2");
  if (modes == 0) throw std::invalid_argument("synth: modes must be positive");
  if (family != "ring" && square_side(modes) == 0) {
    throw std::invalid_argument("synth: modes must be a perfect square for " + family);
  }
  if (family == "shifted" && (classes == 0 || dim < 3)) {
    throw std::invalid_argument("synth: shifted needs classes >= 1 and dim >= 3");
  }
  if (!(spacing > 0.0) || !(noise >= 0.0)) throw std::invalid_argument("synth: bad spacing or noise");
}

Truth make_truth(const Spec& spec) {
  spec.validate();
  Truth t;
  t.family = spec.family;
  t.length = spec.length;
  t.dim = spec.dim;
  t.noise = spec.noise;
  Rng rng = derive_rng(spec.seed, {0x44495253});
  const auto f = orthonormal(spec.dim >= 3 ? 3 : 2, spec.dim, rng);

  std::vector<std::pair<double, double>> loc;
  if (spec.family == "ring") {
    for (std::size_t m = 0; m < spec.modes; ++m) {
      const double a = 2.0 * std::numbers::pi * double(m) / double(spec.modes);
      loc.emplace_back(spec.spacing * std::cos(a), spec.spacing * std::sin(a));
    }
  } else {
    const std::size_t k = square_side(spec.modes);
    const double mid = 0.5 * double(k - 1);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        loc.emplace_back(spec.spacing * (double(a) - mid), spec.spacing * (double(b) - mid));
      }
    }
  }
  const std::size_t groups = spec.family == "shifted" ? spec.classes : 1;
  const double class_mid = 0.5 * double(groups - 1);
  const double class_step = spec.spacing * double(square_side(spec.modes) + 1);
  for (std::size_t c = 0; c < groups; ++c) {
    for (const auto& [x, y] : loc) {
      std::vector<double> mean(spec.length * spec.dim, 0.0);
      for (std::size_t i = 0; i < spec.length; ++i) {
        for (std::size_t k = 0; k < spec.dim; ++k) {
          double v = x * f[0][k] + y * f[1][k];
          if (groups > 1) v += (double(c) - class_mid) * class_step * f[2][k];
          mean[i * spec.dim + k] = v;
        }
      }
      t.means.push_back(std::move(mean));
      t.mode_label.push_back(groups > 1 ? std::uint32_t(c + 1) : 0u);
    }
  }
  t.weights.assign(t.means.size(), 1.0 / double(t.means.size()));
  return t;
}

std::size_t Truth::classify(std::span<const double> record) const {
  if (record.size() != length * dim) throw std::invalid_argument("classify: record size mismatch");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < means.size(); ++m) {
    double d = 0.0;
    for (std::size_t k = 0; k < record.size(); ++k) d += (record[k] - means[m][k]) * (record[k] - means[m][k]);
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

Generated generate(const Spec& spec) {
  Generated g{{}, make_truth(spec), {}};
  auto& d = g.dataset;
  d.length = spec.length;
  d.dim = spec.dim;
  d.num_classes = spec.family == "shifted" ? spec.classes : 0;
  d.labels.reserve(spec.count);
  d.values.reserve(spec.count * spec.length * spec.dim);
  Rng rng = derive_rng(spec.seed, {0x53594e54});
  for (std::size_t n = 0; n < spec.count; ++n) {
    const std::size_t m = uniform_index(rng, g.truth.modes());
    g.modes.push_back(m);
    d.labels.push_back(g.truth.mode_label[m]);
    for (double mu : g.truth.means[m]) d.values.push_back(mu + spec.noise * standard_normal(rng));
  }
  return g;
}

std::string truth_to_json(const Truth& t) {
  nlohmann::json j;
  j["family"] = t.family;
  j["length"] = t.length;
  j["dim"] = t.dim;
  j["noise"] = t.noise;
  j["means"] = t.means;
  j["mode_label"] = t.mode_label;
  j["weights"] = t.weights;
  return j.dump(1) + "\n";
}

Truth truth_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Truth t;
  t.family = j.at("family").get<std::string>();
  t.length = j.at("length").get<std::size_t>();
  t.dim = j.at("dim").get<std::size_t>();
  t.noise = j.at("noise").get<double>();
  t.means = j.at("means").get<std::vector<std::vector<double>>>();
  t.mode_label = j.at("mode_label").get<std::vector<std::uint32_t>>();
  t.weights = j.at("weights").get<std::vector<double>>();
  for (const auto& m : t.means) {
    if (m.size() != t.length * t.dim) throw std::invalid_argument("truth: mean has wrong size");
  }
  if (t.mode_label.size() != t.means.size() || t.weights.size() != t.means.size()) {
    throw std::invalid_argument("truth: per-mode arrays disagree in size");
  }
  return t;
}

}  // namespace resgen::synth
