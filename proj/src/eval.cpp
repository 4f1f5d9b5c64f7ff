#include "resgen/eval.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace resgen::eval {

namespace {

constexpr double kNegativeTolerance = -1e-8;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

void moments(std::span<const double> rows, std::size_t dim, Vector& mean, Matrix& cov) {
  const std::size_t n = rows.size() / dim;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      rows.data(), Eigen::Index(n), Eigen::Index(dim));
  mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  cov = (centered.transpose() * centered) / double(n - 1);
}

double condition(const Vector& eig) {
  const double lo = eig.minCoeff(), hi = eig.maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

Frechet frechet(std::span<const double> a, std::span<const double> b, std::size_t dim) {
  if (dim == 0 || a.size() % dim != 0 || b.size() % dim != 0) {
    throw std::invalid_argument("frechet: set sizes are not multiples of dim");
  }
  if (a.size() / dim < dim + 1 || b.size() / dim < dim + 1) {
    throw std::invalid_argument("frechet: need at least dim + 1 = " + std::to_string(dim + 1) +
                                " vectors per set");
  }
  Vector mu_a, mu_b;
  Matrix cov_a, cov_b;
  moments(a, dim, mu_a, cov_a);
  moments(b, dim, mu_b, cov_b);

  Eigen::SelfAdjointEigenSolver<Matrix> ea(cov_a), eb(cov_b);
  Frechet out;
  out.condition_a = condition(ea.eigenvalues());
  out.condition_b = condition(eb.eigenvalues());
  auto reject = [&](const std::string& what, double value) {
    throw DegenerateCovariance("frechet: " + what + " has eigenvalue " + fmt("%.3e", value) +
                               " below tolerance; condition numbers " + fmt("%.3e", out.condition_a) +
                               " / " + fmt("%.3e", out.condition_b));
  };
  if (ea.eigenvalues().minCoeff() < kNegativeTolerance) reject("covariance A", ea.eigenvalues().minCoeff());
  if (eb.eigenvalues().minCoeff() < kNegativeTolerance) reject("covariance B", eb.eigenvalues().minCoeff());

  const Vector root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Matrix prod = sqrt_a * cov_b * sqrt_a;
  prod = 0.5 * (prod + prod.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> ep(prod, Eigen::EigenvaluesOnly);
  if (ep.eigenvalues().minCoeff() < kNegativeTolerance) reject("product", ep.eigenvalues().minCoeff());
  const double tr_sqrt = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  out.distance = std::max(d, 0.0);
  return out;
}

double frechet_distance(std::span<const double> a, std::span<const double> b, std::size_t dim) {
  return frechet(a, b, dim).distance;
}

double half_split_distance(std::span<const double> rows, std::size_t dim) {
  const std::size_t n = rows.size() / dim, half = n / 2;
  return frechet_distance(rows.subspan(0, half * dim), rows.subspan(half * dim, half * dim), dim);
}

std::vector<double> usage_entropy(const std::vector<TokenGrid>& grids, std::size_t depth,
                                  std::size_t vocab) {
  std::vector<std::vector<double>> counts(depth, std::vector<double>(vocab, 0.0));
  for (const auto& g : grids) {
    if (g.depth != depth) throw std::invalid_argument("usage_entropy: depth mismatch");
    for (std::size_t i = 0; i < g.length; ++i) {
      for (std::size_t j = 0; j < depth; ++j) {
        const Token x = g.at(i, j);
        if (x < 0 || std::size_t(x) >= vocab) throw std::invalid_argument("usage_entropy: token out of range");
        counts[j][std::size_t(x)] += 1.0;
      }
    }
  }
  std::vector<double> h(depth, 0.0);
  for (std::size_t j = 0; j < depth; ++j) {
    double total = 0.0;
    for (double c : counts[j]) total += c;
    if (total == 0.0) continue;
    for (double c : counts[j]) {
      if (c > 0.0) h[j] -= (c / total) * std::log(c / total);
    }
  }
  return h;
}

std::vector<double> mode_occupancy(const synth::Truth& truth, const data::Dataset& records) {
  std::vector<double> occ(truth.modes(), 0.0);
  if (records.size() == 0) return occ;
  for (std::size_t n = 0; n < records.size(); ++n) occ[truth.classify(records.record(n))] += 1.0;
  for (double& o : occ) o /= double(records.size());
  return occ;
}

trainer::TokenDataset quantize_dataset(const data::Dataset& d, const rvq::Codebook& book) {
  trainer::TokenDataset out;
  for (std::size_t n = 0; n < d.size(); ++n) {
    out.grids.push_back(rvq::quantize(d.sequence(n), book));
    out.labels.push_back(d.labels[n]);
  }
  return out;
}

backbone::BackboneConfig model_config_for(const data::Dataset& d, const Pipeline& p) {
  backbone::BackboneConfig c = p.model;
  c.length = d.length;
  c.dim = d.dim;
  c.depth = p.rvq.depth;
  c.vocab = p.rvq.vocab;
  c.num_classes = d.num_classes;
  return c;
}

Trained fit_and_train(const data::Dataset& train, const Pipeline& p, std::ostream* log) {
  rvq::Codebook book = rvq::fit_codebook(train.values, train.dim, p.rvq);
  backbone::Model model(model_config_for(train, p));
  trainer::TrainState state = trainer::init_state(model, p.train.seed);
  const auto tokens = quantize_dataset(train, book);
  trainer::train(model, book, tokens, p.train, state, log);
  return Trained{std::move(book), std::move(model), std::move(state)};
}

Samples sample_many(const backbone::Model& model, const TensorMap& params, const rvq::Codebook& book,
                    const sampler::SamplerConfig& config, std::size_t count,
                    const std::vector<std::uint32_t>& labels) {
  const auto start = std::chrono::steady_clock::now();
  const auto& c = model.config();
  Samples s;
  s.vectors.length = c.length;
  s.vectors.dim = c.dim;
  s.vectors.num_classes = c.num_classes;
  for (std::size_t n = 0; n < count; ++n) {
    sampler::SamplerConfig sc = config;
    sc.seed = derive_rng(config.seed, {0x47454e, n})();
    const std::uint32_t label = labels.empty() ? 0u : labels[n % labels.size()];
    auto r = sampler::generate(model, params, book, label, sc);
    s.forward_passes += r.forward_passes;
    const auto z = rvq::dequantize(r.grid, book);
    s.vectors.labels.push_back(label);
    s.vectors.values.insert(s.vectors.values.end(), z.data.begin(), z.data.end());
    s.grids.push_back(std::move(r.grid));
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

std::vector<DepthRow> depth_sweep(const data::Dataset& train, const data::Dataset& heldout,
                                  const std::vector<std::size_t>& depths, const Pipeline& p) {
  if (depths.size() < 2) throw std::invalid_argument("depth_sweep: need at least two depths");
  std::vector<DepthRow> rows;
  for (std::size_t D : depths) {
    Pipeline q = p;
    q.rvq.depth = D;
    Trained t = fit_and_train(train, q);
    DepthRow row;
    row.depth = D;
    row.recon_mse = rvq::reconstruction_mse(train.values, train.dim, t.book).back();
    auto s = sample_many(t.model, t.sampling_params(q.use_ema), t.book, q.sample, q.samples, heldout.labels);
    row.fd = frechet_distance(s.vectors.values, heldout.values, heldout.record_size());
    rows.push_back(row);
  }
  return rows;
}

std::vector<GridCell> schedule_grid(const data::Dataset& train, const data::Dataset& heldout,
                                    const std::vector<masking::Schedule>& schedules, const Pipeline& p,
                                    double cfg_start, double cfg_end) {
  std::vector<GridCell> cells;
  for (const auto& ts : schedules) {
    Pipeline q = p;
    q.train.schedule = ts;
    Trained t = fit_and_train(train, q);
    for (bool cfg : {false, true}) {
      for (const auto& ss : schedules) {
        sampler::SamplerConfig sc = q.sample;
        sc.schedule = ss;
        sc.cfg_start = cfg ? cfg_start : 0.0;
        sc.cfg_end = cfg ? cfg_end : 0.0;
        auto s = sample_many(t.model, t.sampling_params(true), t.book, sc, q.samples, heldout.labels);
        cells.push_back({masking::schedule_name(ts), masking::schedule_name(ss), cfg,
                         frechet_distance(s.vectors.values, heldout.values, heldout.record_size())});
      }
    }
  }
  return cells;
}

std::vector<StatsRow> sampler_stats(const Trained& t, const data::Dataset& heldout,
                                    const sampler::SamplerConfig& base, std::size_t count, bool ema) {
  std::vector<StatsRow> rows;
  auto run = [&](const std::string& name, double value, const sampler::SamplerConfig& sc) {
    auto s = sample_many(t.model, t.sampling_params(ema), t.book, sc, count, heldout.labels);
    rows.push_back({name, value, frechet_distance(s.vectors.values, heldout.values, heldout.record_size())});
  };
  for (std::size_t steps : {8, 16, 32, 63}) {
    auto sc = base;
    sc.steps = steps;
    run("steps", double(steps), sc);
  }
  for (double top_p : {0.8, 0.9, 0.96, 1.0}) {
    auto sc = base;
    sc.top_p = top_p;
    run("top_p", top_p, sc);
  }
  for (double tau : {0.0, 1.0, 7.0, 28.0}) {
    auto sc = base;
    sc.tau = tau;
    run("tau", tau, sc);
  }
  return rows;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  auto list = [&](const char* key, const std::vector<double>& v) {
    if (v.empty()) return;
    out << key << '=';
    for (std::size_t k = 0; k < v.size(); ++k) out << (k ? "," : "") << fmt("%.6e", v[k]);
    out << '\n';
  };
  out << "fd=" << fmt("%.6e", r.fd) << '\n';
  if (r.baseline >= 0.0) {
    out << "baseline=" << fmt("%.6e", r.baseline) << '\n';
    out << "fd_over_baseline=" << fmt("%.4f", r.baseline > 0.0 ? r.fd / r.baseline : 0.0) << '\n';
  }
  list("recon_mse_by_depth", r.recon_mse_by_depth);
  if (r.forward_passes) out << "forward_passes=" << r.forward_passes << '\n';
  list("usage_entropy", r.usage_entropy);
  list("occupancy", r.occupancy);
  if (r.wall_time >= 0.0) out << "wall_time=" << fmt("%.3f", r.wall_time) << '\n';
  return out.str();
}

std::string depth_csv(const std::vector<DepthRow>& rows) {
  std::string s = "depth,recon_mse,fd\n";
  for (const auto& r : rows) s += std::to_string(r.depth) + "," + fmt("%.6e", r.recon_mse) + "," + fmt("%.6e", r.fd) + "\n";
  return s;
}

std::string grid_csv(const std::vector<GridCell>& cells) {
  std::string s = "train_schedule,sample_schedule,cfg,fd\n";
  for (const auto& c : cells) {
    s += c.train_schedule + "," + c.sample_schedule + "," + (c.cfg ? "on" : "off") + "," + fmt("%.6e", c.fd) + "\n";
  }
  return s;
}

std::string stats_csv(const std::vector<StatsRow>& rows) {
  std::string s = "parameter,value,fd\n";
  for (const auto& r : rows) s += r.parameter + "," + fmt("%g", r.value) + "," + fmt("%.6e", r.fd) + "\n";
  return s;
}

}  // namespace resgen::eval
