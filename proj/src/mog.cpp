#include "resgen/mog.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace resgen::mog {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double logsumexp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

std::vector<double> standardize(const Params& p, std::span<const double> z) {
  std::vector<double> zt(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) zt[k] = (z[k] - p.b[k]) / p.a;
  return zt;
}

}  // namespace

Basis::Basis(std::size_t k, std::size_t dim, std::size_t rank, std::vector<double> m,
             std::vector<double> s)
    : k_(k), dim_(dim), rank_(rank), m_(std::move(m)), s_(std::move(s)) {
  if (m_.size() != k * dim * rank || s_.size() != k * dim) {
    throw std::invalid_argument("basis arrays do not match K x H x h");
  }
  mtm_.assign(k * rank * rank, 0.0);
  mts_.assign(k * rank, 0.0);
  sts_.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const double* mc = m_.data() + c * dim * rank;
    const double* sc = s_.data() + c * dim;
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t u = 0; u < rank; ++u) {
        mts_[c * rank + u] += mc[r * rank + u] * sc[r];
        for (std::size_t v = 0; v < rank; ++v) {
          mtm_[(c * rank + u) * rank + v] += mc[r * rank + u] * mc[r * rank + v];
        }
      }
      sts_[c] += sc[r] * sc[r];
    }
  }
}

std::vector<double> Basis::project(std::size_t k, std::span<const double> mu) const {
  std::vector<double> out(s_.begin() + static_cast<std::ptrdiff_t>(k * dim_),
                          s_.begin() + static_cast<std::ptrdiff_t>((k + 1) * dim_));
  const double* mk = m_.data() + k * dim_ * rank_;
  for (std::size_t r = 0; r < dim_; ++r) {
    for (std::size_t u = 0; u < rank_; ++u) out[r] += mk[r * rank_ + u] * mu[u];
  }
  return out;
}

double Basis::sqdist(std::size_t k, std::span<const double> zt, std::span<const double> mu) const {
  const double* mk = m_.data() + k * dim_ * rank_;
  const double* sk = s_.data() + k * dim_;
  const double* g = mtm_.data() + k * rank_ * rank_;
  const double* ms = mts_.data() + k * rank_;
  double ztz = 0.0, zts = 0.0;
  for (std::size_t r = 0; r < dim_; ++r) {
    ztz += zt[r] * zt[r];
    zts += zt[r] * sk[r];
  }
  double quad = 0.0, cross = 0.0, lin = 0.0;
  for (std::size_t u = 0; u < rank_; ++u) {
    double gu = 0.0;
    for (std::size_t v = 0; v < rank_; ++v) gu += g[u * rank_ + v] * mu[v];
    quad += mu[u] * gu;
    double mz = 0.0;
    for (std::size_t r = 0; r < dim_; ++r) mz += mk[r * rank_ + u] * zt[r];
    cross += mz * mu[u];
    lin += mu[u] * ms[u];
  }
  return ztz + quad + sts_[k] - 2.0 * cross - 2.0 * zts + 2.0 * lin;
}

Basis identity_basis(std::size_t k, std::size_t dim) {
  std::vector<double> m(k * dim * dim, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < dim; ++r) m[(c * dim + r) * dim + r] = 1.0;
  }
  return Basis(k, dim, dim, std::move(m), std::vector<double>(k * dim, 0.0));
}

void check_params(const Params& p, const Basis& basis) {
  const std::size_t k = basis.components();
  if (p.logits.size() != k || p.mu.size() != k * basis.rank() || p.b.size() != basis.dim()) {
    throw std::invalid_argument("mixture parameters do not match basis dimensions");
  }
  if (!(p.a > 0.0) || !std::isfinite(p.a)) {
    throw std::invalid_argument("mixture scale a must be positive and finite, got " +
                                std::to_string(p.a));
  }
}

std::vector<double> log_weights(const Params& p) {
  const double lse = logsumexp(p.logits);
  std::vector<double> out(p.logits.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = p.logits[k] - lse;
  return out;
}

std::vector<double> component_log_density(const Params& p, const Basis& basis,
                                          std::span<const double> z) {
  check_params(p, basis);
  if (z.size() != basis.dim()) throw std::invalid_argument("target dimension mismatch");
  const auto zt = standardize(p, z);
  const double norm = static_cast<double>(basis.dim()) * kHalfLog2Pi;
  std::vector<double> out(basis.components());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = -0.5 * basis.sqdist(k, zt, p.mean(k, basis.rank())) - norm;
  }
  return out;
}

double exact_nll(const Params& p, const Basis& basis, std::span<const double> z) {
  auto ln = component_log_density(p, basis, z);
  const auto lw = log_weights(p);
  for (std::size_t k = 0; k < ln.size(); ++k) ln[k] += lw[k];
  return static_cast<double>(basis.dim()) * std::log(p.a) - logsumexp(ln);
}

Decomposed decomposed_loss(const Params& p, const Basis& basis, std::span<const double> z) {
  const auto ln = component_log_density(p, basis, z);
  const auto lw = log_weights(p);
  const double lse = logsumexp(ln);
  Decomposed out;
  out.log_scale = static_cast<double>(basis.dim()) * std::log(p.a);
  for (std::size_t k = 0; k < ln.size(); ++k) {
    const double lq = ln[k] - lse;
    const double q = std::exp(lq);
    out.regression -= q * ln[k];
    if (q > 0.0) out.classification += q * (lq - lw[k]);
  }
  return out;
}

std::vector<std::size_t> nucleus(const Params& p, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw std::invalid_argument("top_p must lie in (0, 1], got " + std::to_string(top_p));
  }
  const auto lw = log_weights(p);
  std::vector<std::size_t> order(lw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return lw[x] > lw[y]; });
  if (top_p == 1.0) return order;
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += std::exp(lw[order[keep++]]);
    if (mass >= top_p) break;
  }
  order.resize(keep);
  return order;
}

std::size_t sample_component(const Params& p, double top_p, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("mixture temperature must be positive");
  const auto keep = nucleus(p, top_p);
  if (keep.size() == 1) return keep.front();
  std::vector<double> w(keep.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    w[i] = p.logits[keep[i]] / temperature;
    m = std::max(m, w[i]);
  }
  double total = 0.0;
  for (double& x : w) {
    x = std::exp(x - m);
    total += x;
  }
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    u -= w[i];
    if (u < 0.0) return keep[i];
  }
  return keep.back();
}

std::vector<double> emit(const Params& p, const Basis& basis, std::size_t k,
                         std::span<const double> eps) {
  auto z = basis.project(k, p.mean(k, basis.rank()));
  for (std::size_t r = 0; r < z.size(); ++r) z[r] = p.a * (z[r] + eps[r]) + p.b[r];
  return z;
}

std::vector<double> sample(const Params& p, const Basis& basis, Rng& rng, double top_p,
                           double temperature) {
  check_params(p, basis);
  const std::size_t k = sample_component(p, top_p, temperature, rng);
  std::vector<double> eps(basis.dim());
  for (double& e : eps) e = standard_normal(rng);
  return emit(p, basis, k, eps);
}

Params cfg_combine(const Params& cond, const Params& uncond, double w) {
  if (cond.logits.size() != uncond.logits.size() || cond.mu.size() != uncond.mu.size() ||
      cond.b.size() != uncond.b.size()) {
    throw std::invalid_argument("guidance inputs have different shapes");
  }
  if (w == 0.0) return cond;
  Params out = cond;
  for (std::size_t k = 0; k < out.logits.size(); ++k) {
    out.logits[k] = (1.0 + w) * cond.logits[k] - w * uncond.logits[k];
  }
  for (std::size_t k = 0; k < out.mu.size(); ++k) {
    out.mu[k] = (1.0 + w) * cond.mu[k] - w * uncond.mu[k];
  }
  return out;
}

LossNodes build_loss(nn::Graph& g, const HeadNodes& head, bool stop_q) {
  const Shape& zs = g.shape(head.z);
  if (zs.size() != 2) throw nn::ShapeError(head.z, "target must be [p, H]");
  const double dim = static_cast<double>(zs[1]);

  const nn::NodeId inv_a = g.exp(g.scale(head.raw_a, -1.0));
  const nn::NodeId zt = g.scale_rows(g.sub(head.z, head.b), inv_a);
  const nn::NodeId d = g.lowrank_sqdist(zt, head.mu, head.basis_m, head.basis_s);
  const nn::NodeId log_n = g.add_scalar(g.scale(d, -0.5), -dim * kHalfLog2Pi);
  const nn::NodeId log_pi = g.log_softmax(head.logits);
  const nn::NodeId log_scale = g.scale(head.raw_a, dim);

  LossNodes out;
  out.exact_per_position = g.sub(log_scale, g.logsumexp(g.add(log_pi, log_n)));

  nn::NodeId log_q = g.log_softmax(log_n);
  nn::NodeId q = g.softmax(log_n);
  const nn::NodeId regression = g.scale(g.sum_last(g.mul(q, log_n)), -1.0);
  if (stop_q) {
    log_q = g.stop_gradient(log_q);
    q = g.stop_gradient(q);
  }
  const nn::NodeId kl = g.sum_last(g.mul(q, g.sub(log_q, log_pi)));
  out.surrogate_per_position = g.add(g.add(log_scale, regression), kl);

  out.exact = g.sum(g.mul(out.exact_per_position, head.weights));
  out.surrogate = g.sum(g.mul(out.surrogate_per_position, head.weights));
  return out;
}

}  // namespace resgen::mog
