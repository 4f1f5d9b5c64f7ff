#pragma once

// Mixture-of-Gaussians output head. For one position the model emits mixture
// logits, K low-rank means mu~ (dim h), a positive scale a and a shift b
// (dim H). Component means are mu = M mu~ + s with a trainable basis, and the
// density of a target z is taken in the standardized space z~ = (z - b) / a
// with identity covariance.

#include <cstddef>
#include <span>
#include <vector>

#include "resgen/graph.hpp"
#include "resgen/random.hpp"

namespace resgen::mog {

struct Params {
  std::vector<double> logits;  // K
  std::vector<double> mu;      // K x h, low-rank means
  double a = 1.0;
  std::vector<double> b;  // H

  std::span<const double> mean(std::size_t k, std::size_t h) const {
    return {mu.data() + k * h, h};
  }
};

// M: K x H x h row-major, s: K x H. Caches M^T M, M^T s and s^T s.
class Basis {
 public:
  Basis() = default;
  Basis(std::size_t k, std::size_t dim, std::size_t rank, std::vector<double> m,
        std::vector<double> s);

  std::size_t components() const { return k_; }
  std::size_t dim() const { return dim_; }
  std::size_t rank() const { return rank_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& s() const { return s_; }

  // M^(k) mu~ + s^(k)
  std::vector<double> project(std::size_t k, std::span<const double> mu) const;

  // |z~ - (M^(k) mu~ + s^(k))|^2 through the expanded quadratic form.
  double sqdist(std::size_t k, std::span<const double> zt, std::span<const double> mu) const;

 private:
  std::size_t k_ = 0, dim_ = 0, rank_ = 0;
  std::vector<double> m_, s_;
  std::vector<double> mtm_;  // K x h x h
  std::vector<double> mts_;  // K x h
  std::vector<double> sts_;  // K
};

// Identity basis (H = h, M = I, s = 0) for K components.
Basis identity_basis(std::size_t k, std::size_t dim);

void check_params(const Params& p, const Basis& basis);

std::vector<double> log_weights(const Params& p);

// Per-component log N(z~; mu_k, I).
std::vector<double> component_log_density(const Params& p, const Basis& basis,
                                          std::span<const double> z);

// -log p(z) = H log a - logsumexp_k(log pi_k + log N(z~; mu_k, I)).
double exact_nll(const Params& p, const Basis& basis, std::span<const double> z);

struct Decomposed {
  double log_scale = 0.0;       // H log a
  double regression = 0.0;      // -sum_k q_k log N_k
  double classification = 0.0;  // KL(q || pi)
  double surrogate() const { return log_scale + regression + classification; }
};

// q_k proportional to N(z~; mu_k, I).
Decomposed decomposed_loss(const Params& p, const Basis& basis, std::span<const double> z);

// Components retained by nucleus truncation at top_p: sorted by weight
// descending (ties by index), shortest prefix whose mass reaches top_p.
std::vector<std::size_t> nucleus(const Params& p, double top_p);

// Component index drawn from the truncated, renormalized mixture. The
// temperature divides the logits of the retained components.
std::size_t sample_component(const Params& p, double top_p, double temperature, Rng& rng);

// a (mu_k + eps) + b
std::vector<double> emit(const Params& p, const Basis& basis, std::size_t k,
                         std::span<const double> eps);

std::vector<double> sample(const Params& p, const Basis& basis, Rng& rng, double top_p = 1.0,
                           double temperature = 1.0);

// Guidance in parameter space: logits and mu~ extrapolate as
// (1 + w) cond - w uncond; a and b come from cond.
Params cfg_combine(const Params& cond, const Params& uncond, double w);

// ---------------------------------------------------------------------------
// Batched loss as graph ops, over p positions.

struct HeadNodes {
  nn::NodeId z;        // [p, H] target
  nn::NodeId logits;   // [p, K]
  nn::NodeId mu;       // [p, K, h]
  nn::NodeId raw_a;    // [p], a = exp(raw_a)
  nn::NodeId b;        // [p, H]
  nn::NodeId basis_m;  // [K, H, h]
  nn::NodeId basis_s;  // [K, H]
  nn::NodeId weights;  // [p] per-position loss weights
};

struct LossNodes {
  nn::NodeId exact_per_position;      // [p]
  nn::NodeId surrogate_per_position;  // [p]
  nn::NodeId exact;                   // weighted sum
  nn::NodeId surrogate;               // weighted sum
};

// stop_q treats q as a constant inside the KL term.
LossNodes build_loss(nn::Graph& g, const HeadNodes& head, bool stop_q);

}  // namespace resgen::mog
