#pragma once

// Depth-ordered absorbing-mask process: schedules, hypergeometric draws of
// per-position masked counts, and the closed-form forward, marginal and
// posterior probabilities of those counts.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "resgen/random.hpp"
#include "resgen/token_grid.hpp"

namespace resgen::masking {

struct Schedule {
  enum class Kind { kCircle, kCosine, kExponential };
  Kind kind = Kind::kCircle;
  double lambda = 6.0;  // exponential only
};

// "circle" | "cosine" | "exp" | "exp:<lambda>"
Schedule parse_schedule(const std::string& text);
std::string schedule_name(const Schedule& s);

// Fraction of tokens masked at progress r in [0,1]. Throws outside [0,1].
double gamma(const Schedule& s, double r);

// ceil(gamma(r) * L * D) clamped to [0, L*D].
std::size_t mask_count(const Schedule& s, double r, std::size_t length, std::size_t depth);

// n_t = mask_count(t / T) for t = 0..T; non-increasing, n_0 = L*D, n_T = 0.
std::vector<std::size_t> mask_count_sequence(const Schedule& s, std::size_t steps,
                                             std::size_t length, std::size_t depth);

using Counts = std::vector<std::size_t>;

// Per-position masked counts q_i. The masked slots at position i are the
// deepest q_i depths.
struct MaskState {
  std::size_t length = 0;
  std::size_t depth = 0;
  Counts masked;
  std::size_t step = 0;

  MaskState() = default;
  MaskState(std::size_t l, std::size_t d) : length(l), depth(d), masked(l, 0) {}

  std::size_t total() const;
  // Number of unmasked (revealed) depths at position i.
  std::size_t visible(std::size_t i) const { return depth - masked[i]; }
  bool is_masked(std::size_t i, std::size_t j) const { return j >= visible(i); }
  // m in {0,1}^{L x D}, position-major, 1 = kept.
  std::vector<int> mask_matrix() const;

  bool operator==(const MaskState&) const = default;
};

// Copy of `tokens` with every masked slot set to kMask.
TokenGrid apply_mask(const TokenGrid& tokens, const MaskState& state);

// Reads the state back from a grid; throws if MASK is not a depth suffix.
MaskState state_of(const TokenGrid& tokens);

// One draw of a univariate hypergeometric: number of `good` items among
// `draws` taken without replacement from good + bad. Inverse CDF.
std::size_t sample_hypergeometric(std::size_t good, std::size_t bad, std::size_t draws, Rng& rng);

// (k_1..k_m) with sum = draws, k_i <= capacity[i], uniform over subsets of
// slots. Throws if draws exceeds total capacity.
Counts sample_multivariate_hypergeometric(const Counts& capacity, std::size_t draws, Rng& rng);

// Fresh grid with n masked slots.
MaskState binary_mask(std::size_t n, std::size_t length, std::size_t depth, Rng& rng);

// Forward step: masks n_step more slots among the visible ones.
MaskState mask_more(const MaskState& state, std::size_t n_step, Rng& rng);

// Reverse step: reveals n_total - n_target masked slots, shallowest first.
MaskState binary_unmask(const MaskState& state, std::size_t n_target, Rng& rng);

// log C(n, k); nullopt when k > n.
std::optional<double> log_choose(std::size_t n, std::size_t k);

// log q(k_next | counts_prev): newly masked counts drawn among visible slots.
std::optional<double> forward_step_logprob(const Counts& k_next, const Counts& counts_prev,
                                           std::size_t depth);

// log q(counts | x0) = log prod_i C(D, c_i) / C(L*D, sum c).
std::optional<double> marginal_logprob(const Counts& counts, std::size_t depth);

// log q(counts_t | counts_t1, x0) = log prod_i C(c1_i, k_i) / C(sum c1, sum k)
// where k = counts_t1 - counts_t.
std::optional<double> posterior_logprob(const Counts& counts_t, const Counts& counts_t1);

}  // namespace resgen::masking
