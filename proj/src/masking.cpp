#include "resgen/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace resgen::masking {

Schedule parse_schedule(const std::string& text) {
  Schedule s;
  if (text == "circle") {
    s.kind = Schedule::Kind::kCircle;
  } else if (text == "cosine") {
    s.kind = Schedule::Kind::kCosine;
  } else if (text == "exp" || text.rfind("exp:", 0) == 0) {
    s.kind = Schedule::Kind::kExponential;
    if (text.size() > 4) {
      std::size_t used = 0;
      try {
        s.lambda = std::stod(text.substr(4), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != text.size() - 4 || !(s.lambda > 0.0) || !std::isfinite(s.lambda)) {
        throw std::invalid_argument("bad exponential schedule rate in \"" + text + "\"");
      }
    }
  } else {
    throw std::invalid_argument("unknown schedule \"" + text +
                                "\" (expected circle, cosine or exp:<lambda>)");
  }
  return s;
}

std::string schedule_name(const Schedule& s) {
  switch (s.kind) {
    case Schedule::Kind::kCircle:
      return "circle";
    case Schedule::Kind::kCosine:
      return "cosine";
    case Schedule::Kind::kExponential: {
      std::string num = std::to_string(s.lambda);
      num.erase(num.find_last_not_of('0') + 1);
      if (num.back() == '.') num.pop_back();
      return "exp:" + num;
    }
  }
  return "?";
}

double gamma(const Schedule& s, double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw std::invalid_argument("schedule progress " + std::to_string(r) + " outside [0,1]");
  }
  switch (s.kind) {
    case Schedule::Kind::kCircle:
      return std::sqrt(1.0 - r * r);
    case Schedule::Kind::kCosine:
      // cos(pi/2) is 6e-17 in floating point; pin the endpoint.
      return r == 1.0 ? 0.0 : std::cos(std::numbers::pi * r / 2.0);
    case Schedule::Kind::kExponential: {
      const double tail = std::exp(-s.lambda);
      return (std::exp(-s.lambda * r) - tail) / (1.0 - tail);
    }
  }
  return 0.0;
}

std::size_t mask_count(const Schedule& s, double r, std::size_t length, std::size_t depth) {
  const double total = static_cast<double>(length * depth);
  // The small slack keeps values like 0.5 * 128 = 64.00000000000001 at 64.
  const double n = std::ceil(gamma(s, r) * total - 1e-9);
  return static_cast<std::size_t>(std::clamp(n, 0.0, total));
}

std::vector<std::size_t> mask_count_sequence(const Schedule& s, std::size_t steps,
                                             std::size_t length, std::size_t depth) {
  if (steps == 0) throw std::invalid_argument("need at least one step");
  std::vector<std::size_t> out(steps + 1);
  for (std::size_t t = 0; t <= steps; ++t) {
    out[t] = mask_count(s, static_cast<double>(t) / static_cast<double>(steps), length, depth);
  }
  return out;
}

std::size_t MaskState::total() const {
  return std::accumulate(masked.begin(), masked.end(), std::size_t{0});
}

std::vector<int> MaskState::mask_matrix() const {
  std::vector<int> m(length * depth, 1);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = visible(i); j < depth; ++j) m[i * depth + j] = 0;
  }
  return m;
}

TokenGrid apply_mask(const TokenGrid& tokens, const MaskState& state) {
  if (tokens.length != state.length || tokens.depth != state.depth) {
    throw std::invalid_argument("apply_mask: grid and mask extents differ");
  }
  TokenGrid out = tokens;
  for (std::size_t i = 0; i < state.length; ++i) {
    for (std::size_t j = state.visible(i); j < state.depth; ++j) out.at(i, j) = kMask;
  }
  return out;
}

MaskState state_of(const TokenGrid& tokens) {
  if (!tokens.depth_suffix_ok()) throw std::invalid_argument("MASK tokens are not a depth suffix");
  MaskState s(tokens.length, tokens.depth);
  for (std::size_t i = 0; i < tokens.length; ++i) s.masked[i] = tokens.masked_count(i);
  return s;
}

std::optional<double> log_choose(std::size_t n, std::size_t k) {
  if (k > n) return std::nullopt;
  if (k == 0 || k == n) return 0.0;
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  return std::lgamma(dn + 1.0) - std::lgamma(dk + 1.0) - std::lgamma(dn - dk + 1.0);
}

std::size_t sample_hypergeometric(std::size_t good, std::size_t bad, std::size_t draws, Rng& rng) {
  if (draws > good + bad) throw std::invalid_argument("more draws than items");
  const std::size_t lo = draws > bad ? draws - bad : 0;
  const std::size_t hi = std::min(good, draws);
  if (lo == hi) return lo;
  // pmf at lo, then the ratio recurrence p(x+1)/p(x).
  double p = std::exp(*log_choose(good, lo) + *log_choose(bad, draws - lo) -
                      *log_choose(good + bad, draws));
  double u = uniform01(rng);
  for (std::size_t x = lo; x < hi; ++x) {
    if (u < p) return x;
    u -= p;
    p *= static_cast<double>((good - x) * (draws - x)) /
         static_cast<double>((x + 1) * (bad + x + 1 - draws));
  }
  return hi;
}

Counts sample_multivariate_hypergeometric(const Counts& capacity, std::size_t draws, Rng& rng) {
  std::size_t rest = std::accumulate(capacity.begin(), capacity.end(), std::size_t{0});
  if (draws > rest) {
    throw std::invalid_argument("cannot draw " + std::to_string(draws) + " from " +
                                std::to_string(rest) + " slots");
  }
  Counts k(capacity.size(), 0);
  for (std::size_t i = 0; i < capacity.size() && draws > 0; ++i) {
    rest -= capacity[i];
    k[i] = sample_hypergeometric(capacity[i], rest, draws, rng);
    draws -= k[i];
  }
  return k;
}

MaskState binary_mask(std::size_t n, std::size_t length, std::size_t depth, Rng& rng) {
  return mask_more(MaskState(length, depth), n, rng);
}

MaskState mask_more(const MaskState& state, std::size_t n_step, Rng& rng) {
  Counts cap(state.length);
  for (std::size_t i = 0; i < state.length; ++i) cap[i] = state.visible(i);
  const Counts k = sample_multivariate_hypergeometric(cap, n_step, rng);
  MaskState out = state;
  for (std::size_t i = 0; i < state.length; ++i) out.masked[i] += k[i];
  ++out.step;
  return out;
}

MaskState binary_unmask(const MaskState& state, std::size_t n_target, Rng& rng) {
  const std::size_t n = state.total();
  if (n_target > n) {
    throw std::invalid_argument("unmask target " + std::to_string(n_target) +
                                " exceeds masked total " + std::to_string(n));
  }
  const Counts reveal = sample_multivariate_hypergeometric(state.masked, n - n_target, rng);
  MaskState out = state;
  for (std::size_t i = 0; i < state.length; ++i) out.masked[i] -= reveal[i];
  ++out.step;
  return out;
}

std::optional<double> forward_step_logprob(const Counts& k_next, const Counts& counts_prev,
                                           std::size_t depth) {
  if (k_next.size() != counts_prev.size()) throw std::invalid_argument("count vectors differ in length");
  double lp = 0.0;
  std::size_t visible = 0, drawn = 0;
  for (std::size_t i = 0; i < k_next.size(); ++i) {
    if (counts_prev[i] > depth) return std::nullopt;
    const auto c = log_choose(depth - counts_prev[i], k_next[i]);
    if (!c) return std::nullopt;
    lp += *c;
    visible += depth - counts_prev[i];
    drawn += k_next[i];
  }
  return lp - *log_choose(visible, drawn);
}

std::optional<double> marginal_logprob(const Counts& counts, std::size_t depth) {
  double lp = 0.0;
  std::size_t n = 0;
  for (std::size_t c : counts) {
    const auto lc = log_choose(depth, c);
    if (!lc) return std::nullopt;
    lp += *lc;
    n += c;
  }
  return lp - *log_choose(counts.size() * depth, n);
}

std::optional<double> posterior_logprob(const Counts& counts_t, const Counts& counts_t1) {
  if (counts_t.size() != counts_t1.size()) throw std::invalid_argument("count vectors differ in length");
  double lp = 0.0;
  std::size_t n1 = 0, step = 0;
  for (std::size_t i = 0; i < counts_t.size(); ++i) {
    if (counts_t[i] > counts_t1[i]) return std::nullopt;
    const std::size_t k = counts_t1[i] - counts_t[i];
    lp += *log_choose(counts_t1[i], k);
    n1 += counts_t1[i];
    step += k;
  }
  return lp - *log_choose(n1, step);
}

}  // namespace resgen::masking
