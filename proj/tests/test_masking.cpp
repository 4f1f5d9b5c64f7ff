#include <cmath>
#include <map>
#include <stdexcept>

#include "doctest.h"
#include "resgen/masking.hpp"

using namespace resgen;
using namespace resgen::masking;

namespace {

// Brute-force pmf of per-position counts: enumerate every n-subset of the
// visible slots (bitmask over L*D slots) and tally how many land where.
std::map<Counts, double> enumerate_step(const Counts& prev, std::size_t depth, std::size_t n) {
  const std::size_t length = prev.size();
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = prev[i]; j < depth; ++j) owner.push_back(i);
  }
  std::map<Counts, double> pmf;
  double total = 0.0;
  for (unsigned bits = 0; bits < (1u << owner.size()); ++bits) {
    if (static_cast<std::size_t>(__builtin_popcount(bits)) != n) continue;
    Counts k(length, 0);
    for (std::size_t s = 0; s < owner.size(); ++s) {
      if (bits >> s & 1u) ++k[owner[s]];
    }
    pmf[k] += 1.0;
    total += 1.0;
  }
  for (auto& [k, p] : pmf) p /= total;
  return pmf;
}

double total_variation(const std::map<Counts, double>& a, const std::map<Counts, double>& b) {
  std::map<Counts, double> diff = a;
  for (const auto& [k, p] : b) diff[k] -= p;
  double tv = 0.0;
  for (const auto& [k, d] : diff) tv += std::abs(d);
  return tv / 2.0;
}

void for_each_counts(std::size_t length, std::size_t depth, const auto& fn) {
  Counts c(length, 0);
  while (true) {
    fn(c);
    std::size_t i = 0;
    while (i < length && c[i] == depth) c[i++] = 0;
    if (i == length) return;
    ++c[i];
  }
}

}  // namespace

TEST_CASE("schedule boundary values and examples") {
  for (const char* name : {"circle", "cosine", "exp:6"}) {
    Schedule s = parse_schedule(name);
    CHECK(gamma(s, 0.0) == 1.0);
    CHECK(gamma(s, 1.0) == 0.0);
  }
  CHECK(gamma(parse_schedule("circle"), 0.5) == doctest::Approx(0.8660254).epsilon(1e-7));
  CHECK(gamma(parse_schedule("cosine"), 0.5) == doctest::Approx(0.7071068).epsilon(1e-7));
}

TEST_CASE("schedules are monotone on a fine grid") {
  for (const char* name : {"circle", "cosine", "exp", "exp:2.5"}) {
    Schedule s = parse_schedule(name);
    double prev = gamma(s, 0.0);
    for (int step = 1; step <= 1000; ++step) {
      const double g = gamma(s, step / 1000.0);
      CHECK(g <= prev);
      CHECK(g >= 0.0);
      prev = g;
    }
  }
}

TEST_CASE("exponential schedule unmasks slowly early") {
  Schedule e = parse_schedule("exp:6"), c = parse_schedule("circle");
  CHECK(gamma(e, 0.1) < gamma(c, 0.1));
  CHECK(parse_schedule("exp").lambda == 6.0);
  CHECK(schedule_name(parse_schedule("exp:2.5")) == "exp:2.5");
}

TEST_CASE("schedule parsing and range errors") {
  CHECK_THROWS_AS(parse_schedule("linear"), std::invalid_argument);
  CHECK_THROWS_AS(parse_schedule("exp:abc"), std::invalid_argument);
  CHECK_THROWS_AS(parse_schedule("exp:-1"), std::invalid_argument);
  CHECK_THROWS_AS(gamma(Schedule{}, -0.01), std::invalid_argument);
  CHECK_THROWS_AS(gamma(Schedule{}, 1.01), std::invalid_argument);
}

TEST_CASE("mask counts") {
  Schedule s = parse_schedule("circle");
  CHECK(mask_count(s, 0.0, 8, 16) == 128);
  CHECK(mask_count(s, 0.5, 8, 16) == 111);
  CHECK(mask_count(s, 1.0, 8, 16) == 0);
  auto seq = mask_count_sequence(s, 10, 4, 3);
  CHECK(seq.front() == 12);
  CHECK(seq.back() == 0);
  for (std::size_t t = 1; t < seq.size(); ++t) CHECK(seq[t] <= seq[t - 1]);
}

TEST_CASE("trivial masks") {
  Rng rng = derive_rng(1, {});
  MaskState all = binary_mask(6, 2, 3, rng);
  for (int m : all.mask_matrix()) CHECK(m == 0);
  MaskState none = binary_mask(0, 2, 3, rng);
  for (int m : none.mask_matrix()) CHECK(m == 1);
  CHECK_THROWS_AS(binary_mask(7, 2, 3, rng), std::invalid_argument);
}

TEST_CASE("binary_mask matches the hypergeometric pmf on 2x2") {
  Rng rng = derive_rng(7, {});
  std::map<Counts, double> freq;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) freq[binary_mask(2, 2, 2, rng).masked] += 1.0 / trials;
  std::map<Counts, double> expected{{{1, 1}, 2.0 / 3.0}, {{2, 0}, 1.0 / 6.0}, {{0, 2}, 1.0 / 6.0}};
  CHECK(total_variation(freq, expected) < 0.01);
}

TEST_CASE("enumeration oracle agrees with the forward step formula") {
  for (std::size_t length = 1; length <= 3; ++length) {
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      for_each_counts(length, depth, [&](const Counts& prev) {
        std::size_t visible = length * depth;
        for (auto c : prev) visible -= c;
        for (std::size_t n = 0; n <= visible; ++n) {
          for (const auto& [k, p] : enumerate_step(prev, depth, n)) {
            auto lp = forward_step_logprob(k, prev, depth);
            REQUIRE(lp.has_value());
            CHECK(std::abs(*lp - std::log(p)) < 1e-10);
          }
        }
      });
    }
  }
}

TEST_CASE("empirical forward steps match the closed form") {
  struct Case {
    std::size_t length, depth, n;
  };
  for (Case c : {Case{2, 2, 2}, Case{3, 3, 4}, Case{2, 6, 5}, Case{3, 4, 5}, Case{4, 2, 3}}) {
    CAPTURE(c.length);
    CAPTURE(c.depth);
    Rng rng = derive_rng(99, {c.length, c.depth});
    const int trials = 100000;
    std::map<Counts, double> freq;
    for (int t = 0; t < trials; ++t) freq[binary_mask(c.n, c.length, c.depth, rng).masked] += 1.0 / trials;
    std::map<Counts, double> expected;
    for (const auto& [k, p] : freq) {
      (void)p;
      expected[k] = std::exp(*forward_step_logprob(k, Counts(c.length, 0), c.depth));
    }
    double mass = 0.0;
    for (const auto& [k, p] : expected) mass += p;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(total_variation(freq, expected) < 0.01);
  }
}

TEST_CASE("two composed forward steps match the one-shot marginal") {
  for (std::size_t second : {3u, 1u}) {
    Rng rng = derive_rng(5, {second});
    const int trials = 100000;
    std::map<Counts, double> freq;
    for (int t = 0; t < trials; ++t) {
      MaskState s = binary_mask(2, 3, 3, rng);
      s = mask_more(s, second, rng);
      CHECK(s.step == 2);
      freq[s.masked] += 1.0 / trials;
    }
    std::map<Counts, double> expected;
    for_each_counts(3, 3, [&](const Counts& c) {
      std::size_t n = 0;
      for (auto x : c) n += x;
      if (n == 2 + second) expected[c] = std::exp(*marginal_logprob(c, 3));
    });
    CHECK(total_variation(freq, expected) < 0.02);
  }
}

TEST_CASE("closed-form examples") {
  CHECK(*forward_step_logprob({1, 1}, {0, 0}, 2) == doctest::Approx(std::log(2.0 / 3.0)));
  CHECK_FALSE(forward_step_logprob({3, 0}, {0, 0}, 2).has_value());
  CHECK_FALSE(forward_step_logprob({1, 0}, {2, 0}, 2).has_value());
  CHECK(*forward_step_logprob({0, 0}, {1, 0}, 2) == 0.0);
  CHECK(*marginal_logprob({0, 0, 0}, 4) == 0.0);
  CHECK(*marginal_logprob({1, 1}, 2) == doctest::Approx(std::log(2.0 / 3.0)));
  CHECK_FALSE(marginal_logprob({3, 0}, 2).has_value());
  CHECK(*posterior_logprob({1, 2}, {1, 2}) == 0.0);
  CHECK(*posterior_logprob({0, 1}, {1, 1}) == doctest::Approx(std::log(0.5)));
  CHECK_FALSE(posterior_logprob({2, 0}, {1, 1}).has_value());
}

TEST_CASE("Bayes identity holds on every small grid") {
  // q(c_t|x0) q(k|c_t) = q(c_t1|x0) q(c_t|c_t1,x0)
  std::size_t checked = 0;
  for (std::size_t length = 1; length <= 9; ++length) {
    for (std::size_t depth = 1; length * depth <= 9; ++depth) {
      for_each_counts(length, depth, [&](const Counts& ct) {
        for_each_counts(length, depth, [&](const Counts& ct1) {
          Counts k(length);
          for (std::size_t i = 0; i < length; ++i) {
            if (ct1[i] < ct[i]) return;
            k[i] = ct1[i] - ct[i];
          }
          const double lhs = *marginal_logprob(ct, depth) + *forward_step_logprob(k, ct, depth);
          const double rhs = *marginal_logprob(ct1, depth) + *posterior_logprob(ct, ct1);
          CHECK(std::abs(lhs - rhs) < 1e-10);
          ++checked;
        });
      });
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("unmask keeps depth suffixes and reaches zero at step T") {
  Rng rng = derive_rng(3, {});
  for (const char* name : {"circle", "cosine", "exp:6"}) {
    Schedule s = parse_schedule(name);
    for (std::size_t steps : {1u, 4u, 16u, 63u}) {
      auto seq = mask_count_sequence(s, steps, 8, 4);
      MaskState st = binary_mask(seq[0], 8, 4, rng);
      st.step = 0;
      for (std::size_t t = 1; t <= steps; ++t) {
        MaskState next = binary_unmask(st, seq[t], rng);
        CHECK(next.total() == seq[t]);
        for (std::size_t i = 0; i < 8; ++i) CHECK(next.masked[i] <= st.masked[i]);
        st = next;
      }
      CHECK(st.step == steps);
      CHECK(st.total() == 0);
    }
  }
}

TEST_CASE("unmask edge cases") {
  Rng rng = derive_rng(4, {});
  MaskState st = binary_mask(5, 3, 3, rng);
  MaskState same = binary_unmask(st, 5, rng);
  CHECK(same.masked == st.masked);
  CHECK(binary_unmask(st, 0, rng).total() == 0);
  CHECK_THROWS_AS(binary_unmask(st, 6, rng), std::invalid_argument);
}

TEST_CASE("reveal distribution on q=(2,2)") {
  Rng rng = derive_rng(8, {});
  MaskState st(2, 2);
  st.masked = {2, 2};
  const int trials = 100000;
  double both = 0.0;
  for (int t = 0; t < trials; ++t) {
    MaskState next = binary_unmask(st, 2, rng);
    both += (next.masked == Counts{1, 1}) ? 1.0 / trials : 0.0;
  }
  CHECK(std::abs(both - 2.0 / 3.0) < 0.01);
}

TEST_CASE("applied masks are depth suffixes and round-trip") {
  Rng rng = derive_rng(6, {});
  TokenGrid x(5, 4);
  for (auto& t : x.tokens) t = static_cast<Token>(uniform_index(rng, 7));
  for (int trial = 0; trial < 200; ++trial) {
    MaskState st = binary_mask(uniform_index(rng, 21), 5, 4, rng);
    TokenGrid masked = apply_mask(x, st);
    CHECK(masked.depth_suffix_ok());
    MaskState back = state_of(masked);
    CHECK(back.masked == st.masked);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK((masked.at(i, j) == kMask) == st.is_masked(i, j));
        CHECK(st.mask_matrix()[i * 4 + j] == (st.is_masked(i, j) ? 0 : 1));
      }
    }
  }
  TokenGrid bad(1, 2);
  bad.at(0, 1) = 3;
  CHECK_THROWS_AS(state_of(bad), std::invalid_argument);
}

TEST_CASE("univariate hypergeometric mean") {
  Rng rng = derive_rng(12, {});
  double mean = 0.0;
  const int trials = 50000;
  for (int t = 0; t < trials; ++t) mean += static_cast<double>(sample_hypergeometric(30, 70, 20, rng));
  mean /= trials;
  CHECK(std::abs(mean - 6.0) < 0.05);
  CHECK(sample_hypergeometric(5, 0, 3, rng) == 3);
  CHECK(sample_hypergeometric(0, 5, 3, rng) == 0);
}
