#include <cmath>
#include <numbers>
#include <stdexcept>

#include "doctest.h"
#include "resgen/sampler.hpp"

using namespace resgen;
using namespace resgen::sampler;

namespace {

backbone::BackboneConfig cfg(std::size_t length, std::size_t depth, std::size_t classes = 2) {
  backbone::BackboneConfig c;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.components = 3;
  c.rank = 2;
  c.length = length;
  c.depth = depth;
  c.vocab = 4;
  c.dim = 2;
  c.num_classes = classes;
  return c;
}

rvq::Codebook book_for(const backbone::BackboneConfig& c, std::uint64_t seed) {
  rvq::Codebook book(c.depth, c.vocab, c.dim);
  Rng rng = derive_rng(seed, {});
  for (std::size_t j = 0; j < c.depth; ++j) {
    const double scale = std::pow(0.5, double(j));
    for (std::size_t v = 0; v < c.vocab; ++v) {
      for (double& x : book.embedding(j, v)) x = scale * standard_normal(rng);
    }
    book.set_sigma(j, scale);
  }
  return book;
}

TensorMap params_for(const backbone::Model& m, std::uint64_t seed) {
  TensorMap p = m.init_params(seed);
  Rng rng = derive_rng(seed, {1});
  for (auto& [name, t] : p) {
    for (double& v : t.data) v += 0.3 * standard_normal(rng);
  }
  return p;
}

}  // namespace

TEST_CASE("guidance weight is linear from start to end") {
  SamplerConfig c;
  c.steps = 5;
  c.cfg_start = 0.5;
  c.cfg_end = 2.5;
  CHECK(c.cfg_weight(1) == 0.5);
  CHECK(c.cfg_weight(5) == 2.5);
  CHECK(c.cfg_weight(3) == 0.5 + 2.0 / 4.0 * 2.0);
  c.steps = 1;
  CHECK(c.cfg_weight(1) == 0.5);
}

TEST_CASE("presets carry their sampling settings") {
  auto p = preset("paper-64");
  CHECK(p.steps == 64);
  CHECK(p.cfg_start == 0.02);
  CHECK(p.cfg_end == 2.2);
  CHECK(p.top_p == 0.98);
  CHECK(p.tau == 28.0);
  CHECK(preset("paper-28").top_p == 0.94);
  CHECK(preset("paper-48").cfg_end == 2.4);
  CHECK(preset("reference-63").steps == 63);
  CHECK_THROWS_AS(preset("nope"), std::invalid_argument);
  SamplerConfig bad;
  bad.top_p = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = SamplerConfig{};
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("forward passes equal T, or 2T with guidance, for every depth") {
  for (std::size_t D : {2, 4, 8, 16}) {
    auto c = cfg(16, D);
    backbone::Model model(c);
    auto params = params_for(model, 3);
    auto book = book_for(c, 4);
    SamplerConfig sc;
    sc.steps = 6;
    sc.tau = 1.0;
    auto r = generate(model, params, book, 1, sc);
    CHECK(r.forward_passes == 6);
    sc.cfg_start = 0.1;
    sc.cfg_end = 1.0;
    CHECK(generate(model, params, book, 1, sc).forward_passes == 12);
    CHECK(generate(model, params, book, 0, sc).forward_passes == 6);
  }
}

TEST_CASE("a single step fills the entire grid") {
  auto c = cfg(4, 3);
  backbone::Model model(c);
  auto params = params_for(model, 5);
  auto book = book_for(c, 6);
  for (auto sel : {Selection::kRandom, Selection::kConfidence}) {
    SamplerConfig sc;
    sc.steps = 1;
    sc.selection = sel;
    std::size_t calls = 0;
    auto r = generate(model, params, book, 2, sc, [&](const StepView& v) {
      ++calls;
      CHECK(v.state->total() == 0);
    });
    CHECK(calls == 1);
    CHECK(r.forward_passes == 1);
    for (Token x : r.grid.tokens) CHECK(x >= 0);
  }
}

TEST_CASE("masks stay depth suffixes and revealed tokens never change") {
  auto c = cfg(5, 3);
  backbone::Model model(c);
  auto params = params_for(model, 7);
  auto book = book_for(c, 8);
  Rng rng = derive_rng(9, {});
  const char* schedules[] = {"circle", "cosine", "exp"};
  for (int run = 0; run < 30; ++run) {
    SamplerConfig sc;
    sc.steps = 1 + uniform_index(rng, 20);
    sc.schedule = masking::parse_schedule(schedules[uniform_index(rng, 3)]);
    sc.selection = uniform_index(rng, 2) ? Selection::kRandom : Selection::kConfidence;
    sc.tau = uniform_index(rng, 2) ? 0.0 : 28.0;
    sc.top_p = 0.5 + 0.5 * uniform01(rng);
    sc.seed = run;
    TokenGrid revealed(c.length, c.depth);
    std::size_t prev_total = c.length * c.depth;
    auto r = generate(model, params, book, run % 3, sc, [&](const StepView& v) {
      TokenGrid visible = masking::apply_mask(*v.provisional, *v.state);
      CHECK(visible.depth_suffix_ok());
      CHECK(v.state->total() == std::min(prev_total, masking::mask_count(sc.schedule, double(v.t) / double(sc.steps),
                                                                          c.length, c.depth)));
      prev_total = v.state->total();
      for (std::size_t k = 0; k < visible.tokens.size(); ++k) {
        if (revealed.tokens[k] != kMask) CHECK(visible.tokens[k] == revealed.tokens[k]);
        if (revealed.tokens[k] == kMask) CHECK((visible.tokens[k] == kMask || visible.tokens[k] >= 0));
      }
      revealed = visible;
    });
    CHECK(r.grid == revealed);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  auto c = cfg(6, 3);
  backbone::Model model(c);
  auto params = params_for(model, 10);
  auto book = book_for(c, 11);
  SamplerConfig sc;
  sc.steps = 5;
  sc.tau = 28.0;
  sc.seed = 42;
  sc.cfg_end = 1.5;
  auto a = generate(model, params, book, 1, sc);
  auto b = generate(model, params, book, 1, sc);
  CHECK(a.grid == b.grid);
  sc.seed = 43;
  bool differs = false;
  for (int k = 0; k < 5 && !differs; ++k) {
    sc.seed = 43 + k;
    differs = generate(model, params, book, 1, sc).grid != a.grid;
  }
  CHECK(differs);
}

TEST_CASE("an exact codeword hit scores the Gaussian peak") {
  auto c = cfg(1, 2);
  auto book = book_for(c, 12);
  TokenGrid g(1, 2);
  g.at(0, 0) = 1;
  g.at(0, 1) = 3;
  masking::MaskState s(1, 2);
  s.masked = {1};
  auto e = book.embedding(1, 3);
  std::vector<std::vector<double>> z{{e[0], e[1]}};
  auto lp = cumulative_logprob(z, g, s, book);
  const double var = book.sigma(1) * book.sigma(1);
  CHECK(lp[1] == doctest::Approx(-0.5 * 2.0 * std::log(2.0 * std::numbers::pi * var)).epsilon(1e-14));
  CHECK(std::isinf(lp[0]));
  // Cumulative across masked depths.
  s.masked = {2};
  auto e0 = book.embedding(0, 1);
  z = {{e0[0] + e[0], e0[1] + e[1]}};
  lp = cumulative_logprob(z, g, s, book);
  const double var0 = book.sigma(0) * book.sigma(0);
  CHECK(lp[0] == doctest::Approx(-std::log(2.0 * std::numbers::pi * var0) - 0.5 * (e[0] * e[0] + e[1] * e[1]) / var0));
  CHECK(lp[1] == doctest::Approx(lp[0] - std::log(2.0 * std::numbers::pi * var)));
  book.set_sigma(1, 0.0);
  CHECK_THROWS_AS(cumulative_logprob(z, g, s, book), std::invalid_argument);
}

TEST_CASE("zero temperature leaves the scores untouched") {
  auto c = cfg(4, 3);
  auto book = book_for(c, 13);
  Rng rng = derive_rng(14, {});
  TokenGrid g(4, 3);
  for (Token& x : g.tokens) x = Token(uniform_index(rng, 4));
  masking::MaskState s(4, 3);
  s.masked = {3, 1, 0, 2};
  std::vector<std::vector<double>> z(4);
  for (std::size_t i = 0; i < 4; ++i) z[i] = {standard_normal(rng), standard_normal(rng)};
  Rng r1 = derive_rng(15, {}), r2 = derive_rng(15, {});
  auto plain = cumulative_logprob(z, g, s, book);
  auto noisy0 = confidence_scores(z, g, s, book, 0.0, r1);
  CHECK(plain == noisy0);
  CHECK(r1 == r2);  // no noise drawn
  auto noisy = confidence_scores(z, g, s, book, 28.0, r2);
  CHECK(noisy != plain);
}

TEST_CASE("frontier selection respects dominance and suffixes") {
  masking::MaskState s(2, 3);
  s.masked = {3, 3};
  // Position 1 beats position 0 at every depth.
  std::vector<double> scores{-5, -6, -7, -1, -2, -3};
  CHECK(frontier_order(scores, s, 3) == std::vector<std::size_t>{1, 1, 1});
  auto next = select_unmask(scores, s, 3);
  CHECK(next.masked == masking::Counts{3, 0});
  CHECK(select_unmask(scores, s, 6).masked == s.masked);
  CHECK_THROWS_AS(select_unmask(scores, s, 7), std::invalid_argument);
  // Ties go to the lower position.
  std::vector<double> flat(6, 0.0);
  CHECK(frontier_order(flat, s, 2) == std::vector<std::size_t>{0, 0});

  Rng rng = derive_rng(16, {});
  for (int trial = 0; trial < 200; ++trial) {
    masking::MaskState st(5, 4);
    for (auto& m : st.masked) m = uniform_index(rng, 5);
    std::vector<double> sc(20);
    for (double& v : sc) v = standard_normal(rng);
    const std::size_t target = uniform_index(rng, st.total() + 1);
    auto out = select_unmask(sc, st, target);
    CHECK(out.total() == target);
    for (std::size_t i = 0; i < 5; ++i) CHECK(out.masked[i] <= st.masked[i]);
  }
}

TEST_CASE("invalid requests are rejected") {
  auto c = cfg(4, 2);
  backbone::Model model(c);
  auto params = params_for(model, 17);
  auto book = book_for(c, 18);
  SamplerConfig sc;
  CHECK_THROWS_AS(generate(model, params, book, 3, sc), std::invalid_argument);
  rvq::Codebook other(3, 4, 2);
  CHECK_THROWS_AS(generate(model, params, other, 1, sc), std::invalid_argument);
  CHECK(parse_selection("random") == Selection::kRandom);
  CHECK_THROWS_AS(parse_selection("greedy"), std::invalid_argument);
}
