#include "resgen/sampler.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "resgen/mog.hpp"

namespace resgen::sampler {

Selection parse_selection(const std::string& text) {
  if (text == "random") return Selection::kRandom;
  if (text == "confidence") return Selection::kConfidence;
  throw std::invalid_argument("unknown selection '" + text + "' (random|confidence)");
}

std::string selection_name(Selection s) {
  return s == Selection::kRandom ? "random" : "confidence";
}

void SamplerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("sampler: tau must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("sampler: top_p must be in (0, 1]");
  if (!(pi_temperature > 0.0)) throw std::invalid_argument("sampler: pi_temperature must be > 0");
  if (!std::isfinite(cfg_start) || !std::isfinite(cfg_end)) {
    throw std::invalid_argument("sampler: cfg weights must be finite");
  }
}

double SamplerConfig::cfg_weight(std::size_t t) const {
  if (steps == 1) return cfg_start;
  return cfg_start + double(t - 1) / double(steps - 1) * (cfg_end - cfg_start);
}

SamplerConfig preset(const std::string& name) {
  SamplerConfig c;
  c.selection = Selection::kConfidence;
  c.tau = 28.0;
  c.cfg_start = 0.02;
  if (name == "paper-28") {
    c.steps = 28;
    c.cfg_end = 2.4;
    c.top_p = 0.94;
  } else if (name == "paper-48") {
    c.steps = 48;
    c.cfg_end = 2.4;
    c.top_p = 0.96;
  } else if (name == "paper-64") {
    c.steps = 64;
    c.cfg_end = 2.2;
    c.top_p = 0.98;
  } else if (name == "reference-63") {
    // Only the step count is given for this setting; guidance off.
    c.steps = 63;
    c.cfg_start = 0.0;
    c.cfg_end = 0.0;
  } else {
    throw std::invalid_argument("unknown sampler preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"paper-28", "paper-48", "paper-64", "reference-63"}; }

std::vector<double> cumulative_logprob(const std::vector<std::vector<double>>& z,
                                       const TokenGrid& provisional,
                                       const masking::MaskState& state,
                                       const rvq::Codebook& book) {
  const std::size_t L = state.length, D = state.depth, H = book.dim();
  if (provisional.length != L || provisional.depth != D || book.depth() != D || z.size() != L) {
    throw std::invalid_argument("cumulative_logprob: shape mismatch");
  }
  for (std::size_t j = 0; j < D; ++j) {
    const double s = book.sigma(j);
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("cumulative_logprob: missing sigma at depth " + std::to_string(j));
    }
  }
  std::vector<double> out(L * D, -std::numeric_limits<double>::infinity());
  std::vector<double> r(H);
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t v = state.visible(i);
    if (v == D) continue;
    if (z[i].size() != H) throw std::invalid_argument("cumulative_logprob: z has wrong dimension");
    r = z[i];
    double cum = 0.0;
    for (std::size_t d = v; d < D; ++d) {
      const Token x = provisional.at(i, d);
      if (x < 0) throw std::invalid_argument("cumulative_logprob: provisional grid has MASK");
      const auto e = book.embedding(d, std::size_t(x));
      const double var = book.sigma(d) * book.sigma(d);
      double sq = 0.0;
      for (std::size_t k = 0; k < H; ++k) {
        const double diff = r[k] - e[k];
        sq += diff * diff;
        r[k] -= e[k];
      }
      cum += -0.5 * double(H) * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var;
      out[i * D + d] = cum;
    }
  }
  return out;
}

std::vector<double> confidence_scores(const std::vector<std::vector<double>>& z,
                                      const TokenGrid& provisional,
                                      const masking::MaskState& state,
                                      const rvq::Codebook& book, double tau, Rng& rng) {
  auto scores = cumulative_logprob(z, provisional, state, book);
  if (tau == 0.0) return scores;
  for (std::size_t i = 0; i < state.length; ++i) {
    for (std::size_t d = state.visible(i); d < state.depth; ++d) {
      scores[i * state.depth + d] += tau * standard_gumbel(rng);
    }
  }
  return scores;
}

std::vector<std::size_t> frontier_order(const std::vector<double>& scores,
                                        const masking::MaskState& state, std::size_t count) {
  const std::size_t L = state.length, D = state.depth;
  if (scores.size() != L * D) throw std::invalid_argument("frontier_order: scores size");
  if (count > state.total()) throw std::invalid_argument("frontier_order: count exceeds masked slots");
  std::vector<std::size_t> vis(L);
  for (std::size_t i = 0; i < L; ++i) vis[i] = state.visible(i);
  std::vector<std::size_t> order;
  order.reserve(count);
  while (order.size() < count) {
    std::size_t best = L;
    for (std::size_t i = 0; i < L; ++i) {
      if (vis[i] == D) continue;
      if (best == L || scores[i * D + vis[i]] > scores[best * D + vis[best]]) best = i;
    }
    order.push_back(best);
    ++vis[best];
  }
  return order;
}

masking::MaskState select_unmask(const std::vector<double>& scores,
                                 const masking::MaskState& state, std::size_t n_target) {
  const std::size_t total = state.total();
  if (n_target > total) throw std::invalid_argument("select_unmask: target exceeds masked count");
  masking::MaskState next = state;
  for (std::size_t i : frontier_order(scores, state, total - n_target)) --next.masked[i];
  ++next.step;
  return next;
}

Result generate(const backbone::Model& model, const TensorMap& params, const rvq::Codebook& book,
                std::size_t label, const SamplerConfig& config,
                const std::function<void(const StepView&)>& observer) {
  config.validate();
  const auto& c = model.config();
  const std::size_t L = c.length, D = c.depth, H = c.dim;
  if (book.depth() != D || book.vocab() != c.vocab || book.dim() != H) {
    throw std::invalid_argument("generate: codebook does not match the model");
  }
  if (label > c.num_classes) throw std::invalid_argument("generate: label out of range");
  const std::size_t start_passes = model.forward_passes();
  const bool guided = config.guided(label);
  const mog::Basis basis = model.basis(params);

  masking::MaskState state(L, D);
  state.masked.assign(L, D);
  TokenGrid provisional(L, D);
  std::vector<std::size_t> start(L);

  for (std::size_t t = 1; t <= config.steps; ++t) {
    Rng rng = derive_rng(config.seed, {0x53414d50, t});
    const TokenGrid input = masking::apply_mask(provisional, state);
    auto pred = model.predict(params, model.embed({{&input, label}}, book));
    if (guided) {
      const auto uncond = model.predict(params, model.embed({{&input, 0}}, book));
      const double w = config.cfg_weight(t);
      for (std::size_t i = 0; i < L; ++i) pred[i] = mog::cfg_combine(pred[i], uncond[i], w);
    }

    std::vector<std::vector<double>> z(L);
    rvq::LatentSequence latents(L, H);
    for (std::size_t i = 0; i < L; ++i) {
      start[i] = state.visible(i);
      if (start[i] == D) continue;
      z[i] = mog::sample(pred[i], basis, rng, config.top_p, config.pi_temperature);
      std::copy(z[i].begin(), z[i].end(), latents.row(i).begin());
    }
    provisional = rvq::quantize(latents, book, start, std::move(provisional));

    const std::size_t n = std::min(masking::mask_count(config.schedule, double(t) / double(config.steps), L, D),
                                   state.total());
    const masking::MaskState before = state;
    if (config.selection == Selection::kRandom) {
      state = masking::binary_unmask(state, n, rng);
    } else {
      const auto scores = confidence_scores(z, provisional, state, book, config.tau, rng);
      state = select_unmask(scores, state, n);
    }
    if (observer) observer(StepView{t, &before, &state, &provisional, &z});
  }
  if (state.total() != 0) throw std::logic_error("generate: grid not fully revealed after the last step");
  return Result{std::move(provisional), model.forward_passes() - start_passes};
}

}  // namespace resgen::sampler
