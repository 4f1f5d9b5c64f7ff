#include "resgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace resgen::trainer {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be >= 0");
  if (batch == 0) throw std::invalid_argument("batch size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1]");
  if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) {
    throw std::invalid_argument("label dropout must lie in [0, 1]");
  }
  if (clip < 0.0) throw std::invalid_argument("gradient clip must be >= 0");
}

TrainState init_state(const backbone::Model& model, std::uint64_t seed) {
  TrainState s;
  s.params = model.init_params(seed);
  for (const auto& [name, t] : s.params) {
    s.adam_m.emplace(name, Tensor(t.shape));
    s.adam_v.emplace(name, Tensor(t.shape));
  }
  s.ema = s.params;
  s.root_seed = seed;
  return s;
}

Target build_target(const TokenGrid& grid, const masking::MaskState& mask,
                    const rvq::Codebook& book) {
  if (grid.length != mask.length || grid.depth != mask.depth || grid.depth != book.depth()) {
    throw std::invalid_argument("build_target: grid, mask and codebook extents differ");
  }
  Target t;
  t.z.assign(grid.length * book.dim(), 0.0);
  t.included.assign(grid.length, false);
  for (std::size_t i = 0; i < grid.length; ++i) {
    if (mask.masked[i] == 0) continue;
    t.included[i] = true;
    ++t.count;
    rvq::accumulate_embeddings(grid, book, i, mask.visible(i), grid.depth,
                               std::span<double>(t.z.data() + i * book.dim(), book.dim()));
  }
  return t;
}

namespace {

struct PreparedBatch {
  backbone::Batch batch;
  Tensor z, weights;
  std::size_t positions = 0;
  std::string describe;
};

PreparedBatch prepare(const backbone::Model& model, const rvq::Codebook& book,
                      const TokenDataset& data, const TrainConfig& config, Rng& rng) {
  const auto& c = model.config();
  const std::size_t rows = config.batch * c.length;
  std::vector<TokenGrid> masked(config.batch);
  std::vector<backbone::Example> examples(config.batch);
  PreparedBatch out;
  out.z = Tensor({rows, c.dim});
  out.weights = Tensor({rows});
  std::vector<bool> included(rows, false);
  std::ostringstream desc;
  for (std::size_t b = 0; b < config.batch; ++b) {
    const std::size_t idx = uniform_index(rng, data.size());
    const double r = uniform01(rng);
    const std::size_t n = masking::mask_count(config.schedule, r, c.length, c.depth);
    const auto mask = masking::binary_mask(n, c.length, c.depth, rng);
    std::size_t label = data.labels[idx];
    if (uniform01(rng) < config.label_dropout) label = 0;
    masked[b] = masking::apply_mask(data.grids[idx], mask);
    examples[b] = {&masked[b], label};
    const Target t = build_target(data.grids[idx], mask, book);
    std::copy(t.z.begin(), t.z.end(), out.z.data.begin() + std::ptrdiff_t(b * c.length * c.dim));
    for (std::size_t i = 0; i < c.length; ++i) included[b * c.length + i] = t.included[i];
    out.positions += t.count;
    desc << " [sample=" << idx << " r=" << r << " n=" << n << " label=" << label << "]";
  }
  if (out.positions > 0) {
    const double w = 1.0 / double(out.positions);
    for (std::size_t r = 0; r < rows; ++r) out.weights.data[r] = included[r] ? w : 0.0;
  }
  out.batch = model.embed(examples, book);
  out.batch.inputs.emplace("z", out.z);
  out.batch.inputs.emplace("weights", out.weights);
  out.describe = desc.str();
  return out;
}

void adamw(const TrainConfig& config, TrainState& state, TensorMap& grads, double scale) {
  const double t = double(state.step + 1);
  const double warm = config.warmup == 0 ? 1.0 : std::min(1.0, t / double(config.warmup));
  const double lr = config.lr * warm;
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : state.params) {
    const auto& g = grads.at(name).data;
    auto& m = state.adam_m.at(name).data;
    auto& v = state.adam_v.at(name).data;
    const bool decay = p.rank() >= 2;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double gk = g[k] * scale;
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
      double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
      if (decay) update += config.weight_decay * p.data[k];
      p.data[k] -= lr * update;
    }
  }
  for (auto& [name, e] : state.ema) {
    const auto& p = state.params.at(name).data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      e.data[k] = config.ema_decay * e.data[k] + (1.0 - config.ema_decay) * p[k];
    }
  }
}

}  // namespace

StepResult train_step(const backbone::Model& model, const rvq::Codebook& book,
                      const TokenDataset& data, const TrainConfig& config, TrainState& state) {
  if (data.size() == 0) throw std::invalid_argument("training set is empty");
  Rng rng = derive_rng(state.root_seed, {state.step});
  PreparedBatch pb = prepare(model, book, data, config, rng);
  const auto& tg = model.train_graph(config.batch);

  StepResult res;
  res.positions = pb.positions;
  TensorMap grads;
  try {
    nn::Pass pass = nn::forward(tg.graph, pb.batch.inputs, state.params);
    res.loss = pass.scalar(tg.loss.surrogate);
    res.exact = pass.scalar(tg.loss.exact);
    if (!std::isfinite(res.loss) || !std::isfinite(res.exact)) {
      throw std::domain_error("non-finite loss");
    }
    grads = nn::backward(tg.graph, pass, tg.loss.surrogate);
  } catch (const std::domain_error& e) {
    throw TrainingError("step " + std::to_string(state.step) + ": " + e.what() +
                        "; batch:" + pb.describe);
  }
  res.gap = res.loss - res.exact;
  if (res.gap < -1e-9) {
    throw TrainingError("step " + std::to_string(state.step) + ": surrogate below exact NLL by " +
                        std::to_string(-res.gap));
  }

  if (std::find(config.audit_steps.begin(), config.audit_steps.end(), state.step) !=
      config.audit_steps.end()) {
    nn::FdOptions fd;
    fd.directional = true;
    fd.seed = state.step;
    const auto rep = nn::finite_difference_check(tg.graph, pb.batch.inputs, state.params,
                                                 tg.loss.exact, fd);
    res.audited = true;
    res.audit_error = rep.max_rel_error;
  }

  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.data) sq += x * x;
  }
  res.grad_norm = std::sqrt(sq);
  const double scale =
      config.clip > 0.0 && res.grad_norm > config.clip ? config.clip / res.grad_norm : 1.0;
  adamw(config, state, grads, scale);
  ++state.step;
  return res;
}

std::string metrics_line(std::size_t step, const StepResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step=%zu loss=%.6f exact=%.6f gap=%.3e grad_norm=%.4e positions=%zu",
                step, r.loss, r.exact, r.gap, r.grad_norm, r.positions);
  std::string line = buf;
  if (r.audited) {
    std::snprintf(buf, sizeof buf, " grad_audit=%s audit_rel_err=%.3e",
                  r.audit_error < 1e-4 ? "pass" : "fail", r.audit_error);
    line += buf;
  }
  return line;
}

void train(const backbone::Model& model, const rvq::Codebook& book, const TokenDataset& data,
           const TrainConfig& config, TrainState& state, std::ostream* log,
           const std::function<void(const TrainState&, const StepResult&)>& on_step) {
  config.validate();
  while (state.step < config.steps) {
    const std::size_t step = state.step;
    const StepResult r = train_step(model, book, data, config, state);
    if (log && (r.audited || step % std::max<std::size_t>(config.log_every, 1) == 0 ||
                state.step == config.steps)) {
      *log << metrics_line(step, r) << '\n';
    }
    if (on_step) on_step(state, r);
  }
}

double simple_loss(const backbone::Model& model, const TensorMap& params,
                   const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                   const masking::MaskState& mask) {
  const Target t = build_target(grid, mask, book);
  if (t.count == 0) return 0.0;
  const TokenGrid masked = masking::apply_mask(grid, mask);
  const auto out = model.predict(params, model.embed({{&masked, label}}, book));
  const auto basis = model.basis(params);
  double total = 0.0;
  for (std::size_t i = 0; i < grid.length; ++i) {
    if (!t.included[i]) continue;
    total += mog::exact_nll(out[i], basis,
                            std::span<const double>(t.z.data() + i * book.dim(), book.dim()));
  }
  return total / double(t.count);
}

double simple_loss_graph(const backbone::Model& model, const TensorMap& params,
                         const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                         const masking::MaskState& mask) {
  const Target t = build_target(grid, mask, book);
  if (t.count == 0) return 0.0;
  const TokenGrid masked = masking::apply_mask(grid, mask);
  backbone::Batch batch = model.embed({{&masked, label}}, book);
  Tensor w({grid.length});
  for (std::size_t i = 0; i < grid.length; ++i) w.data[i] = t.included[i] ? 1.0 / double(t.count) : 0.0;
  batch.inputs.emplace("z", Tensor({grid.length, book.dim()}, t.z));
  batch.inputs.emplace("weights", std::move(w));
  const auto& tg = model.train_graph(1);
  return nn::forward(tg.graph, batch.inputs, params).scalar(tg.loss.exact);
}

std::size_t forward_count(const masking::Schedule& s, std::size_t t, std::size_t steps,
                          std::size_t length, std::size_t depth) {
  if (steps == 0 || t > steps) throw std::invalid_argument("diffusion time outside [0, T]");
  return masking::mask_count(s, 1.0 - double(t) / double(steps), length, depth);
}

VlbReport vlb_diagnostic(const backbone::Model& model, const TensorMap& params,
                         const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                         const masking::Schedule& schedule, std::size_t steps,
                         std::size_t samples, Rng& rng) {
  if (steps == 0 || samples == 0) throw std::invalid_argument("need T >= 1 and samples >= 1");
  const std::size_t length = grid.length, depth = grid.depth;
  std::vector<masking::MaskState> states(steps + 1);
  states[0] = masking::MaskState(length, depth);
  std::size_t prev = 0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const std::size_t n = forward_count(schedule, t, steps, length, depth);
    states[t] = masking::mask_more(states[t - 1], n - prev, rng);
    prev = n;
  }

  VlbReport rep;
  rep.prior = 0.0;  // x^T is fully masked under both q and the prior
  rep.transitions.assign(steps > 0 ? steps - 1 : 0, 0.0);
  const auto basis = model.basis(params);
  const double floor = 1.0 / (2.0 * double(samples));
  std::vector<double> r(book.dim());

  for (std::size_t t = steps; t-- > 0;) {
    const auto& from = states[t + 1];
    const auto& to = states[t];
    const TokenGrid noisy = masking::apply_mask(grid, from);
    const auto out = model.predict(params, model.embed({{&noisy, label}}, book));
    double log_p = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t start = from.visible(i), end = to.visible(i);
      if (start == end) continue;
      std::size_t hits = 0;
      for (std::size_t s = 0; s < samples; ++s) {
        r = mog::sample(out[i], basis, rng);
        bool match = true;
        for (std::size_t j = start; j < end && match; ++j) {
          const std::size_t v = rvq::nearest_codeword(book, j, r);
          match = Token(v) == grid.at(i, j);
          const auto e = book.embedding(j, v);
          for (std::size_t k = 0; k < r.size(); ++k) r[k] -= e[k];
        }
        hits += match;
      }
      log_p += std::log(std::max(double(hits) / double(samples), floor));
    }
    // p(x^t | x^{t+1}) = q(counts_t | counts_t+1) * P(revealed values); the
    // count factor is shared with q(x^t | x^{t+1}, x^0) and cancels.
    const double lq = *masking::posterior_logprob(to.masked, from.masked);
    const double term = lq - (lq + log_p);
    if (t == 0) {
      rep.reconstruction = term;
    } else {
      rep.transitions[t - 1] = term;
      rep.transition_sum += term;
    }
  }
  return rep;
}

}  // namespace resgen::trainer
