#pragma once

// Masked-diffusion training: per-sample mask ratios, hypergeometric masks,
// cumulative masked-embedding targets, AdamW with warmup, EMA, and the
// variational-bound diagnostic.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "resgen/backbone.hpp"
#include "resgen/masking.hpp"
#include "resgen/rvq.hpp"
#include "resgen/tensor.hpp"

namespace resgen::trainer {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 32;
  double lr = 3e-4;
  std::size_t warmup = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip = 1.0;  // global gradient-norm clip; 0 disables
  double ema_decay = 0.999;
  double label_dropout = 0.1;
  masking::Schedule schedule{};
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::vector<std::size_t> audit_steps{0, 1000};

  void validate() const;
};

// Quantized training set; labels in [0, num_classes] with 0 = null.
struct TokenDataset {
  std::vector<TokenGrid> grids;
  std::vector<std::size_t> labels;
  std::size_t size() const { return grids.size(); }
};

struct TrainState {
  TensorMap params;
  TensorMap adam_m;
  TensorMap adam_v;
  TensorMap ema;
  std::size_t step = 0;
  std::uint64_t root_seed = 0;
};

TrainState init_state(const backbone::Model& model, std::uint64_t seed);

struct Target {
  std::vector<double> z;          // L x H; zero rows where excluded
  std::vector<bool> included;     // positions with at least one masked depth
  std::size_t count = 0;
};

// z_i = sum of the embeddings at masked depths of position i.
Target build_target(const TokenGrid& grid, const masking::MaskState& mask,
                    const rvq::Codebook& book);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepResult {
  double loss = 0.0;    // mean surrogate over masked positions
  double exact = 0.0;   // mean exact NLL over the same positions
  double gap = 0.0;     // loss - exact
  double grad_norm = 0.0;
  std::size_t positions = 0;
  bool audited = false;
  double audit_error = 0.0;
};

// One optimizer step. Randomness comes only from (root_seed, step).
StepResult train_step(const backbone::Model& model, const rvq::Codebook& book,
                      const TokenDataset& data, const TrainConfig& config, TrainState& state);

// key=value metrics record.
std::string metrics_line(std::size_t step, const StepResult& r);

// Runs until state.step == config.steps. `on_step` runs after each step.
void train(const backbone::Model& model, const rvq::Codebook& book, const TokenDataset& data,
           const TrainConfig& config, TrainState& state, std::ostream* log,
           const std::function<void(const TrainState&, const StepResult&)>& on_step = {});

// Mean exact NLL of the masked-embedding targets over positions with at
// least one masked depth, evaluated through the value-level mixture path.
double simple_loss(const backbone::Model& model, const TensorMap& params,
                   const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                   const masking::MaskState& mask);

// Same quantity through the training graph.
double simple_loss_graph(const backbone::Model& model, const TensorMap& params,
                         const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                         const masking::MaskState& mask);

// Masked count at diffusion time t of T: time T is fully masked, time 0 clean.
std::size_t forward_count(const masking::Schedule& s, std::size_t t, std::size_t steps,
                          std::size_t length, std::size_t depth);

struct VlbReport {
  double prior = 0.0;               // L_T
  std::vector<double> transitions;  // L_t for t = 1..T-1
  double transition_sum = 0.0;
  double reconstruction = 0.0;      // L_0
};

// Single-trajectory Monte-Carlo estimate. The model's probability of the
// revealed token values is estimated per position from `samples` draws of
// z, quantized from the revealed depth and compared with the data tokens.
VlbReport vlb_diagnostic(const backbone::Model& model, const TensorMap& params,
                         const rvq::Codebook& book, const TokenGrid& grid, std::size_t label,
                         const masking::Schedule& schedule, std::size_t steps,
                         std::size_t samples, Rng& rng);

}  // namespace resgen::trainer
