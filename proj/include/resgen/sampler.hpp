#pragma once

// Iterative unmasking from a fully masked grid. Each of the T steps makes one
// model call (two with guidance), samples z at masked positions, re-quantizes
// the masked depths and reveals tokens until the scheduled count remains.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resgen/backbone.hpp"
#include "resgen/masking.hpp"
#include "resgen/rvq.hpp"

namespace resgen::sampler {

enum class Selection { kRandom, kConfidence };

Selection parse_selection(const std::string& text);
std::string selection_name(Selection s);

struct SamplerConfig {
  std::size_t steps = 16;
  masking::Schedule schedule{};
  Selection selection = Selection::kConfidence;
  double tau = 0.0;          // Gumbel scale on confidence scores
  double top_p = 1.0;
  double pi_temperature = 1.0;  // divides mixture logits; separate from tau
  double cfg_start = 0.0;
  double cfg_end = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  // Guidance runs when either weight is nonzero and the label is not null.
  bool guided(std::size_t label) const { return label != 0 && (cfg_start != 0.0 || cfg_end != 0.0); }
  // cfg_start + (t-1)/(T-1) (cfg_end - cfg_start); cfg_start when T = 1.
  double cfg_weight(std::size_t t) const;
};

// paper-28, paper-48, paper-64 and reference-63.
SamplerConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Per masked slot (i, j): sum over masked depths d in [visible(i), j] of
// log N(r_d; e(x_d; d), sigma_d^2 I), where r_d is z_i minus the embeddings of
// the provisional tokens between visible(i) and d. Revealed slots get -inf
// before noise. Returned position-major L x D.
std::vector<double> cumulative_logprob(const std::vector<std::vector<double>>& z,
                                       const TokenGrid& provisional,
                                       const masking::MaskState& state,
                                       const rvq::Codebook& book);

// cumulative_logprob + tau * Gumbel(0,1) on masked slots.
std::vector<double> confidence_scores(const std::vector<std::vector<double>>& z,
                                      const TokenGrid& provisional,
                                      const masking::MaskState& state,
                                      const rvq::Codebook& book, double tau, Rng& rng);

// Reveal order for the next reveals: repeatedly takes the frontier slot
// (i, visible(i)) with the highest score; ties go to the lowest position.
// Returns `count` positions, one per revealed slot.
std::vector<std::size_t> frontier_order(const std::vector<double>& scores,
                                        const masking::MaskState& state, std::size_t count);

// Confidence selection down to n_target masked slots.
masking::MaskState select_unmask(const std::vector<double>& scores,
                                 const masking::MaskState& state, std::size_t n_target);

struct StepView {
  std::size_t t = 0;
  const masking::MaskState* before = nullptr;  // mask the model saw
  const masking::MaskState* state = nullptr;   // after this step's reveals
  const TokenGrid* provisional = nullptr;      // all depths filled
  const std::vector<std::vector<double>>* z = nullptr;  // empty at revealed positions
};

struct Result {
  TokenGrid grid;
  std::size_t forward_passes = 0;
};

Result generate(const backbone::Model& model, const TensorMap& params, const rvq::Codebook& book,
                std::size_t label, const SamplerConfig& config,
                const std::function<void(const StepView&)>& observer = {});

}  // namespace resgen::sampler
