#pragma once

// Desk-scale evaluation: Gaussian Frechet distance on raw vectors, codebook
// usage, mode coverage, and the depth / schedule / sampler sweeps.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resgen/backbone.hpp"
#include "resgen/dataset.hpp"
#include "resgen/rvq.hpp"
#include "resgen/sampler.hpp"
#include "resgen/synth.hpp"
#include "resgen/trainer.hpp"

namespace resgen::eval {

class DegenerateCovariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Frechet {
  double distance = 0.0;
  double condition_a = 0.0;  // eigenvalue ratio of each sample covariance
  double condition_b = 0.0;
};

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) for row-major sets
// of `dim`-vectors. Needs at least dim + 1 rows in each set. Eigenvalues in
// [-1e-8, 0) are clamped; anything lower throws DegenerateCovariance.
Frechet frechet(std::span<const double> a, std::span<const double> b, std::size_t dim);
double frechet_distance(std::span<const double> a, std::span<const double> b, std::size_t dim);

// Distance between the first and second halves of a set.
double half_split_distance(std::span<const double> rows, std::size_t dim);

// Entropy (nats) of the token histogram at each depth.
std::vector<double> usage_entropy(const std::vector<TokenGrid>& grids, std::size_t depth,
                                  std::size_t vocab);

// Fraction of records nearest to each mode mean.
std::vector<double> mode_occupancy(const synth::Truth& truth, const data::Dataset& records);

// ---------------------------------------------------------------------------
// Train-and-sample pipeline shared by the sweeps.

struct Pipeline {
  rvq::FitOptions rvq;
  backbone::BackboneConfig model;  // length, dim, depth, vocab, classes come from the data
  trainer::TrainConfig train;
  sampler::SamplerConfig sample;
  std::size_t samples = 500;
  bool use_ema = true;
};

struct Trained {
  rvq::Codebook book;
  backbone::Model model;
  trainer::TrainState state;
  const TensorMap& sampling_params(bool ema) const { return ema ? state.ema : state.params; }
};

trainer::TokenDataset quantize_dataset(const data::Dataset& d, const rvq::Codebook& book);

backbone::BackboneConfig model_config_for(const data::Dataset& d, const Pipeline& p);

Trained fit_and_train(const data::Dataset& train, const Pipeline& p, std::ostream* log = nullptr);

struct Samples {
  data::Dataset vectors;  // full-depth dequantized grids
  std::vector<TokenGrid> grids;
  std::size_t forward_passes = 0;
  double seconds = 0.0;
};

// Sample n uses label labels[n % labels.size()] (0 when empty) and a seed
// derived from (config.seed, n).
Samples sample_many(const backbone::Model& model, const TensorMap& params, const rvq::Codebook& book,
                    const sampler::SamplerConfig& config, std::size_t count,
                    const std::vector<std::uint32_t>& labels);

struct DepthRow {
  std::size_t depth = 0;
  double recon_mse = 0.0;  // per vector, full depth, on the training set
  double fd = 0.0;
};

std::vector<DepthRow> depth_sweep(const data::Dataset& train, const data::Dataset& heldout,
                                  const std::vector<std::size_t>& depths, const Pipeline& p);

struct GridCell {
  std::string train_schedule;
  std::string sample_schedule;
  bool cfg = false;
  double fd = 0.0;
};

// One model per training schedule, each evaluated under every sampling
// schedule with guidance off and with (cfg_start, cfg_end).
std::vector<GridCell> schedule_grid(const data::Dataset& train, const data::Dataset& heldout,
                                    const std::vector<masking::Schedule>& schedules, const Pipeline& p,
                                    double cfg_start, double cfg_end);

struct StatsRow {
  std::string parameter;  // steps | top_p | tau
  double value = 0.0;
  double fd = 0.0;
};

// Sweeps steps {8,16,32,63}, top_p and tau one at a time around `base`.
std::vector<StatsRow> sampler_stats(const Trained& t, const data::Dataset& heldout,
                                    const sampler::SamplerConfig& base, std::size_t count, bool ema);

struct EvalReport {
  double fd = 0.0;
  double baseline = -1.0;  // held-out half-split distance; negative when absent
  std::vector<double> recon_mse_by_depth;
  std::size_t forward_passes = 0;
  std::vector<double> usage_entropy;
  std::vector<double> occupancy;
  double wall_time = -1.0;  // omitted when negative, keeping reports reproducible
};

std::string format_report(const EvalReport& r);
std::string depth_csv(const std::vector<DepthRow>& rows);
std::string grid_csv(const std::vector<GridCell>& cells);
std::string stats_csv(const std::vector<StatsRow>& rows);

}  // namespace resgen::eval
