#pragma once

// Transformer over the L positions of a partially masked token grid. Each
// position is fed the sum of its revealed codeword embeddings plus its masked
// fraction; every layer norm is modulated by a per-sample condition built
// from the class label and the grid's masked fraction. The outputs are the
// per-position mixture head parameters.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "resgen/graph.hpp"
#include "resgen/masking.hpp"
#include "resgen/mog.hpp"
#include "resgen/rvq.hpp"
#include "resgen/tensor.hpp"

namespace resgen::backbone {

struct BackboneConfig {
  std::size_t layers = 4;
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t components = 64;  // K
  std::size_t rank = 8;         // h
  std::size_t length = 8;       // L
  std::size_t depth = 4;        // D
  std::size_t vocab = 32;       // V
  std::size_t dim = 8;          // H
  std::size_t num_classes = 0;  // 0 = unconditional; label 0 is always the null label
  bool positional = true;
  bool stop_q = true;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

inline constexpr std::size_t kRatioFeatures = 8;

// One sample of model input: a grid whose MASK entries form depth suffixes.
struct Example {
  const TokenGrid* grid;
  std::size_t label;
};

// Graph input tensors for a batch.
struct Batch {
  std::size_t size = 0;
  TensorMap inputs;
};

struct Outputs {
  nn::NodeId logits, mu, raw_a, shift;
};

class Model {
 public:
  explicit Model(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }

  // Randomly initialized parameters; head projections start at zero.
  TensorMap init_params(std::uint64_t seed) const;

  // Builds the input tensors for a batch. Rejects grids whose masks are not
  // depth suffixes and labels outside [0, num_classes].
  Batch embed(const std::vector<Example>& examples, const rvq::Codebook& book) const;

  // Per-position features [sum of revealed embeddings, masked fraction] and
  // the null flag for position i.
  static std::vector<double> position_features(const TokenGrid& grid, std::size_t i,
                                               const rvq::Codebook& book);

  // Mixture parameters for every position of every example, row-major
  // (example b, position i) -> b * L + i.
  std::vector<mog::Params> predict(const TensorMap& params, const Batch& batch) const;

  // Number of predict() calls made on this model so far.
  std::size_t forward_passes() const { return forward_passes_; }

  mog::Basis basis(const TensorMap& params) const;

  struct TrainGraph {
    nn::Graph graph;
    Outputs out;
    nn::NodeId embedded;  // [R, W] input projection before positional encoding
    mog::LossNodes loss;
  };
  // Graph with loss inputs "z" [R, H] and "weights" [R] in addition to the
  // batch inputs. Cached per batch size.
  const TrainGraph& train_graph(std::size_t batch) const;
  const TrainGraph& predict_graph(std::size_t batch) const;

 private:
  TrainGraph build(std::size_t batch, bool with_loss) const;

  BackboneConfig config_;
  mutable std::map<std::size_t, std::unique_ptr<TrainGraph>> train_cache_;
  mutable std::map<std::size_t, std::unique_ptr<TrainGraph>> predict_cache_;
  mutable std::size_t forward_passes_ = 0;
};

// Fixed sinusoidal encoding of the masked fraction.
std::vector<double> ratio_features(double fraction);

}  // namespace resgen::backbone
