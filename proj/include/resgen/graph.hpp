#pragma once

// Static computation graph with reverse-mode differentiation.
//
// A Graph is a list of op records built once and then evaluated any number
// of times. Evaluation never mutates the graph: forward() returns a Pass that
// owns every intermediate value, and backward() reads that Pass. Parameters
// are declared by name and shape; their values are supplied per call, so one
// graph serves every optimizer step.
//
// Broadcasting is limited to a leading batch: for binary elementwise ops the
// second operand may have the trailing shape of the first.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "resgen/tensor.hpp"

namespace resgen::nn {

using NodeId = std::size_t;

enum class OpKind {
  kInput,
  kParameter,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kExp,
  kTanh,
  kGelu,
  kLayerNorm,
  kSoftmax,
  kLogSoftmax,
  kLogSumExp,
  kGather,
  kReshape,
  kSum,
  kMean,
  kSumLast,
  kScaleRows,
  kLowRankSqDist,
  kStopGradient,
};

const char* op_name(OpKind kind);

struct Node {
  OpKind kind;
  std::vector<NodeId> inputs;
  Shape shape;
  std::string name{};  // inputs and parameters only
  double scalar = 0.0;
};

// Raised for shape mismatches, at construction or when fed tensors disagree
// with declared shapes. Carries the id of the offending op.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(NodeId op, const std::string& what);
  NodeId op() const { return op_; }

 private:
  NodeId op_;
};

class Graph {
 public:
  NodeId input(const std::string& name, Shape shape);
  NodeId parameter(const std::string& name, Shape shape);

  // a: [..., m, k]; b: [k, n] (shared across the batch) or [..., k, n].
  NodeId matmul(NodeId a, NodeId b);
  // Swaps the last two dimensions.
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  NodeId exp(NodeId a);
  NodeId tanh(NodeId a);
  NodeId gelu(NodeId a);
  // Zero-mean unit-variance normalization over the last dimension.
  NodeId layer_norm(NodeId a, double eps = 1e-5);
  NodeId softmax(NodeId a);
  NodeId log_softmax(NodeId a);
  // Reduces the last dimension.
  NodeId logsumexp(NodeId a);
  // Rows of table [n, w] picked by an integer-valued index input [m].
  NodeId gather(NodeId table, NodeId index);
  NodeId reshape(NodeId a, Shape shape);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId sum_last(NodeId a);
  // x [..., n] times s [...], broadcast along the last dimension of x.
  NodeId scale_rows(NodeId x, NodeId s);
  // Squared distance between each row z [p, H] and every low-rank component
  // mean M_k mu[p, k] + s_k. mu: [p, K, h], M: [K, H, h], s: [K, H].
  // Result [p, K], evaluated through the expanded quadratic form.
  NodeId lowrank_sqdist(NodeId z, NodeId mu, NodeId basis_m, NodeId basis_s);
  NodeId stop_gradient(NodeId a);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const { return parameters_; }
  const std::vector<NodeId>& inputs() const { return inputs_; }
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }

 private:
  NodeId push(Node n);
  NodeId elementwise_binary(OpKind kind, NodeId a, NodeId b);
  NodeId unary(OpKind kind, NodeId a, double scalar = 0.0);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> parameters_;
  std::vector<NodeId> inputs_;
};

// Values of one forward evaluation.
class Pass {
 public:
  const Tensor& value(NodeId id) const { return values_.at(id); }
  double scalar(NodeId id) const { return values_.at(id).data.at(0); }

 private:
  friend Pass forward(const Graph&, const TensorMap&, const TensorMap&);
  friend TensorMap backward(const Graph&, const Pass&, NodeId);
  std::vector<Tensor> values_;
  std::vector<std::vector<double>> saved_;
};

// Evaluates every node. `inputs` and `params` are looked up by name and must
// match declared shapes. Throws ShapeError naming the offending op, or
// std::domain_error if an op produces a non-finite value.
Pass forward(const Graph& graph, const TensorMap& inputs,
             const TensorMap& params);

// Gradient of a scalar node with respect to every declared parameter.
// Parameters the loss does not depend on receive exact zeros.
TensorMap backward(const Graph& graph, const Pass& pass, NodeId loss);

struct FdOptions {
  double step = 1e-5;
  // Elementwise compares every scalar parameter entry. Directional compares
  // one random projection per parameter tensor, for models too large to
  // perturb entry by entry.
  bool directional = false;
  std::uint64_t seed = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // Elementwise mode only: max over tensors of ||analytic - numeric|| /
  // max(||analytic||, ||numeric||, 1e-8).
  double max_tensor_rel_error = 0.0;
  std::string worst_tensor;
};

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-8), with numeric gradients from central differences.
FdReport finite_difference_check(const Graph& graph, const TensorMap& inputs,
                                 const TensorMap& params, NodeId loss,
                                 const FdOptions& options = {});

}  // namespace resgen::nn
