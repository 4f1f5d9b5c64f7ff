#include "resgen/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "resgen/random.hpp"

namespace resgen::nn {
namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatRM>;
using MapM = Eigen::Map<MatRM>;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

std::size_t rows_of(const Tensor& t) {
  return t.size() / t.last_dim();
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kExp: return "exp";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGelu: return "gelu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLogSumExp: return "logsumexp";
    case OpKind::kGather: return "gather";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumLast: return "sum_last";
    case OpKind::kScaleRows: return "scale_rows";
    case OpKind::kLowRankSqDist: return "lowrank_sqdist";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "?";
}

ShapeError::ShapeError(NodeId op, const std::string& what)
    : std::invalid_argument("op " + std::to_string(op) + ": " + what), op_(op) {}

// ---------------------------------------------------------------------------
// Construction

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) {
    throw ShapeError(nodes_.size(), "reference to undefined node " + std::to_string(id));
  }
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::input(const std::string& name, Shape shape) {
  for (NodeId id : inputs_) {
    if (nodes_[id].name == name) throw ShapeError(nodes_.size(), "duplicate input '" + name + "'");
  }
  NodeId id = push({OpKind::kInput, {}, std::move(shape), name});
  inputs_.push_back(id);
  return id;
}

NodeId Graph::parameter(const std::string& name, Shape shape) {
  for (NodeId id : parameters_) {
    if (nodes_[id].name == name) {
      throw ShapeError(nodes_.size(), "duplicate parameter '" + name + "'");
    }
  }
  NodeId id = push({OpKind::kParameter, {}, std::move(shape), name});
  parameters_.push_back(id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  const NodeId self = nodes_.size();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError(self, "matmul needs rank >= 2, got " + shape_str(sa) + " x " + shape_str(sb));
  }
  Shape out = sa;
  if (sb.size() == 2) {
    if (sa.back() != sb[0]) {
      throw ShapeError(self, "matmul inner dims " + shape_str(sa) + " x " + shape_str(sb));
    }
  } else {
    if (sb.size() != sa.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
        sa.back() != sb[sb.size() - 2]) {
      throw ShapeError(self, "batched matmul " + shape_str(sa) + " x " + shape_str(sb));
    }
  }
  out.back() = sb.back();
  return push({OpKind::kMatmul, {a, b}, out});
}

NodeId Graph::transpose(NodeId a) {
  check_id(a);
  Shape s = nodes_[a].shape;
  if (s.size() < 2) throw ShapeError(nodes_.size(), "transpose needs rank >= 2");
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  return push({OpKind::kTranspose, {a}, s});
}

NodeId Graph::elementwise_binary(OpKind kind, NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  if (!is_suffix(sb, sa)) {
    throw ShapeError(nodes_.size(), std::string(op_name(kind)) + " cannot broadcast " +
                                        shape_str(sb) + " onto " + shape_str(sa));
  }
  return push({kind, {a, b}, sa});
}

NodeId Graph::add(NodeId a, NodeId b) { return elementwise_binary(OpKind::kAdd, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return elementwise_binary(OpKind::kSub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return elementwise_binary(OpKind::kMul, a, b); }

NodeId Graph::unary(OpKind kind, NodeId a, double scalar) {
  check_id(a);
  return push({kind, {a}, nodes_[a].shape, {}, scalar});
}

NodeId Graph::scale(NodeId a, double c) { return unary(OpKind::kScale, a, c); }
NodeId Graph::add_scalar(NodeId a, double c) { return unary(OpKind::kAddScalar, a, c); }
NodeId Graph::exp(NodeId a) { return unary(OpKind::kExp, a); }
NodeId Graph::tanh(NodeId a) { return unary(OpKind::kTanh, a); }
NodeId Graph::gelu(NodeId a) { return unary(OpKind::kGelu, a); }
NodeId Graph::stop_gradient(NodeId a) { return unary(OpKind::kStopGradient, a); }

NodeId Graph::layer_norm(NodeId a, double eps) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError(nodes_.size(), "layer_norm on a scalar");
  return unary(OpKind::kLayerNorm, a, eps);
}

NodeId Graph::softmax(NodeId a) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError(nodes_.size(), "softmax on a scalar");
  return unary(OpKind::kSoftmax, a);
}

NodeId Graph::log_softmax(NodeId a) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError(nodes_.size(), "log_softmax on a scalar");
  return unary(OpKind::kLogSoftmax, a);
}

NodeId Graph::logsumexp(NodeId a) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError(nodes_.size(), "logsumexp on a scalar");
  return push({OpKind::kLogSumExp, {a}, drop_last(nodes_[a].shape)});
}

NodeId Graph::sum_last(NodeId a) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError(nodes_.size(), "sum_last on a scalar");
  return push({OpKind::kSumLast, {a}, drop_last(nodes_[a].shape)});
}

NodeId Graph::gather(NodeId table, NodeId index) {
  check_id(table);
  check_id(index);
  const Shape& st = nodes_[table].shape;
  const Shape& si = nodes_[index].shape;
  if (st.size() != 2 || si.size() != 1) {
    throw ShapeError(nodes_.size(), "gather wants table [n,w] and index [m], got " +
                                        shape_str(st) + ", " + shape_str(si));
  }
  if (nodes_[index].kind != OpKind::kInput) {
    throw ShapeError(nodes_.size(), "gather index must be a graph input");
  }
  return push({OpKind::kGather, {table, index}, Shape{si[0], st[1]}});
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  check_id(a);
  if (shape_size(shape) != shape_size(nodes_[a].shape)) {
    throw ShapeError(nodes_.size(), "reshape " + shape_str(nodes_[a].shape) + " -> " +
                                        shape_str(shape));
  }
  return push({OpKind::kReshape, {a}, std::move(shape)});
}

NodeId Graph::sum(NodeId a) {
  check_id(a);
  return push({OpKind::kSum, {a}, Shape{}});
}

NodeId Graph::mean(NodeId a) {
  check_id(a);
  return push({OpKind::kMean, {a}, Shape{}});
}

NodeId Graph::scale_rows(NodeId x, NodeId s) {
  check_id(x);
  check_id(s);
  const Shape& sx = nodes_[x].shape;
  if (sx.empty() || nodes_[s].shape != drop_last(sx)) {
    throw ShapeError(nodes_.size(), "scale_rows " + shape_str(sx) + " by " +
                                        shape_str(nodes_[s].shape));
  }
  return push({OpKind::kScaleRows, {x, s}, sx});
}

NodeId Graph::lowrank_sqdist(NodeId z, NodeId mu, NodeId basis_m, NodeId basis_s) {
  for (NodeId id : {z, mu, basis_m, basis_s}) check_id(id);
  const Shape& sz = nodes_[z].shape;
  const Shape& smu = nodes_[mu].shape;
  const Shape& sm = nodes_[basis_m].shape;
  const Shape& ss = nodes_[basis_s].shape;
  bool ok = sz.size() == 2 && smu.size() == 3 && sm.size() == 3 && ss.size() == 2;
  if (ok) {
    const std::size_t p = sz[0], big_h = sz[1], k = smu[1], h = smu[2];
    ok = smu[0] == p && sm[0] == k && sm[1] == big_h && sm[2] == h && ss[0] == k &&
         ss[1] == big_h;
  }
  if (!ok) {
    throw ShapeError(nodes_.size(), "lowrank_sqdist shapes z" + shape_str(sz) + " mu" +
                                        shape_str(smu) + " M" + shape_str(sm) + " s" +
                                        shape_str(ss));
  }
  return push({OpKind::kLowRankSqDist, {z, mu, basis_m, basis_s}, Shape{sz[0], smu[1]}});
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void lowrank_forward(const Tensor& z, const Tensor& mu, const Tensor& m, const Tensor& s,
                     Tensor& out, std::vector<double>& saved) {
  const std::size_t p = z.shape[0], big_h = z.shape[1], k = mu.shape[1], h = mu.shape[2];
  // saved layout: K blocks of [h*h gram | h (M^T s) | 1 (s^T s)]
  const std::size_t block = h * h + h + 1;
  saved.assign(k * block, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    MapC mc(m.data.data() + c * big_h * h, big_h, h);
    Eigen::Map<const Eigen::VectorXd> sc(s.data.data() + c * big_h, big_h);
    MapM gram(saved.data() + c * block, h, h);
    gram.noalias() = mc.transpose() * mc;
    Eigen::Map<Eigen::VectorXd> mts(saved.data() + c * block + h * h, h);
    mts.noalias() = mc.transpose() * sc;
    saved[c * block + h * h + h] = sc.squaredNorm();
  }
  Eigen::VectorXd mtz(h);
  for (std::size_t i = 0; i < p; ++i) {
    Eigen::Map<const Eigen::VectorXd> zi(z.data.data() + i * big_h, big_h);
    const double zz = zi.squaredNorm();
    for (std::size_t c = 0; c < k; ++c) {
      MapC mc(m.data.data() + c * big_h * h, big_h, h);
      Eigen::Map<const Eigen::VectorXd> sc(s.data.data() + c * big_h, big_h);
      Eigen::Map<const Eigen::VectorXd> mui(mu.data.data() + (i * k + c) * h, h);
      MapC gram(saved.data() + c * block, h, h);
      Eigen::Map<const Eigen::VectorXd> mts(saved.data() + c * block + h * h, h);
      const double ss = saved[c * block + h * h + h];
      mtz.noalias() = mc.transpose() * zi;
      out.data[i * k + c] = zz + mui.dot(gram * mui) + ss - 2.0 * mtz.dot(mui) -
                            2.0 * zi.dot(sc) + 2.0 * mui.dot(mts);
    }
  }
}

}  // namespace

Pass forward(const Graph& graph, const TensorMap& inputs, const TensorMap& params) {
  Pass pass;
  const std::size_t n = graph.size();
  pass.values_.resize(n);
  pass.saved_.resize(n);
  for (NodeId id = 0; id < n; ++id) {
    const Node& node = graph.node(id);
    Tensor& out = pass.values_[id];
    auto in = [&](std::size_t k) -> const Tensor& { return pass.values_[node.inputs[k]]; };

    switch (node.kind) {
      case OpKind::kInput:
      case OpKind::kParameter: {
        const TensorMap& source = node.kind == OpKind::kInput ? inputs : params;
        auto it = source.find(node.name);
        if (it == source.end()) {
          throw ShapeError(id, std::string(op_name(node.kind)) + " '" + node.name +
                                   "' not supplied");
        }
        if (it->second.shape != node.shape) {
          throw ShapeError(id, std::string(op_name(node.kind)) + " '" + node.name +
                                   "' expected " + shape_str(node.shape) + ", got " +
                                   shape_str(it->second.shape));
        }
        out = it->second;
        continue;  // fed values are not finiteness-checked here
      }
      default:
        break;
    }

    out = Tensor(node.shape);
    switch (node.kind) {
      case OpKind::kMatmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t kdim = a.last_dim();
        const std::size_t ncols = b.last_dim();
        if (b.rank() == 2) {
          MapM(out.data.data(), rows_of(a), ncols).noalias() =
              MapC(a.data.data(), rows_of(a), kdim) * MapC(b.data.data(), kdim, ncols);
        } else {
          const std::size_t m = a.shape[a.rank() - 2];
          const std::size_t batches = a.size() / (m * kdim);
          for (std::size_t bi = 0; bi < batches; ++bi) {
            MapM(out.data.data() + bi * m * ncols, m, ncols).noalias() =
                MapC(a.data.data() + bi * m * kdim, m, kdim) *
                MapC(b.data.data() + bi * kdim * ncols, kdim, ncols);
          }
        }
        break;
      }
      case OpKind::kTranspose: {
        const Tensor& a = in(0);
        const std::size_t r = a.shape[a.rank() - 2], c = a.last_dim();
        const std::size_t batches = a.size() / (r * c);
        for (std::size_t bi = 0; bi < batches; ++bi) {
          MapM(out.data.data() + bi * r * c, c, r) =
              MapC(a.data.data() + bi * r * c, r, c).transpose();
        }
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t nb = b.size();
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double x = a.data[i], y = b.data[i % nb];
          out.data[i] = node.kind == OpKind::kAdd   ? x + y
                        : node.kind == OpKind::kSub ? x - y
                                                    : x * y;
        }
        break;
      }
      case OpKind::kScale:
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = in(0).data[i] * node.scalar;
        break;
      case OpKind::kAddScalar:
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = in(0).data[i] + node.scalar;
        break;
      case OpKind::kExp:
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::exp(in(0).data[i]);
        break;
      case OpKind::kTanh:
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::tanh(in(0).data[i]);
        break;
      case OpKind::kGelu:
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double x = in(0).data[i];
          out.data[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
        }
        break;
      case OpKind::kLayerNorm: {
        const Tensor& a = in(0);
        const std::size_t w = a.last_dim(), rows = rows_of(a);
        auto& rstd = pass.saved_[id];
        rstd.resize(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = a.data.data() + r * w;
          double mean = 0.0;
          for (std::size_t j = 0; j < w; ++j) mean += x[j];
          mean /= static_cast<double>(w);
          double var = 0.0;
          for (std::size_t j = 0; j < w; ++j) var += (x[j] - mean) * (x[j] - mean);
          var /= static_cast<double>(w);
          rstd[r] = 1.0 / std::sqrt(var + node.scalar);
          for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = (x[j] - mean) * rstd[r];
        }
        break;
      }
      case OpKind::kSoftmax:
      case OpKind::kLogSoftmax:
      case OpKind::kLogSumExp: {
        const Tensor& a = in(0);
        const std::size_t w = a.last_dim(), rows = rows_of(a);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = a.data.data() + r * w;
          const double mx = *std::max_element(x, x + w);
          double acc = 0.0;
          for (std::size_t j = 0; j < w; ++j) acc += std::exp(x[j] - mx);
          const double lse = mx + std::log(acc);
          if (node.kind == OpKind::kLogSumExp) {
            out.data[r] = lse;
          } else if (node.kind == OpKind::kLogSoftmax) {
            for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = x[j] - lse;
          } else {
            for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = std::exp(x[j] - lse);
          }
        }
        break;
      }
      case OpKind::kGather: {
        const Tensor& table = in(0);
        const Tensor& index = in(1);
        const std::size_t w = table.shape[1], rows = table.shape[0];
        for (std::size_t i = 0; i < index.size(); ++i) {
          const double v = index.data[i];
          if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(rows)) {
            throw ShapeError(id, "gather index " + std::to_string(v) + " outside [0," +
                                     std::to_string(rows) + ")");
          }
          const auto row = static_cast<std::size_t>(v);
          std::copy_n(table.data.begin() + row * w, w, out.data.begin() + i * w);
        }
        break;
      }
      case OpKind::kReshape:
      case OpKind::kStopGradient:
        out.data = in(0).data;
        break;
      case OpKind::kSum:
      case OpKind::kMean: {
        double acc = 0.0;
        for (double v : in(0).data) acc += v;
        out.data[0] = node.kind == OpKind::kSum ? acc : acc / static_cast<double>(in(0).size());
        break;
      }
      case OpKind::kSumLast: {
        const Tensor& a = in(0);
        const std::size_t w = a.last_dim();
        for (std::size_t r = 0; r < out.size(); ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < w; ++j) acc += a.data[r * w + j];
          out.data[r] = acc;
        }
        break;
      }
      case OpKind::kScaleRows: {
        const Tensor& x = in(0);
        const Tensor& s = in(1);
        const std::size_t w = x.last_dim();
        for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * s.data[i / w];
        break;
      }
      case OpKind::kLowRankSqDist:
        lowrank_forward(in(0), in(1), in(2), in(3), out, pass.saved_[id]);
        break;
      case OpKind::kInput:
      case OpKind::kParameter:
        break;
    }
    if (!all_finite(out)) {
      throw std::domain_error("op " + std::to_string(id) + " (" + op_name(node.kind) +
                              ") produced a non-finite value");
    }
  }
  return pass;
}

// ---------------------------------------------------------------------------
// Backward

TensorMap backward(const Graph& graph, const Pass& pass, NodeId loss) {
  if (loss >= graph.size()) throw ShapeError(loss, "loss node out of range");
  if (shape_size(graph.shape(loss)) != 1) {
    throw ShapeError(loss, "loss must be scalar, got " + shape_str(graph.shape(loss)));
  }
  const std::size_t n = graph.size();

  std::vector<char> live(n, 0);
  live[loss] = 1;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (!live[id]) continue;
    const Node& node = graph.node(id);
    if (node.kind == OpKind::kStopGradient) continue;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (node.kind == OpKind::kGather && k == 1) continue;
      live[node.inputs[k]] = 1;
    }
  }

  std::vector<Tensor> grads(n);
  auto grad = [&](NodeId id) -> Tensor& {
    if (grads[id].shape != graph.shape(id) || grads[id].data.empty()) {
      grads[id] = Tensor(graph.shape(id));
    }
    return grads[id];
  };
  grad(loss).data[0] = 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& node = graph.node(id);
    if (!live[id] || node.kind == OpKind::kInput || node.kind == OpKind::kParameter ||
        node.kind == OpKind::kStopGradient) {
      continue;
    }
    if (grads[id].data.empty()) continue;  // no downstream contribution
    const Tensor& g = grads[id];
    const Tensor& y = pass.value(id);
    auto val = [&](std::size_t k) -> const Tensor& { return pass.value(node.inputs[k]); };
    auto wants = [&](std::size_t k) { return live[node.inputs[k]] != 0; };

    switch (node.kind) {
      case OpKind::kMatmul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const std::size_t kdim = a.last_dim(), ncols = b.last_dim();
        if (b.rank() == 2) {
          const std::size_t rows = rows_of(a);
          MapC gm(g.data.data(), rows, ncols);
          if (wants(0)) {
            MapM(grad(node.inputs[0]).data.data(), rows, kdim).noalias() +=
                gm * MapC(b.data.data(), kdim, ncols).transpose();
          }
          if (wants(1)) {
            MapM(grad(node.inputs[1]).data.data(), kdim, ncols).noalias() +=
                MapC(a.data.data(), rows, kdim).transpose() * gm;
          }
        } else {
          const std::size_t m = a.shape[a.rank() - 2];
          const std::size_t batches = a.size() / (m * kdim);
          for (std::size_t bi = 0; bi < batches; ++bi) {
            MapC gm(g.data.data() + bi * m * ncols, m, ncols);
            if (wants(0)) {
              MapM(grad(node.inputs[0]).data.data() + bi * m * kdim, m, kdim).noalias() +=
                  gm * MapC(b.data.data() + bi * kdim * ncols, kdim, ncols).transpose();
            }
            if (wants(1)) {
              MapM(grad(node.inputs[1]).data.data() + bi * kdim * ncols, kdim, ncols)
                  .noalias() += MapC(a.data.data() + bi * m * kdim, m, kdim).transpose() * gm;
            }
          }
        }
        break;
      }
      case OpKind::kTranspose: {
        Tensor& ga = grad(node.inputs[0]);
        const std::size_t r = ga.shape[ga.rank() - 2], c = ga.last_dim();
        const std::size_t batches = ga.size() / (r * c);
        for (std::size_t bi = 0; bi < batches; ++bi) {
          MapM(ga.data.data() + bi * r * c, r, c) +=
              MapC(g.data.data() + bi * r * c, c, r).transpose();
        }
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const std::size_t nb = b.size();
        if (wants(0)) {
          Tensor& ga = grad(node.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += node.kind == OpKind::kMul ? g.data[i] * b.data[i % nb] : g.data[i];
          }
        }
        if (wants(1)) {
          Tensor& gb = grad(node.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = node.kind == OpKind::kAdd   ? g.data[i]
                             : node.kind == OpKind::kSub ? -g.data[i]
                                                         : g.data[i] * a.data[i];
            gb.data[i % nb] += d;
          }
        }
        break;
      }
      case OpKind::kScale: {
        Tensor& ga = grad(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * node.scalar;
        break;
      }
      case OpKind::kAddScalar:
      case OpKind::kReshape: {
        Tensor& ga = grad(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        break;
      }
      case OpKind::kExp: {
        Tensor& ga = grad(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
        break;
      }
      case OpKind::kTanh: {
        Tensor& ga = grad(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
        }
        break;
      }
      case OpKind::kGelu: {
        Tensor& ga = grad(node.inputs[0]);
        const Tensor& x = val(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = x.data[i];
          const double u = kGeluC * (v + 0.044715 * v * v * v);
          const double t = std::tanh(u);
          const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
          ga.data[i] += g.data[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
        break;
      }
      case OpKind::kLayerNorm: {
        Tensor& ga = grad(node.inputs[0]);
        const std::size_t w = y.last_dim(), rows = rows_of(y);
        const auto& rstd = pass.saved_[id];
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = g.data.data() + r * w;
          const double* yy = y.data.data() + r * w;
          double mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < w; ++j) {
            mg += gy[j];
            mgy += gy[j] * yy[j];
          }
          mg /= static_cast<double>(w);
          mgy /= static_cast<double>(w);
          for (std::size_t j = 0; j < w; ++j) {
            ga.data[r * w + j] += rstd[r] * (gy[j] - mg - yy[j] * mgy);
          }
        }
        break;
      }
      case OpKind::kSoftmax: {
        Tensor& ga = grad(node.inputs[0]);
        const std::size_t w = y.last_dim(), rows = rows_of(y);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < w; ++j) dot += g.data[r * w + j] * y.data[r * w + j];
          for (std::size_t j = 0; j < w; ++j) {
            ga.data[r * w + j] += y.data[r * w + j] * (g.data[r * w + j] - dot);
          }
        }
        break;
      }
      case OpKind::kLogSoftmax: {
        Tensor& ga = grad(node.inputs[0]);
        const std::size_t w = y.last_dim(), rows = rows_of(y);
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t j = 0; j < w; ++j) total += g.data[r * w + j];
          for (std::size_t j = 0; j < w; ++j) {
            ga.data[r * w + j] += g.data[r * w + j] - std::exp(y.data[r * w + j]) * total;
          }
        }
        break;
      }
      case OpKind::kLogSumExp: {
        Tensor& ga = grad(node.inputs[0]);
        const Tensor& x = val(0);
        const std::size_t w = x.last_dim();
        for (std::size_t r = 0; r < y.size(); ++r) {
          for (std::size_t j = 0; j < w; ++j) {
            ga.data[r * w + j] += g.data[r] * std::exp(x.data[r * w + j] - y.data[r]);
          }
        }
        break;
      }
      case OpKind::kGather: {
        Tensor& gt = grad(node.inputs[0]);
        const Tensor& index = val(1);
        const std::size_t w = gt.shape[1];
        for (std::size_t i = 0; i < index.size(); ++i) {
          const auto row = static_cast<std::size_t>(index.data[i]);
          for (std::size_t j = 0; j < w; ++j) gt.data[row * w + j] += g.data[i * w + j];
        }
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        Tensor& ga = grad(node.inputs[0]);
        const double d = node.kind == OpKind::kSum
                             ? g.data[0]
                             : g.data[0] / static_cast<double>(ga.size());
        for (double& v : ga.data) v += d;
        break;
      }
      case OpKind::kSumLast: {
        Tensor& ga = grad(node.inputs[0]);
        const std::size_t w = ga.last_dim();
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i / w];
        break;
      }
      case OpKind::kScaleRows: {
        const Tensor& x = val(0);
        const Tensor& s = val(1);
        const std::size_t w = x.last_dim();
        if (wants(0)) {
          Tensor& gx = grad(node.inputs[0]);
          for (std::size_t i = 0; i < x.size(); ++i) gx.data[i] += g.data[i] * s.data[i / w];
        }
        if (wants(1)) {
          Tensor& gs = grad(node.inputs[1]);
          for (std::size_t i = 0; i < x.size(); ++i) gs.data[i / w] += g.data[i] * x.data[i];
        }
        break;
      }
      case OpKind::kLowRankSqDist: {
        const Tensor& z = val(0);
        const Tensor& mu = val(1);
        const Tensor& m = val(2);
        const Tensor& s = val(3);
        const std::size_t p = z.shape[0], big_h = z.shape[1], k = mu.shape[1], h = mu.shape[2];
        Tensor* gz = wants(0) ? &grad(node.inputs[0]) : nullptr;
        Tensor* gmu = wants(1) ? &grad(node.inputs[1]) : nullptr;
        Tensor* gm = wants(2) ? &grad(node.inputs[2]) : nullptr;
        Tensor* gs = wants(3) ? &grad(node.inputs[3]) : nullptr;
        Eigen::VectorXd e(big_h);
        for (std::size_t i = 0; i < p; ++i) {
          Eigen::Map<const Eigen::VectorXd> zi(z.data.data() + i * big_h, big_h);
          for (std::size_t c = 0; c < k; ++c) {
            const double gd = g.data[i * k + c];
            if (gd == 0.0) continue;
            MapC mc(m.data.data() + c * big_h * h, big_h, h);
            Eigen::Map<const Eigen::VectorXd> sc(s.data.data() + c * big_h, big_h);
            Eigen::Map<const Eigen::VectorXd> mui(mu.data.data() + (i * k + c) * h, h);
            // e = z - (M mu + s); d(|e|^2) = 2 e . de
            e.noalias() = zi - sc - mc * mui;
            if (gz) Eigen::Map<Eigen::VectorXd>(gz->data.data() + i * big_h, big_h) += 2.0 * gd * e;
            if (gmu) {
              Eigen::Map<Eigen::VectorXd>(gmu->data.data() + (i * k + c) * h, h).noalias() -=
                  2.0 * gd * (mc.transpose() * e);
            }
            if (gm) {
              MapM(gm->data.data() + c * big_h * h, big_h, h).noalias() -=
                  2.0 * gd * e * mui.transpose();
            }
            if (gs) Eigen::Map<Eigen::VectorXd>(gs->data.data() + c * big_h, big_h) -= 2.0 * gd * e;
          }
        }
        break;
      }
      case OpKind::kInput:
      case OpKind::kParameter:
      case OpKind::kStopGradient:
        break;
    }
  }

  TensorMap out;
  for (NodeId id : graph.parameters()) {
    const Node& node = graph.node(id);
    if (!grads[id].data.empty() && live[id]) {
      out[node.name] = grads[id];
    } else {
      out[node.name] = Tensor(node.shape);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences

FdReport finite_difference_check(const Graph& graph, const TensorMap& inputs,
                                 const TensorMap& params, NodeId loss,
                                 const FdOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  const Pass base = forward(graph, inputs, params);
  const TensorMap analytic = backward(graph, base, loss);

  TensorMap work = params;
  FdReport report;
  auto consider = [&](const std::string& name, std::size_t index, double a, double num) {
    const double denom = std::max({std::abs(a), std::abs(num), 1e-8});
    const double err = std::abs(a - num) / denom;
    if (report.worst_parameter.empty() || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_parameter = name;
      report.worst_index = index;
      report.analytic = a;
      report.numeric = num;
    }
  };
  auto eval_loss = [&]() { return forward(graph, inputs, work).scalar(loss); };

  std::vector<std::pair<double, std::string>> tensor_err;
  Rng rng = derive_rng(options.seed, {0x66644348ULL});
  for (NodeId id : graph.parameters()) {
    const std::string& name = graph.node(id).name;
    Tensor& theta = work.at(name);
    const Tensor& grad = analytic.at(name);
    const double h = options.step;
    if (options.directional) {
      std::vector<double> dir(theta.size());
      double norm = 0.0;
      for (double& v : dir) {
        v = standard_normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      double a = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) {
        dir[i] /= norm;
        a += grad.data[i] * dir[i];
      }
      const std::vector<double> saved = theta.data;
      for (std::size_t i = 0; i < dir.size(); ++i) theta.data[i] = saved[i] + h * dir[i];
      const double fp = eval_loss();
      for (std::size_t i = 0; i < dir.size(); ++i) theta.data[i] = saved[i] - h * dir[i];
      const double fm = eval_loss();
      theta.data = saved;
      consider(name, 0, a, (fp - fm) / (2.0 * h));
    } else {
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta.data[i];
        theta.data[i] = saved + h;
        const double fp = eval_loss();
        theta.data[i] = saved - h;
        const double fm = eval_loss();
        theta.data[i] = saved;
        const double num = (fp - fm) / (2.0 * h);
        consider(name, i, grad.data[i], num);
        diff += (grad.data[i] - num) * (grad.data[i] - num);
        na += grad.data[i] * grad.data[i];
        nn += num * num;
      }
      tensor_err.emplace_back(std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8}), name);
    }
  }
  for (const auto& [err, name] : tensor_err) {
    if (report.worst_tensor.empty() || err > report.max_tensor_rel_error) {
      report.max_tensor_rel_error = err;
      report.worst_tensor = name;
    }
  }
  return report;
}

}  // namespace resgen::nn
