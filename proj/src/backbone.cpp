#include "resgen/backbone.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "resgen/random.hpp"

namespace resgen::backbone {
namespace {

using nn::Graph;
using nn::NodeId;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct Builder {
  Graph& g;
  const BackboneConfig& c;
  std::size_t batch;
  std::size_t rows;
  NodeId cond = 0, row_index = 0;

  NodeId linear(NodeId x, const std::string& name, std::size_t in, std::size_t out) {
    NodeId w = g.parameter(name + ".w", {in, out});
    NodeId b = g.parameter(name + ".b", {out});
    return g.add(g.matmul(x, w), b);
  }

  // layer_norm(x) * gain(cond) + shift(cond), conditioned per sample.
  NodeId modulated_norm(NodeId x, const std::string& name) {
    const std::size_t w = c.width;
    NodeId gain = linear(cond, name + ".gain", w, w);
    NodeId shift = linear(cond, name + ".shift", w, w);
    NodeId gain_rows = g.gather(gain, row_index);
    NodeId shift_rows = g.gather(shift, row_index);
    return g.add(g.mul(g.layer_norm(x), gain_rows), shift_rows);
  }

  NodeId attention(NodeId x, const std::string& name) {
    const std::size_t w = c.width, dh = c.width / c.heads;
    NodeId x3 = g.reshape(x, {batch, c.length, w});
    NodeId total = 0;
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const std::string p = name + ".h" + std::to_string(hd);
      NodeId q = g.matmul(x3, g.parameter(p + ".q", {w, dh}));
      NodeId k = g.matmul(x3, g.parameter(p + ".k", {w, dh}));
      NodeId v = g.matmul(x3, g.parameter(p + ".v", {w, dh}));
      NodeId scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(double(dh)));
      NodeId mixed = g.matmul(g.softmax(scores), v);
      NodeId out = g.matmul(mixed, g.parameter(p + ".o", {dh, w}));
      total = hd == 0 ? out : g.add(total, out);
    }
    return g.add(g.reshape(total, {rows, w}), g.parameter(name + ".bias", {w}));
  }

  NodeId mlp(NodeId x, const std::string& name) {
    NodeId hidden = g.gelu(linear(x, name + ".in", c.width, 4 * c.width));
    return linear(hidden, name + ".out", 4 * c.width, c.width);
  }
};

}  // namespace

void BackboneConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string(what) + " must be at least 1");
  };
  positive(layers, "layers");
  positive(width, "width");
  positive(heads, "heads");
  positive(components, "components");
  positive(rank, "rank");
  positive(length, "length");
  positive(depth, "depth");
  positive(vocab, "vocab");
  positive(dim, "dim");
  if (width % heads != 0) {
    throw std::invalid_argument("width " + std::to_string(width) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

std::vector<double> ratio_features(double fraction) {
  std::vector<double> f(kRatioFeatures);
  for (std::size_t k = 0; k < kRatioFeatures / 2; ++k) {
    const double angle = std::numbers::pi * double(1u << k) * fraction;
    f[2 * k] = std::sin(angle);
    f[2 * k + 1] = std::cos(angle);
  }
  return f;
}

Model::Model(BackboneConfig config) : config_(config) { config_.validate(); }

Model::TrainGraph Model::build(std::size_t batch, bool with_loss) const {
  const auto& c = config_;
  TrainGraph tg;
  Graph& g = tg.graph;
  const std::size_t rows = batch * c.length, w = c.width;
  Builder bld{g, c, batch, rows};

  NodeId x = g.input("x", {rows, c.dim + 1});
  NodeId null_flag = g.input("null_flag", {rows, 1});
  NodeId pe = g.input("pe", {rows, w});
  NodeId label = g.input("label", {batch});
  NodeId ratio = g.input("ratio", {batch, kRatioFeatures});
  bld.row_index = g.input("rows", {rows});

  NodeId proj = bld.linear(x, "in", c.dim + 1, w);
  tg.embedded = g.add(proj, g.matmul(null_flag, g.parameter("null", {1, w})));
  NodeId h = g.add(tg.embedded, pe);

  NodeId cls = g.gather(g.parameter("cls", {c.num_classes + 1, w}), label);
  bld.cond = g.gelu(g.add(cls, bld.linear(ratio, "ratio", kRatioFeatures, w)));

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "l" + std::to_string(l);
    h = g.add(h, bld.attention(bld.modulated_norm(h, p + ".ln1"), p + ".attn"));
    h = g.add(h, bld.mlp(bld.modulated_norm(h, p + ".ln2"), p + ".mlp"));
  }
  NodeId f = bld.modulated_norm(h, "final");

  const std::size_t k = c.components;
  tg.out.logits = bld.linear(f, "head.logits", w, k);
  tg.out.mu = g.reshape(bld.linear(f, "head.mu", w, k * c.rank), {rows, k, c.rank});
  tg.out.raw_a = g.reshape(bld.linear(f, "head.scale", w, 1), {rows});
  tg.out.shift = bld.linear(f, "head.shift", w, c.dim);

  NodeId basis_m = g.parameter("basis.M", {k, c.dim, c.rank});
  NodeId basis_s = g.parameter("basis.s", {k, c.dim});
  if (with_loss) {
    mog::HeadNodes head{g.input("z", {rows, c.dim}), tg.out.logits, tg.out.mu, tg.out.raw_a,
                        tg.out.shift, basis_m, basis_s, g.input("weights", {rows})};
    tg.loss = mog::build_loss(g, head, c.stop_q);
  }
  return tg;
}

const Model::TrainGraph& Model::train_graph(std::size_t batch) const {
  auto& slot = train_cache_[batch];
  if (!slot) slot = std::make_unique<TrainGraph>(build(batch, true));
  return *slot;
}

const Model::TrainGraph& Model::predict_graph(std::size_t batch) const {
  auto& slot = predict_cache_[batch];
  if (!slot) slot = std::make_unique<TrainGraph>(build(batch, false));
  return *slot;
}

TensorMap Model::init_params(std::uint64_t seed) const {
  const Graph& g = predict_graph(1).graph;
  TensorMap params;
  for (NodeId id : g.parameters()) {
    const auto& node = g.node(id);
    Tensor t(node.shape);
    const std::string& n = node.name;
    Rng rng = derive_rng(seed, {fnv1a(n)});
    const bool modulation = n.find(".gain.") != std::string::npos ||
                            n.find(".shift.") != std::string::npos;
    if (n.rfind("head.", 0) == 0 || n == "basis.s") {
      // zero: uniform weights, zero means, unit scale at initialization
    } else if (modulation) {
      if (n.find(".gain.b") != std::string::npos) t.data.assign(t.size(), 1.0);
    } else if (n == "basis.M") {
      const double sd = 1.0 / std::sqrt(double(config_.rank));
      for (double& v : t.data) v = sd * standard_normal(rng);
    } else if (n == "null" || n == "cls") {
      for (double& v : t.data) v = 0.5 * standard_normal(rng);
    } else if (ends_with(n, ".b") || ends_with(n, ".bias")) {
      // biases start at zero
    } else {
      const double sd = 1.0 / std::sqrt(double(node.shape.front()));
      for (double& v : t.data) v = sd * standard_normal(rng);
    }
    params.emplace(n, std::move(t));
  }
  return params;
}

std::vector<double> Model::position_features(const TokenGrid& grid, std::size_t i,
                                             const rvq::Codebook& book) {
  std::vector<double> f(book.dim() + 1, 0.0);
  const std::size_t masked = grid.masked_count(i);
  rvq::accumulate_embeddings(grid, book, i, 0, grid.depth - masked,
                             std::span<double>(f.data(), book.dim()));
  f[book.dim()] = double(masked) / double(grid.depth);
  return f;
}

Batch Model::embed(const std::vector<Example>& examples, const rvq::Codebook& book) const {
  const auto& c = config_;
  if (book.depth() != c.depth || book.dim() != c.dim || book.vocab() != c.vocab) {
    throw std::invalid_argument("codebook (D=" + std::to_string(book.depth()) +
                                ", V=" + std::to_string(book.vocab()) +
                                ", H=" + std::to_string(book.dim()) +
                                ") does not match the model configuration");
  }
  const std::size_t batch = examples.size(), rows = batch * c.length, w = c.width;
  if (batch == 0) throw std::invalid_argument("empty batch");
  Tensor x({rows, c.dim + 1}), null_flag({rows, 1}), pe({rows, w}), label({batch}),
      ratio({batch, kRatioFeatures}), row_index({rows});

  std::vector<double> table(c.length * w, 0.0);
  if (c.positional) {
    for (std::size_t i = 0; i < c.length; ++i) {
      for (std::size_t k = 0; k < w; ++k) {
        const double freq = std::pow(10000.0, -double(k - k % 2) / double(w));
        table[i * w + k] = k % 2 == 0 ? std::sin(double(i) * freq) : std::cos(double(i) * freq);
      }
    }
  }

  for (std::size_t b = 0; b < batch; ++b) {
    const TokenGrid& grid = *examples[b].grid;
    if (grid.length != c.length || grid.depth != c.depth) {
      throw std::invalid_argument("grid extents do not match the model configuration");
    }
    if (!grid.depth_suffix_ok()) throw std::invalid_argument("MASK tokens are not a depth suffix");
    if (examples[b].label > c.num_classes) {
      throw std::invalid_argument("label " + std::to_string(examples[b].label) +
                                  " outside [0, " + std::to_string(c.num_classes) + "]");
    }
    label.data[b] = double(examples[b].label);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < c.length; ++i) {
      const std::size_t r = b * c.length + i;
      const auto f = position_features(grid, i, book);
      std::copy(f.begin(), f.end(), x.data.begin() + std::ptrdiff_t(r * (c.dim + 1)));
      const std::size_t q = grid.masked_count(i);
      masked += q;
      null_flag.data[r] = q == c.depth ? 1.0 : 0.0;
      row_index.data[r] = double(b);
      std::copy_n(table.begin() + std::ptrdiff_t(i * w), w, pe.data.begin() + std::ptrdiff_t(r * w));
    }
    const auto rf = ratio_features(double(masked) / double(c.length * c.depth));
    std::copy(rf.begin(), rf.end(), ratio.data.begin() + std::ptrdiff_t(b * kRatioFeatures));
  }

  Batch out;
  out.size = batch;
  out.inputs.emplace("x", std::move(x));
  out.inputs.emplace("null_flag", std::move(null_flag));
  out.inputs.emplace("pe", std::move(pe));
  out.inputs.emplace("label", std::move(label));
  out.inputs.emplace("ratio", std::move(ratio));
  out.inputs.emplace("rows", std::move(row_index));
  return out;
}

mog::Basis Model::basis(const TensorMap& params) const {
  return mog::Basis(config_.components, config_.dim, config_.rank, params.at("basis.M").data,
                    params.at("basis.s").data);
}

std::vector<mog::Params> Model::predict(const TensorMap& params, const Batch& batch) const {
  const auto& c = config_;
  ++forward_passes_;
  const TrainGraph& tg = predict_graph(batch.size);
  nn::Pass pass = nn::forward(tg.graph, batch.inputs, params);
  const auto& logits = pass.value(tg.out.logits).data;
  const auto& mu = pass.value(tg.out.mu).data;
  const auto& raw_a = pass.value(tg.out.raw_a).data;
  const auto& shift = pass.value(tg.out.shift).data;
  const std::size_t rows = batch.size * c.length, k = c.components, kh = k * c.rank;
  std::vector<mog::Params> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto& p = out[r];
    p.logits.assign(logits.begin() + std::ptrdiff_t(r * k), logits.begin() + std::ptrdiff_t((r + 1) * k));
    p.mu.assign(mu.begin() + std::ptrdiff_t(r * kh), mu.begin() + std::ptrdiff_t((r + 1) * kh));
    p.a = std::exp(raw_a[r]);
    p.b.assign(shift.begin() + std::ptrdiff_t(r * c.dim), shift.begin() + std::ptrdiff_t((r + 1) * c.dim));
  }
  return out;
}

}  // namespace resgen::backbone
