#include "resgen/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "resgen/binary.hpp"
#include "resgen/random.hpp"

namespace resgen::rvq {
namespace {

constexpr std::uint32_t kCodebookVersion = 1;

double sqdist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

void check_dims(const LatentSequence& latents, const Codebook& book) {
  if (latents.dim != book.dim()) {
    throw std::invalid_argument("latent dim " + std::to_string(latents.dim) +
                                " does not match codebook dim " + std::to_string(book.dim()));
  }
}

}  // namespace

Codebook::Codebook(std::size_t depth, std::size_t vocab, std::size_t dim)
    : depth_(depth),
      vocab_(vocab),
      dim_(dim),
      embeddings_(depth * vocab * dim, 0.0),
      sigmas_(depth, kSigmaFloor) {
  if (depth == 0 || vocab == 0 || dim == 0) {
    throw std::invalid_argument("codebook extents must be positive");
  }
}

std::size_t nearest_codeword(const Codebook& book, std::size_t j, std::span<const double> r) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < book.vocab(); ++v) {
    const double d = sqdist(r, book.embedding(j, v));
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return best;
}

TokenGrid quantize(const LatentSequence& latents, const Codebook& book) {
  return encode(latents, book, book.depth()).tokens;
}

TokenGrid quantize(const LatentSequence& latents, const Codebook& book,
                   std::span<const std::size_t> start_depth, TokenGrid grid) {
  check_dims(latents, book);
  if (grid.length != latents.length || grid.depth != book.depth() ||
      start_depth.size() != latents.length) {
    throw std::invalid_argument("quantize: grid/start_depth extents disagree with latents");
  }
  std::vector<double> r(book.dim());
  for (std::size_t i = 0; i < latents.length; ++i) {
    if (start_depth[i] > book.depth()) throw std::invalid_argument("start depth exceeds D");
    std::copy_n(latents.row(i).begin(), book.dim(), r.begin());
    for (std::size_t j = start_depth[i]; j < book.depth(); ++j) {
      const std::size_t v = nearest_codeword(book, j, r);
      grid.at(i, j) = static_cast<Token>(v);
      const auto e = book.embedding(j, v);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] -= e[k];
    }
  }
  return grid;
}

Encoding encode(const LatentSequence& latents, const Codebook& book, std::size_t depth_limit) {
  check_dims(latents, book);
  if (depth_limit > book.depth()) throw std::invalid_argument("depth limit exceeds D");
  Encoding out{TokenGrid(latents.length, book.depth()), latents};
  for (std::size_t i = 0; i < latents.length; ++i) {
    auto r = out.residual.row(i);
    for (std::size_t j = 0; j < depth_limit; ++j) {
      const std::size_t v = nearest_codeword(book, j, r);
      out.tokens.at(i, j) = static_cast<Token>(v);
      const auto e = book.embedding(j, v);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] -= e[k];
    }
  }
  return out;
}

void accumulate_embeddings(const TokenGrid& tokens, const Codebook& book, std::size_t i,
                           std::size_t from, std::size_t to, std::span<double> out) {
  for (std::size_t j = from; j < to; ++j) {
    const Token t = tokens.at(i, j);
    if (t < 0 || static_cast<std::size_t>(t) >= book.vocab()) {
      throw std::invalid_argument("cannot embed token " + std::to_string(t) + " at position " +
                                  std::to_string(i) + ", depth " + std::to_string(j));
    }
    const auto e = book.embedding(j, static_cast<std::size_t>(t));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += e[k];
  }
}

LatentSequence dequantize(const TokenGrid& tokens, const Codebook& book,
                          std::span<const std::size_t> up_to_depth) {
  if (tokens.depth != book.depth() || up_to_depth.size() != tokens.length) {
    throw std::invalid_argument("dequantize: extents disagree with codebook");
  }
  LatentSequence out(tokens.length, book.dim());
  for (std::size_t i = 0; i < tokens.length; ++i) {
    if (up_to_depth[i] > book.depth()) throw std::invalid_argument("depth exceeds D");
    accumulate_embeddings(tokens, book, i, 0, up_to_depth[i], out.row(i));
  }
  return out;
}

LatentSequence dequantize(const TokenGrid& tokens, const Codebook& book) {
  const std::vector<std::size_t> full(tokens.length, book.depth());
  return dequantize(tokens, book, full);
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

struct ResidualSet {
  std::size_t n;
  std::size_t dim;
  std::vector<double>& data;
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

std::size_t count_distinct_up_to(const ResidualSet& rs, std::size_t limit) {
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < rs.n && seen.size() < limit; ++i) {
    auto r = rs.row(i);
    seen.emplace(r.begin(), r.end());
  }
  return seen.size();
}

// k-means++ seeding. Falls back to uniform picks once every remaining point
// coincides with a chosen centre.
void seed_codewords(const ResidualSet& rs, Codebook& book, std::size_t j, Rng& rng) {
  std::vector<double> best(rs.n, std::numeric_limits<double>::infinity());
  for (std::size_t v = 0; v < book.vocab(); ++v) {
    std::size_t pick;
    double total = 0.0;
    for (double d : best) total += std::isinf(d) ? 0.0 : d;
    if (v == 0 || total <= 0.0) {
      pick = uniform_index(rng, rs.n);
    } else {
      double u = uniform01(rng) * total;
      pick = rs.n - 1;
      for (std::size_t i = 0; i < rs.n; ++i) {
        u -= best[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    }
    auto e = book.embedding(j, v);
    std::copy_n(rs.row(pick).begin(), rs.dim, e.begin());
    for (std::size_t i = 0; i < rs.n; ++i) best[i] = std::min(best[i], sqdist(rs.row(i), e));
  }
}

std::vector<std::size_t> assign_all(const ResidualSet& rs, const Codebook& book, std::size_t j,
                                    std::vector<std::size_t>& counts) {
  std::vector<std::size_t> assign(rs.n);
  counts.assign(book.vocab(), 0);
  for (std::size_t i = 0; i < rs.n; ++i) {
    assign[i] = nearest_codeword(book, j, rs.row(i));
    ++counts[assign[i]];
  }
  return assign;
}

void update_nearest(const ResidualSet& rs, Codebook& book, std::size_t j,
                    const std::vector<std::size_t>& assign, const std::vector<std::size_t>& counts) {
  std::vector<double> acc(book.vocab() * rs.dim, 0.0);
  for (std::size_t i = 0; i < rs.n; ++i) {
    auto r = rs.row(i);
    for (std::size_t k = 0; k < rs.dim; ++k) acc[assign[i] * rs.dim + k] += r[k];
  }
  for (std::size_t v = 0; v < book.vocab(); ++v) {
    if (counts[v] == 0) continue;
    auto e = book.embedding(j, v);
    for (std::size_t k = 0; k < rs.dim; ++k) {
      e[k] = acc[v * rs.dim + k] / static_cast<double>(counts[v]);
    }
  }
}

// Each residual pulls every codeword with weight proportional to
// exp(-|r - e_v|^2 / (2 width^2)); codewords move to the weighted mean.
void update_probabilistic(const ResidualSet& rs, Codebook& book, std::size_t j, double width) {
  const std::size_t vocab = book.vocab();
  std::vector<double> acc(vocab * rs.dim, 0.0);
  std::vector<double> mass(vocab, 0.0);
  std::vector<double> d(vocab), w(vocab);
  const double inv = 1.0 / (2.0 * width * width);
  for (std::size_t i = 0; i < rs.n; ++i) {
    auto r = rs.row(i);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab; ++v) {
      d[v] = sqdist(r, book.embedding(j, v));
      dmin = std::min(dmin, d[v]);
    }
    double total = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      w[v] = std::exp(-(d[v] - dmin) * inv);
      total += w[v];
    }
    for (std::size_t v = 0; v < vocab; ++v) {
      const double p = w[v] / total;
      if (p == 0.0) continue;
      mass[v] += p;
      for (std::size_t k = 0; k < rs.dim; ++k) acc[v * rs.dim + k] += p * r[k];
    }
  }
  for (std::size_t v = 0; v < vocab; ++v) {
    if (mass[v] == 0.0) continue;
    auto e = book.embedding(j, v);
    for (std::size_t k = 0; k < rs.dim; ++k) e[k] = acc[v * rs.dim + k] / mass[v];
  }
}

}  // namespace

Codebook fit_codebook(std::span<const double> vectors, std::size_t dim, const FitOptions& options,
                      FitReport* report) {
  if (dim == 0 || vectors.empty() || vectors.size() % dim != 0) {
    throw std::invalid_argument("fit_codebook: dataset is empty or ragged");
  }
  if (options.vocab < 2) throw std::invalid_argument("fit_codebook: vocab must be >= 2");
  if (options.depth == 0) throw std::invalid_argument("fit_codebook: depth must be >= 1");
  if (options.rule == UpdateRule::kProbabilistic && !(options.assign_scale >= 0.0)) {
    throw std::invalid_argument("fit_codebook: assign_scale must be >= 0");
  }

  Codebook book(options.depth, options.vocab, dim);
  std::vector<double> residual(vectors.begin(), vectors.end());
  ResidualSet rs{vectors.size() / dim, dim, residual};
  FitReport local;
  FitReport& rep = report ? *report : local;
  rep = FitReport{};

  for (std::size_t j = 0; j < options.depth; ++j) {
    Rng rng = derive_rng(options.seed, {0x52565143ULL, j});

    double energy = 0.0;
    for (double x : residual) energy += x * x;
    const double sigma =
        std::max(std::sqrt(energy / static_cast<double>(residual.size())), kSigmaFloor);
    book.set_sigma(j, sigma);

    if (count_distinct_up_to(rs, options.vocab) < options.vocab) {
      rep.warnings.push_back("depth " + std::to_string(j + 1) + ": fewer than " +
                             std::to_string(options.vocab) +
                             " distinct residuals, codewords will repeat");
    }
    seed_codewords(rs, book, j, rng);

    std::vector<std::size_t> counts;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      auto assign = assign_all(rs, book, j, counts);
      bool reseeded = false;
      for (std::size_t v = 0; v < book.vocab(); ++v) {
        if (counts[v] != 0) continue;
        auto e = book.embedding(j, v);
        std::copy_n(rs.row(uniform_index(rng, rs.n)).begin(), dim, e.begin());
        reseeded = true;
      }
      if (reseeded) assign = assign_all(rs, book, j, counts);

      const double width = options.assign_scale * sigma;
      if (options.rule == UpdateRule::kNearest || width == 0.0) {
        update_nearest(rs, book, j, assign, counts);
      } else {
        update_probabilistic(rs, book, j, width);
      }
    }
    // Closing hard step: each codeword becomes the mean of its cell, which
    // keeps the residual energy from growing at this depth.
    if (options.epochs > 0) {
      const auto assign = assign_all(rs, book, j, counts);
      update_nearest(rs, book, j, assign, counts);
    }

    double err = 0.0;
    for (std::size_t i = 0; i < rs.n; ++i) {
      std::span<double> r(residual.data() + i * dim, dim);
      const auto e = book.embedding(j, nearest_codeword(book, j, r));
      for (std::size_t k = 0; k < dim; ++k) {
        r[k] -= e[k];
        err += r[k] * r[k];
      }
    }
    rep.mse_by_depth.push_back(err / static_cast<double>(residual.size()));
  }
  return book;
}

Codebook fit_codebook(const std::vector<LatentSequence>& dataset, const FitOptions& options,
                      FitReport* report) {
  if (dataset.empty()) throw std::invalid_argument("fit_codebook: empty dataset");
  const std::size_t dim = dataset.front().dim;
  std::vector<double> flat;
  for (const auto& seq : dataset) {
    if (seq.dim != dim) throw std::invalid_argument("fit_codebook: mixed latent dims");
    flat.insert(flat.end(), seq.data.begin(), seq.data.end());
  }
  return fit_codebook(flat, dim, options, report);
}

std::vector<double> reconstruction_mse(std::span<const double> vectors, std::size_t dim,
                                       const Codebook& book) {
  if (dim != book.dim() || vectors.size() % dim != 0 || vectors.empty()) {
    throw std::invalid_argument("reconstruction_mse: dims disagree with codebook");
  }
  std::vector<double> residual(vectors.begin(), vectors.end());
  const std::size_t n = vectors.size() / dim;
  std::vector<double> out;
  for (std::size_t j = 0; j < book.depth(); ++j) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> r(residual.data() + i * dim, dim);
      const auto e = book.embedding(j, nearest_codeword(book, j, r));
      for (std::size_t k = 0; k < dim; ++k) {
        r[k] -= e[k];
        err += r[k] * r[k];
      }
    }
    out.push_back(err / static_cast<double>(residual.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize_codebook(const Codebook& book) {
  ByteWriter w;
  w.bytes("RVQC");
  w.u32(kCodebookVersion);
  w.u32(static_cast<std::uint32_t>(book.depth()));
  w.u32(static_cast<std::uint32_t>(book.vocab()));
  w.u32(static_cast<std::uint32_t>(book.dim()));
  w.f64s(book.embeddings());
  w.f64s(book.sigmas());
  return w.data();
}

Codebook deserialize_codebook(const std::string& bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("RVQC");
  r.expect_version(kCodebookVersion);
  const std::size_t depth = r.u32(), vocab = r.u32(), dim = r.u32();
  if (depth == 0 || vocab == 0 || dim == 0) throw FormatError(context + ": zero extent in header");
  Codebook book(depth, vocab, dim);
  const auto emb = r.f64s(depth * vocab * dim);
  for (std::size_t j = 0; j < depth; ++j) {
    for (std::size_t v = 0; v < vocab; ++v) {
      auto e = book.embedding(j, v);
      std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>((j * vocab + v) * dim), dim, e.begin());
    }
  }
  for (std::size_t j = 0; j < depth; ++j) book.set_sigma(j, r.f64());
  r.expect_end();
  return book;
}

void save_codebook(const Codebook& book, const std::string& path) {
  write_file_atomic(path, serialize_codebook(book));
}

Codebook load_codebook(const std::string& path) {
  return deserialize_codebook(read_file(path), path);
}

}  // namespace resgen::rvq
