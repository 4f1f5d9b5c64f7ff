#pragma once

// Residual vector quantization: per-depth codebooks, encoding of vector
// sequences into depth-ordered token grids, reconstruction by summing
// embeddings, and offline codebook fitting.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "resgen/token_grid.hpp"

namespace resgen::rvq {

// L vectors of dimension H, row-major.
struct LatentSequence {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  LatentSequence() = default;
  LatentSequence(std::size_t l, std::size_t h) : length(l), dim(h), data(l * h, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t depth, std::size_t vocab, std::size_t dim);

  std::size_t depth() const { return depth_; }
  std::size_t vocab() const { return vocab_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> embedding(std::size_t j, std::size_t v) const {
    return {embeddings_.data() + (j * vocab_ + v) * dim_, dim_};
  }
  std::span<double> embedding(std::size_t j, std::size_t v) {
    return {embeddings_.data() + (j * vocab_ + v) * dim_, dim_};
  }
  double sigma(std::size_t j) const { return sigmas_.at(j); }
  void set_sigma(std::size_t j, double s) { sigmas_.at(j) = s; }

  const std::vector<double>& embeddings() const { return embeddings_; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  bool operator==(const Codebook&) const = default;

 private:
  std::size_t depth_ = 0;
  std::size_t vocab_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> embeddings_;  // depth x vocab x dim
  std::vector<double> sigmas_;      // per depth
};

// Index of the codeword at depth j nearest to r; ties go to the lowest index.
std::size_t nearest_codeword(const Codebook& book, std::size_t j, std::span<const double> r);

// Full-depth encoding of every position.
TokenGrid quantize(const LatentSequence& latents, const Codebook& book);

// Re-encodes depths [start_depth[i], D) of each position from latents[i],
// which is taken to be the residual entering depth start_depth[i]. Depths
// below start_depth[i] keep their value in `grid`.
TokenGrid quantize(const LatentSequence& latents, const Codebook& book,
                   std::span<const std::size_t> start_depth, TokenGrid grid);

struct Encoding {
  TokenGrid tokens;
  LatentSequence residual;  // residual left after the last encoded depth
};

// Encodes depths [0, depth_limit) and returns the residual that remains.
Encoding encode(const LatentSequence& latents, const Codebook& book, std::size_t depth_limit);

// z_i = sum over j < up_to_depth[i] of e(x_ij; j).
LatentSequence dequantize(const TokenGrid& tokens, const Codebook& book,
                          std::span<const std::size_t> up_to_depth);
LatentSequence dequantize(const TokenGrid& tokens, const Codebook& book);

// Adds sum over j in [from, to) of e(x_ij; j) into out. Throws on MASK.
void accumulate_embeddings(const TokenGrid& tokens, const Codebook& book, std::size_t i,
                           std::size_t from, std::size_t to, std::span<double> out);

enum class UpdateRule { kNearest, kProbabilistic };

struct FitOptions {
  std::size_t depth = 4;
  std::size_t vocab = 32;
  UpdateRule rule = UpdateRule::kProbabilistic;
  std::size_t epochs = 20;
  // Soft-assignment width as a fraction of the per-depth residual scale.
  double assign_scale = 0.1;
  std::uint64_t seed = 0;
};

struct FitReport {
  std::vector<double> mse_by_depth;  // mean squared error after each depth
  std::vector<std::string> warnings;
};

inline constexpr double kSigmaFloor = 1e-6;

// Fits codebooks depth by depth on the residuals of `vectors` (n x dim,
// row-major). Sigma of depth j is the per-coordinate RMS of the residuals
// entering depth j, floored at kSigmaFloor.
Codebook fit_codebook(std::span<const double> vectors, std::size_t dim, const FitOptions& options,
                      FitReport* report = nullptr);
Codebook fit_codebook(const std::vector<LatentSequence>& dataset, const FitOptions& options,
                      FitReport* report = nullptr);

// Mean squared reconstruction error of `vectors` after each depth 1..D.
std::vector<double> reconstruction_mse(std::span<const double> vectors, std::size_t dim,
                                       const Codebook& book);

// Codebook file: "RVQC", u32 version, u32 D, V, H, D*V*H f64, D f64 sigmas.
std::string serialize_codebook(const Codebook& book);
Codebook deserialize_codebook(const std::string& bytes, const std::string& context = "codebook");
void save_codebook(const Codebook& book, const std::string& path);
Codebook load_codebook(const std::string& path);

}  // namespace resgen::rvq
