#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "resgen/binary.hpp"
#include "resgen/random.hpp"
#include "resgen/rvq.hpp"

using namespace resgen;
using namespace resgen::rvq;

namespace {

Codebook make_book(std::size_t depth, std::size_t dim,
                   const std::vector<std::vector<std::vector<double>>>& tables) {
  Codebook book(depth, tables.front().size(), dim);
  for (std::size_t j = 0; j < depth; ++j) {
    for (std::size_t v = 0; v < tables[j].size(); ++v) {
      auto e = book.embedding(j, v);
      for (std::size_t k = 0; k < dim; ++k) e[k] = tables[j][v][k];
    }
  }
  return book;
}

LatentSequence seq(std::size_t dim, std::vector<double> values) {
  LatentSequence s(values.size() / dim, dim);
  s.data = std::move(values);
  return s;
}

std::vector<double> gaussian_cloud(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {});
  std::vector<double> out(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    // a few clusters plus noise so deeper depths still have structure
    const double cx = static_cast<double>(i % 5) * 2.0;
    for (std::size_t k = 0; k < dim; ++k) {
      out[i * dim + k] = (k == 0 ? cx : 0.0) + standard_normal(rng);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("exact codeword quantizes losslessly") {
  Codebook book = make_book(1, 2, {{{1, 0}, {0, 1}}});
  auto enc = encode(seq(2, {1, 0}), book, 1);
  CHECK(enc.tokens.at(0, 0) == 0);
  CHECK(enc.residual.data == std::vector<double>{0.0, 0.0});
  CHECK(dequantize(enc.tokens, book).data == std::vector<double>{1.0, 0.0});
}

TEST_CASE("two-step hand trace") {
  // (1,1) is equidistant from both depth-0 codewords; the lower index wins,
  // leaving (0,1), which depth 1 matches exactly.
  Codebook book = make_book(2, 2, {{{1, 0}, {0, 1}}, {{0, 1}, {0, -1}}});
  auto enc = encode(seq(2, {1, 1}), book, 2);
  CHECK(enc.tokens.at(0, 0) == 0);
  CHECK(enc.tokens.at(0, 1) == 0);
  CHECK(enc.residual.data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("ties go to the lowest index") {
  Codebook book = make_book(1, 2, {{{5, 5}, {1, 0}, {0, 1}}});
  const std::vector<double> r{0.5, 0.5};
  CHECK(nearest_codeword(book, 0, r) == 1);
}

TEST_CASE("dimension mismatch is rejected") {
  Codebook book = make_book(1, 2, {{{1, 0}, {0, 1}}});
  CHECK_THROWS_AS(quantize(seq(3, {1, 0, 0}), book), std::invalid_argument);
}

TEST_CASE("partial quantize leaves shallow depths untouched") {
  Codebook book = make_book(2, 2, {{{1, 0}, {0, 1}}, {{0, 1}, {0, -1}}});
  TokenGrid grid(2, 2);
  grid.at(0, 0) = 1;
  grid.at(1, 0) = 1;
  grid.at(1, 1) = 1;
  const std::vector<std::size_t> start{1, 2};
  TokenGrid out = quantize(seq(2, {0, -1, 7, 7}), book, start, grid);
  CHECK(out.at(0, 0) == 1);
  CHECK(out.at(0, 1) == 1);
  CHECK(out.at(1, 0) == 1);
  CHECK(out.at(1, 1) == 1);
}

TEST_CASE("dequantize to depth zero is the zero vector") {
  Codebook book = make_book(2, 2, {{{1, 0}, {0, 1}}, {{0, 1}, {0, -1}}});
  TokenGrid grid = quantize(seq(2, {1, 1, 3, -2}), book);
  const std::vector<std::size_t> zero(2, 0);
  CHECK(dequantize(grid, book, zero).data == std::vector<double>(4, 0.0));
}

TEST_CASE("MASK inside the requested range is rejected") {
  Codebook book = make_book(2, 2, {{{1, 0}, {0, 1}}, {{0, 1}, {0, -1}}});
  TokenGrid grid(1, 2);
  grid.at(0, 0) = 0;
  const std::vector<std::size_t> one{1}, two{2};
  CHECK_NOTHROW(dequantize(grid, book, one));
  CHECK_THROWS_AS(dequantize(grid, book, two), std::invalid_argument);
}

TEST_CASE("residuals telescope at every depth") {
  const std::size_t dim = 4, n = 400;
  auto data = gaussian_cloud(n, dim, 3);
  FitOptions opt;
  opt.depth = 4;
  opt.vocab = 8;
  opt.epochs = 5;
  Codebook book = fit_codebook(data, dim, opt);
  LatentSequence x = seq(dim, data);
  for (std::size_t d = 0; d <= opt.depth; ++d) {
    auto enc = encode(x, book, d);
    const std::vector<std::size_t> upto(x.length, d);
    auto z = dequantize(quantize(x, book), book, upto);
    double worst = 0.0;
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      worst = std::max(worst, std::abs(x.data[k] - z.data[k] - enc.residual.data[k]));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("aggregate reconstruction error is non-increasing in depth") {
  const std::size_t dim = 3;
  auto data = gaussian_cloud(600, dim, 11);
  for (auto rule : {UpdateRule::kNearest, UpdateRule::kProbabilistic}) {
    FitOptions opt;
    opt.depth = 6;
    opt.vocab = 8;
    opt.epochs = 8;
    opt.rule = rule;
    FitReport rep;
    Codebook book = fit_codebook(data, dim, opt, &rep);
    auto mse = reconstruction_mse(data, dim, book);
    REQUIRE(mse.size() == 6);
    double prev = 0.0;
    for (double x : data) prev += x * x;
    prev /= static_cast<double>(data.size());
    for (double m : mse) {
      CHECK(m <= prev + 1e-12);
      prev = m;
    }
    for (std::size_t j = 0; j < mse.size(); ++j) CHECK(mse[j] == doctest::Approx(rep.mse_by_depth[j]));
  }
}

TEST_CASE("V distinct repeated vectors are recovered") {
  const std::vector<std::vector<double>> pts{{0, 0}, {5, 1}, {-3, 4}, {2, -6}};
  std::vector<double> data;
  for (int rep = 0; rep < 25; ++rep) {
    for (const auto& p : pts) data.insert(data.end(), p.begin(), p.end());
  }
  for (auto rule : {UpdateRule::kNearest, UpdateRule::kProbabilistic}) {
    FitOptions opt;
    opt.depth = 1;
    opt.vocab = 4;
    opt.epochs = 10;
    opt.rule = rule;
    FitReport rep;
    Codebook book = fit_codebook(data, 2, opt, &rep);
    std::set<std::vector<double>> got;
    for (std::size_t v = 0; v < 4; ++v) {
      auto e = book.embedding(0, v);
      got.emplace(e.begin(), e.end());
    }
    CHECK(got == std::set<std::vector<double>>(pts.begin(), pts.end()));
    CHECK(rep.mse_by_depth[0] == 0.0);
    CHECK(rep.warnings.empty());
  }
}

TEST_CASE("deeper codebook reconstructs at least as well") {
  const std::size_t dim = 4;
  auto data = gaussian_cloud(500, dim, 21);
  FitOptions opt;
  opt.vocab = 8;
  opt.epochs = 6;
  opt.depth = 4;
  auto mse4 = reconstruction_mse(data, dim, fit_codebook(data, dim, opt));
  opt.depth = 8;
  auto mse8 = reconstruction_mse(data, dim, fit_codebook(data, dim, opt));
  CHECK(mse8.back() <= mse4.back());
  // shared per-depth seeding makes the first four depths identical
  for (std::size_t j = 0; j < 4; ++j) CHECK(mse8[j] == mse4[j]);
}

TEST_CASE("single-vector dataset floors sigma beyond the first depth") {
  const std::vector<double> data{3.0, -4.0};
  FitOptions opt;
  opt.depth = 3;
  opt.vocab = 2;
  opt.epochs = 3;
  FitReport rep;
  Codebook book = fit_codebook(data, 2, opt, &rep);
  CHECK(book.sigma(0) > kSigmaFloor);
  CHECK(book.sigma(1) == kSigmaFloor);
  CHECK(book.sigma(2) == kSigmaFloor);
  CHECK_FALSE(rep.warnings.empty());
}

TEST_CASE("sigma is positive and embeddings finite after fitting") {
  auto data = gaussian_cloud(200, 2, 5);
  FitOptions opt;
  opt.depth = 5;
  opt.vocab = 16;
  opt.epochs = 4;
  Codebook book = fit_codebook(data, 2, opt);
  for (std::size_t j = 0; j < 5; ++j) CHECK(book.sigma(j) > 0.0);
  for (double x : book.embeddings()) CHECK(std::isfinite(x));
}

TEST_CASE("too few distinct residuals warns but still fits") {
  std::vector<double> data{1, 1, 1, 1, 2, 2};
  FitOptions opt;
  opt.depth = 1;
  opt.vocab = 4;
  opt.epochs = 2;
  FitReport rep;
  Codebook book = fit_codebook(data, 2, opt, &rep);
  CHECK(rep.warnings.size() == 1);
  CHECK(rep.mse_by_depth[0] == 0.0);
}

TEST_CASE("invalid fit arguments are rejected") {
  std::vector<double> data{1, 2};
  FitOptions opt;
  opt.vocab = 1;
  CHECK_THROWS_AS(fit_codebook(data, 2, opt), std::invalid_argument);
  opt.vocab = 2;
  CHECK_THROWS_AS(fit_codebook(std::vector<double>{}, 2, opt), std::invalid_argument);
  CHECK_THROWS_AS(fit_codebook(std::vector<LatentSequence>{}, opt), std::invalid_argument);
}

TEST_CASE("probabilistic update approaches nearest as the width vanishes") {
  auto data = gaussian_cloud(300, 3, 8);
  FitOptions opt;
  opt.depth = 3;
  opt.vocab = 6;
  opt.epochs = 6;
  opt.rule = UpdateRule::kNearest;
  Codebook hard = fit_codebook(data, 3, opt);
  opt.rule = UpdateRule::kProbabilistic;
  opt.assign_scale = 1e-4;
  Codebook soft = fit_codebook(data, 3, opt);
  double worst = 0.0;
  for (std::size_t k = 0; k < hard.embeddings().size(); ++k) {
    worst = std::max(worst, std::abs(hard.embeddings()[k] - soft.embeddings()[k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("quantize inverts dequantize when depth scales separate") {
  // Depth j codewords live on a grid of spacing 10^-j, so each partial
  // reconstruction has a unique nearest codeword.
  Codebook book(3, 3, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t v = 0; v < 3; ++v) {
      book.embedding(j, v)[0] = (static_cast<double>(v) - 1.0) * std::pow(10.0, -double(j));
    }
  }
  Rng rng = derive_rng(4, {});
  for (int trial = 0; trial < 50; ++trial) {
    TokenGrid t(4, 3);
    for (auto& x : t.tokens) x = static_cast<Token>(uniform_index(rng, 3));
    CHECK(quantize(dequantize(t, book), book) == t);
  }
}

TEST_CASE("codebook file round-trips bit-exactly") {
  auto data = gaussian_cloud(100, 3, 2);
  FitOptions opt;
  opt.depth = 2;
  opt.vocab = 4;
  opt.epochs = 3;
  Codebook book = fit_codebook(data, 3, opt);
  auto path = std::filesystem::temp_directory_path() / "resgen_test_codebook.rvqc";
  save_codebook(book, path.string());
  Codebook back = load_codebook(path.string());
  CHECK(back == book);
  CHECK(serialize_codebook(back) == serialize_codebook(book));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt codebook files are rejected") {
  Codebook book(1, 2, 2);
  std::string bytes = serialize_codebook(book);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_codebook(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_codebook(bad_version), FormatError);
  CHECK_THROWS_AS(deserialize_codebook(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialize_codebook(bytes + "x"), FormatError);
}
