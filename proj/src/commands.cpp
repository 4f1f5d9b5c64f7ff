#include "resgen/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "resgen/binary.hpp"
#include "resgen/checkpoint.hpp"
#include "resgen/dataset.hpp"
#include "resgen/eval.hpp"

namespace resgen::commands {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + fmt(f, v[k]);
  return s;
}

backbone::BackboneConfig shape_for(const data::Dataset& d, const rvq::Codebook& book,
                                   const backbone::BackboneConfig& base) {
  backbone::BackboneConfig m = base;
  m.length = d.length;
  m.dim = d.dim;
  m.depth = book.depth();
  m.vocab = book.vocab();
  m.num_classes = d.num_classes;
  return m;
}

}  // namespace

std::uint64_t default_seed() {
  const char* env = std::getenv("RESGEN_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw std::invalid_argument(std::string("RESGEN_SEED is not an integer: ") + env);
  return v;
}

int synth(const SynthArgs& a, std::ostream& out) {
  auto g = synth::generate(a.spec);
  data::save_dataset(g.dataset, a.out);
  write_file_atomic(a.out + ".truth.json", synth::truth_to_json(g.truth));
  out << "records=" << g.dataset.size() << " length=" << g.dataset.length << " dim=" << g.dataset.dim
      << " classes=" << g.dataset.num_classes << " modes=" << g.truth.modes() << "\n";
  out << "wrote " << a.out << " and " << a.out << ".truth.json\n";
  return 0;
}

int fit_rvq(const FitArgs& a, std::ostream& out) {
  const auto d = data::load_dataset(a.dataset);
  rvq::FitReport report;
  const auto book = rvq::fit_codebook(d.values, d.dim, a.options, &report);
  rvq::save_codebook(book, a.out);
  std::vector<TokenGrid> grids;
  for (std::size_t n = 0; n < d.size(); ++n) grids.push_back(rvq::quantize(d.sequence(n), book));
  out << "mse_by_depth=" << join(report.mse_by_depth, "%.6e") << "\n";
  out << "sigma=" << join(book.sigmas(), "%.6e") << "\n";
  out << "usage_entropy=" << join(eval::usage_entropy(grids, book.depth(), book.vocab()), "%.4f") << "\n";
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";
  out << "wrote " << a.out << "\n";
  return 0;
}

int train(const TrainArgs& a, std::ostream& out) {
  const auto d = data::load_dataset(a.dataset);
  checkpoint::Checkpoint ck;
  if (!a.resume.empty()) {
    ck = checkpoint::load(a.resume);
    config::apply(ck.config, a.overrides);
    if (!a.codebook.empty() &&
        rvq::serialize_codebook(rvq::load_codebook(a.codebook)) != rvq::serialize_codebook(ck.book)) {
      throw std::invalid_argument("codebook " + a.codebook + " differs from the one in " + a.resume);
    }
  } else {
    if (a.codebook.empty()) throw std::invalid_argument("train: --codebook is required unless resuming");
    ck.config = a.config;
    ck.book = rvq::load_codebook(a.codebook);
    ck.model = shape_for(d, ck.book, ck.config.model);
  }
  // Shape checks before any work.
  if (d.dim != ck.book.dim()) {
    throw std::invalid_argument("dataset dim " + std::to_string(d.dim) + " != codebook dim " +
                                std::to_string(ck.book.dim()));
  }
  if (d.length != ck.model.length || d.num_classes != ck.model.num_classes) {
    throw std::invalid_argument("dataset length/classes do not match the checkpoint model");
  }
  if (d.size() == 0) throw std::invalid_argument("train: dataset is empty");
  ck.config.train.validate();
  backbone::Model model(ck.model);
  if (a.resume.empty()) ck.state = trainer::init_state(model, ck.config.train.seed);
  const auto tokens = eval::quantize_dataset(d, ck.book);

  std::ofstream metrics_file;
  std::ostream* log = &out;
  if (!a.metrics.empty()) {
    metrics_file.open(a.metrics, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics_file) throw std::runtime_error("cannot open metrics log " + a.metrics);
    log = &metrics_file;
  }
  const auto start = std::chrono::steady_clock::now();
  const std::size_t first = ck.state.step;
  trainer::train(model, ck.book, tokens, ck.config.train, ck.state, log,
                 [&](const trainer::TrainState& s, const trainer::StepResult&) {
                   if (a.checkpoint_every && s.step % a.checkpoint_every == 0 && s.step < ck.config.train.steps) {
                     checkpoint::Checkpoint snap = ck;
                     snap.state = s;
                     checkpoint::save(snap, a.out + ".step" + std::to_string(s.step));
                   }
                 });
  checkpoint::save(ck, a.out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "trained steps " << first << ".." << ck.state.step << " in " << fmt("%.2f", secs) << " s; wrote "
      << a.out << "\n";
  return 0;
}

int sample(const SampleArgs& a, std::ostream& out) {
  const auto ck = checkpoint::load(a.checkpoint);
  config::RunConfig rc = ck.config;
  config::apply(rc, a.overrides);
  if (a.label > ck.model.num_classes) {
    throw std::invalid_argument("label " + std::to_string(a.label) + " out of range [0, " +
                                std::to_string(ck.model.num_classes) + "]");
  }
  backbone::Model model(ck.model);
  std::vector<std::uint32_t> labels{std::uint32_t(a.label)};
  auto s = eval::sample_many(model, a.ema ? ck.state.ema : ck.state.params, ck.book, rc.sample, a.count, labels);
  data::save_dataset(s.vectors, a.out);
  const std::string tokens = a.tokens.empty() ? a.out + ".tokens" : a.tokens;
  write_file_atomic(tokens, data::token_dump(s.grids));
  out << "samples=" << a.count << " steps=" << rc.sample.steps
      << " selection=" << sampler::selection_name(rc.sample.selection) << "\n";
  out << "forward_passes=" << s.forward_passes << "\n";
  out << "wall_time=" << fmt("%.3f", s.seconds) << "\n";
  out << "wrote " << a.out << " and " << tokens << "\n";
  return 0;
}

int eval(const EvalArgs& a, std::ostream& out) {
  const auto gen = data::load_dataset(a.generated);
  const auto ref = data::load_dataset(a.reference);
  if (gen.length != ref.length || gen.dim != ref.dim) {
    throw std::invalid_argument("dimension mismatch: generated " + std::to_string(gen.length) + "x" +
                                std::to_string(gen.dim) + ", reference " + std::to_string(ref.length) + "x" +
                                std::to_string(ref.dim));
  }
  bool ok = true;
  eval::EvalReport r;
  r.fd = eval::frechet_distance(gen.values, ref.values, ref.record_size());
  r.baseline = eval::half_split_distance(ref.values, ref.record_size());
  ok &= std::isfinite(r.fd) && r.fd >= 0.0;
  if (!a.codebook.empty()) {
    const auto book = rvq::load_codebook(a.codebook);
    if (book.dim() != ref.dim) throw std::invalid_argument("codebook dim does not match the datasets");
    r.recon_mse_by_depth = rvq::reconstruction_mse(ref.values, ref.dim, book);
    for (std::size_t j = 1; j < r.recon_mse_by_depth.size(); ++j) {
      ok &= r.recon_mse_by_depth[j] <= r.recon_mse_by_depth[j - 1];
    }
    std::vector<TokenGrid> grids;
    for (std::size_t n = 0; n < gen.size(); ++n) grids.push_back(rvq::quantize(gen.sequence(n), book));
    r.usage_entropy = eval::usage_entropy(grids, book.depth(), book.vocab());
    for (double h : r.usage_entropy) ok &= h >= 0.0 && h <= std::log(double(book.vocab())) + 1e-12;
  }
  if (!a.truth.empty()) {
    const auto truth = synth::truth_from_json(read_file(a.truth));
    if (truth.length != gen.length || truth.dim != gen.dim) throw std::invalid_argument("truth shape mismatch");
    r.occupancy = eval::mode_occupancy(truth, gen);
  }
  const std::string text = eval::format_report(r) + "invariants=" + (ok ? "pass" : "fail") + "\n";
  out << text;
  if (!a.out.empty()) write_file_atomic(a.out, text);
  return ok ? 0 : 1;
}

int inspect(const std::string& path, std::ostream& out) {
  const std::string bytes = read_file(path);
  const std::string magic = bytes.substr(0, 4);
  if (magic == "RGDS") {
    const auto d = data::deserialize_dataset(bytes, path);
    out << "kind=dataset version=" << data::kDatasetVersion << " records=" << d.size() << " length=" << d.length
        << " dim=" << d.dim << " classes=" << d.num_classes << "\n";
  } else if (magic == "RVQC") {
    const auto b = rvq::deserialize_codebook(bytes, path);
    out << "kind=codebook depth=" << b.depth() << " vocab=" << b.vocab() << " dim=" << b.dim() << "\n";
    out << "sigma=" << join(b.sigmas(), "%.6e") << "\n";
  } else if (magic == "RGCK") {
    const auto c = checkpoint::deserialize(bytes, path);
    std::size_t count = 0;
    for (const auto& [name, t] : c.state.params) count += t.size();
    const auto& m = c.model;
    out << "kind=checkpoint version=" << checkpoint::kCheckpointVersion << " step=" << c.state.step
        << " root_seed=" << c.state.root_seed << " parameters=" << count << "\n";
    out << "model layers=" << m.layers << " width=" << m.width << " heads=" << m.heads
        << " components=" << m.components << " rank=" << m.rank << " length=" << m.length << " depth=" << m.depth
        << " vocab=" << m.vocab << " dim=" << m.dim << " classes=" << m.num_classes << "\n";
    out << config::format_key_values(config::to_key_values(c.config));
  } else {
    throw FormatError(path + ": unknown magic \"" + magic + "\" (expected RGDS, RVQC or RGCK)");
  }
  return 0;
}

}  // namespace resgen::commands
