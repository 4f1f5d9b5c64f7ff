#pragma once

// Subcommand bodies behind the resgen executable. Each returns the process
// exit code and throws on invalid input; outputs are written atomically.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "resgen/config.hpp"
#include "resgen/synth.hpp"

namespace resgen::commands {

// RESGEN_SEED when set, otherwise 0.
std::uint64_t default_seed();

struct SynthArgs {
  synth::Spec spec;
  std::string out;  // the truth sidecar goes to <out>.truth.json
};
int synth(const SynthArgs& a, std::ostream& out);

struct FitArgs {
  std::string dataset;
  std::string out;
  rvq::FitOptions options;
};
int fit_rvq(const FitArgs& a, std::ostream& out);

struct TrainArgs {
  std::string dataset;
  std::string codebook;  // optional when resuming
  std::string resume;
  std::string out;
  std::string metrics;   // metrics log path; stdout when empty
  std::size_t checkpoint_every = 0;  // also writes <out>.step<k>
  config::RunConfig config;
  config::KeyValues overrides;  // applied on top of a resumed checkpoint's config
};
int train(const TrainArgs& a, std::ostream& out);

struct SampleArgs {
  std::string checkpoint;
  std::string out;
  std::string tokens;  // <out>.tokens when empty
  std::size_t count = 100;
  std::size_t label = 0;
  bool ema = true;
  config::KeyValues overrides;  // sample.* keys, applied over the checkpoint's
};
int sample(const SampleArgs& a, std::ostream& out);

struct EvalArgs {
  std::string generated;
  std::string reference;
  std::string codebook;  // optional: reconstruction and usage statistics
  std::string truth;     // optional: mode occupancy
  std::string out;       // optional copy of the report
};
// Exit code 0 iff every checked invariant holds.
int eval(const EvalArgs& a, std::ostream& out);

int inspect(const std::string& path, std::ostream& out);

}  // namespace resgen::commands
