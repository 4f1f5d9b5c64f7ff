// resgen: synth | fit-rvq | train | sample | eval | inspect

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resgen/commands.hpp"

using namespace resgen;

namespace {

// Settings shared by commands that read RunConfig keys. Precedence, lowest
// first: RESGEN_SEED, --config file, --set, dedicated flags.
struct Layered {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  config::KeyValues flags;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--set", sets, "override one key (key=value); repeatable");
    app->add_option("--seed", seed, "seed (default: $RESGEN_SEED or 0)");
  }

  config::KeyValues resolve(const std::vector<std::string>& seed_keys) const {
    config::KeyValues kv;
    if (std::getenv("RESGEN_SEED")) {
      for (const auto& k : seed_keys) kv[k] = std::to_string(commands::default_seed());
    }
    if (!config_file.empty()) {
      for (const auto& [k, v] : config::load_key_values(config_file)) kv[k] = v;
    }
    for (const auto& s : sets) {
      auto [k, v] = config::split_assignment(s);
      kv[k] = v;
    }
    for (const auto& [k, v] : flags) kv[k] = v;
    if (seed) {
      for (const auto& k : seed_keys) kv[k] = std::to_string(*seed);
    }
    return kv;
  }
};

template <typename T>
void flag(CLI::App* app, config::KeyValues& kv, const std::string& name, const std::string& key,
          const std::string& help) {
  app->add_option_function<std::string>(name, [&kv, key](const std::string& v) { kv[key] = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual-token masked diffusion toolkit"};
  app.require_subcommand(1);

  // synth
  commands::SynthArgs synth_args;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "write a synthetic mixture dataset");
  synth->add_option("--family", synth_args.spec.family, "grid | ring | shifted")->capture_default_str();
  synth->add_option("--count", synth_args.spec.count, "records")->capture_default_str();
  synth->add_option("--length", synth_args.spec.length, "positions per record")->capture_default_str();
  synth->add_option("--dim", synth_args.spec.dim, "vector dimension")->capture_default_str();
  synth->add_option("--modes", synth_args.spec.modes, "modes (per class)")->capture_default_str();
  synth->add_option("--classes", synth_args.spec.classes, "classes (shifted)")->capture_default_str();
  synth->add_option("--spacing", synth_args.spec.spacing, "mode spacing")->capture_default_str();
  synth->add_option("--noise", synth_args.spec.noise, "per-coordinate noise std")->capture_default_str();
  synth->add_option("--seed", synth_seed, "seed (default: $RESGEN_SEED or 0)");
  synth->add_option("--out", synth_args.out, "output dataset")->required();

  // fit-rvq
  commands::FitArgs fit_args;
  Layered fit_layers;
  auto* fit = app.add_subcommand("fit-rvq", "fit residual codebooks");
  fit->add_option("--data", fit_args.dataset, "dataset")->required();
  fit->add_option("--out", fit_args.out, "output codebook")->required();
  flag<std::size_t>(fit, fit_layers.flags, "--depth", "rvq.depth", "depth D");
  flag<std::size_t>(fit, fit_layers.flags, "--vocab", "rvq.vocab", "codebook size V (1024 at full scale)");
  flag<std::size_t>(fit, fit_layers.flags, "--epochs", "rvq.epochs", "epochs per depth");
  flag<std::string>(fit, fit_layers.flags, "--rule", "rvq.rule", "nearest | probabilistic");
  fit_layers.add_to(fit);

  // train
  commands::TrainArgs train_args;
  Layered train_layers;
  auto* train = app.add_subcommand("train", "train the backbone");
  train->add_option("--data", train_args.dataset, "dataset")->required();
  train->add_option("--codebook", train_args.codebook, "codebook (optional when resuming)");
  train->add_option("--resume", train_args.resume, "checkpoint to continue from");
  train->add_option("--out", train_args.out, "output checkpoint")->required();
  train->add_option("--metrics", train_args.metrics, "metrics log (default stdout)");
  train->add_option("--checkpoint-every", train_args.checkpoint_every, "also write <out>.step<k>");
  flag<std::size_t>(train, train_layers.flags, "--steps", "train.steps", "total steps");
  flag<std::size_t>(train, train_layers.flags, "--batch", "train.batch", "batch size");
  flag<double>(train, train_layers.flags, "--lr", "train.lr", "peak learning rate");
  flag<std::string>(train, train_layers.flags, "--schedule", "train.schedule", "circle | cosine | exp[:lambda]");
  train_layers.add_to(train);

  // sample
  commands::SampleArgs sample_args;
  Layered sample_layers;
  bool no_ema = false;
  auto* sample = app.add_subcommand("sample", "generate from a checkpoint");
  sample->add_option("--checkpoint", sample_args.checkpoint, "checkpoint")->required();
  sample->add_option("--out", sample_args.out, "output dataset of generated vectors")->required();
  sample->add_option("--tokens", sample_args.tokens, "token dump (default <out>.tokens)");
  sample->add_option("--count", sample_args.count, "samples")->capture_default_str();
  sample->add_option("--label", sample_args.label, "class label, 0 = unconditional")->capture_default_str();
  sample->add_flag("--no-ema", no_ema, "sample with raw instead of EMA parameters");
  flag<std::string>(sample, sample_layers.flags, "--preset", "sample.preset", "paper-28 | paper-48 | paper-64 | reference-63");
  flag<std::size_t>(sample, sample_layers.flags, "--steps", "sample.steps", "steps T");
  flag<std::string>(sample, sample_layers.flags, "--selection", "sample.selection", "random | confidence");
  flag<double>(sample, sample_layers.flags, "--tau", "sample.tau", "choice temperature");
  flag<double>(sample, sample_layers.flags, "--top-p", "sample.top_p", "nucleus threshold");
  flag<double>(sample, sample_layers.flags, "--cfg-start", "sample.cfg_start", "guidance weight at step 1");
  flag<double>(sample, sample_layers.flags, "--cfg-end", "sample.cfg_end", "guidance weight at step T");
  flag<std::string>(sample, sample_layers.flags, "--schedule", "sample.schedule", "circle | cosine | exp[:lambda]");
  sample_layers.add_to(sample);

  // eval
  commands::EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "compare generated vectors with a reference set");
  ev->add_option("--generated", eval_args.generated, "generated dataset")->required();
  ev->add_option("--reference", eval_args.reference, "reference dataset")->required();
  ev->add_option("--codebook", eval_args.codebook, "codebook for reconstruction and usage statistics");
  ev->add_option("--truth", eval_args.truth, "ground-truth sidecar for mode occupancy");
  ev->add_option("--out", eval_args.out, "also write the report here");

  // inspect
  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "print an artifact header");
  inspect->add_option("path", inspect_path, "dataset, codebook or checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_args.spec.seed = synth_seed ? *synth_seed : commands::default_seed();
      return commands::synth(synth_args, std::cout);
    }
    if (fit->parsed()) {
      config::RunConfig rc;
      config::apply(rc, fit_layers.resolve({"rvq.seed"}));
      fit_args.options = rc.rvq;
      return commands::fit_rvq(fit_args, std::cout);
    }
    if (train->parsed()) {
      const auto kv = train_layers.resolve({"train.seed"});
      config::apply(train_args.config, kv);
      train_args.overrides = kv;
      return commands::train(train_args, std::cout);
    }
    if (sample->parsed()) {
      sample_args.overrides = sample_layers.resolve({"sample.seed"});
      sample_args.ema = !no_ema;
      return commands::sample(sample_args, std::cout);
    }
    if (ev->parsed()) return commands::eval(eval_args, std::cout);
    if (inspect->parsed()) return commands::inspect(inspect_path, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
