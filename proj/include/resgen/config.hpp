#pragma once

// Flat key=value configuration. Later sources override earlier ones:
// defaults, then a config file, then command-line settings.

#include <map>
#include <string>
#include <vector>

#include "resgen/backbone.hpp"
#include "resgen/rvq.hpp"
#include "resgen/sampler.hpp"
#include "resgen/trainer.hpp"

namespace resgen::config {

using KeyValues = std::map<std::string, std::string>;

// Lines of "key = value"; '#' starts a comment. Duplicate keys are errors.
KeyValues parse_key_values(const std::string& text, const std::string& context = "config");
KeyValues load_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

// "key=value" as given on a command line.
std::pair<std::string, std::string> split_assignment(const std::string& text);

struct RunConfig {
  rvq::FitOptions rvq;
  backbone::BackboneConfig model;
  trainer::TrainConfig train;
  sampler::SamplerConfig sample;
};

// Keys are "<section>.<field>" with sections rvq, model, train, sample.
// "sample.preset" replaces the whole sample section with a named preset.
void set(RunConfig& c, const std::string& key, const std::string& value);
void apply(RunConfig& c, const KeyValues& kv);
KeyValues to_key_values(const RunConfig& c);
std::vector<std::string> known_keys();

}  // namespace resgen::config
