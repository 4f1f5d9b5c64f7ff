#pragma once

// Training checkpoints. File layout, little-endian:
//   "RGCK", u32 version, str config snapshot (key=value text),
//   str model shape (key=value text), str inline codebook (RVQC bytes),
//   four tensor maps (params, adam_m, adam_v, ema), u64 step, u64 root seed.
// A tensor map is u64 count then per tensor: str name, u32 rank, u64 dims,
// f64 data.

#include <string>

#include "resgen/backbone.hpp"
#include "resgen/config.hpp"
#include "resgen/rvq.hpp"
#include "resgen/trainer.hpp"

namespace resgen::checkpoint {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  config::RunConfig config;
  backbone::BackboneConfig model;  // including data-derived extents
  rvq::Codebook book;
  trainer::TrainState state;
};

std::string serialize(const Checkpoint& c);
Checkpoint deserialize(const std::string& bytes, const std::string& context = "checkpoint");
void save(const Checkpoint& c, const std::string& path);
Checkpoint load(const std::string& path);

}  // namespace resgen::checkpoint
