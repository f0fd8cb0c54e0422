#pragma once

#include <string>

#include "phymoe/degrade.hpp"
#include "phymoe/train.hpp"

namespace phymoe {

/// Merged tool configuration: model extents, training recipe and synthesis
/// ranges. Loaded from a plain key=value file; every key is validated
/// against the schema and unknown keys are rejected.
struct CliConfig {
  ModelConfig model;
  TrainConfig train;
  SynthesisRanges synth;
};

// Applies one key=value assignment; throws std::invalid_argument on an
// unknown key or a malformed value.
void apply_config_kv(CliConfig& cfg, const std::string& key, const std::string& value);

// Parses a config file ('#' comments, blank lines allowed).
void load_config_file(CliConfig& cfg, const std::string& path);

std::vector<std::string> config_schema_keys();

}  // namespace phymoe
