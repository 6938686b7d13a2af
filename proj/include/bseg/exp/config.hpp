#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bseg/data/scene.hpp"
#include "bseg/data/tiling.hpp"
#include "bseg/model/architecture.hpp"
#include "bseg/model/trainer.hpp"

namespace bseg::exp {

struct CorpusConfig {
  int scenes = 64;
  int height = 256;
  int width = 256;
  std::uint64_t seed = 1;
  data::SceneParams scene;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};  // train, val, test
  std::uint64_t split_seed = 1;
  data::PatchGeometry geometry;
  data::NormalizeParams normalize;
};

struct BootstrapConfig {
  int rounds = 3;
  std::uint64_t seed = 1;  // easy-sample draws
  bool include_zero_bin = true;
  bool force_full_subset = false;
  bool match_steps = true;
};

struct EvalConfig {
  std::vector<double> overlaps{0.25, 0.5, 0.75, 0.9};
  int thresholds = 99;  // evenly spaced grid 1/(n+1) .. n/(n+1)
  std::size_t min_component = 0;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  model::ArchitectureSpec model;
  model::TrainConfig train;  // train.seed is the training base seed for every round
  BootstrapConfig bootstrap;
  EvalConfig eval;
  std::filesystem::path output_dir;

  std::vector<double> threshold_grid() const;
};

// INI text: [corpus] [model] [train] [bootstrap] [eval] [output] sections of
// key = value lines; '#' or ';' start comment lines. Omitted keys keep their
// defaults; unknown sections and keys are rejected. Errors name the line for
// syntax problems and the [section] key for invalid values.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");

// Relative output.dir resolves against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field as INI in a fixed order with round-trip number formatting.
// [output] is excluded so relocating a run does not change its identity;
// appending an [output] section yields a loadable config.
std::string canonical_config(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

// Throws Error naming the offending field.
void validate(const ExperimentConfig& config);

}  // namespace bseg::exp
