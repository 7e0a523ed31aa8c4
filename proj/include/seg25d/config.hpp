#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "seg25d/ninepath.hpp"
#include "seg25d/trainer.hpp"

namespace seg25d {

// Experiment settings read from a JSON object. Every key is optional;
// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  Dims dims{48, 64, 48};
  VoxelSize voxel_mm{1.0f, 1.0f, 1.0f};
  InputMode mode = InputMode::FLIP;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double threshold = kMaskThreshold;
  Aggregation aggregation = Aggregation::CNN;

  TrainConfig train_config(std::size_t threads) const;
};

// Throws ConfigError on unknown keys, wrong types or out-of-range values.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical JSON with every field spelled out.
std::string to_json(const RunConfig& c);

// FNV-1a 64 of to_json(c).
std::uint64_t config_hash(const RunConfig& c);

}  // namespace seg25d
