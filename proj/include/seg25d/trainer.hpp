#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seg25d/manifest.hpp"
#include "seg25d/ninepath.hpp"
#include "seg25d/optimizer.hpp"

namespace seg25d {

struct TrainConfig {
  OptimizerConfig optimizer;
  // Stage 2 steps one volume at a time, so it keeps its own schedule when the
  // stage-1 learning rate is rescaled for a smaller slice batch.
  OptimizerConfig post_optimizer;
  std::size_t batch_size = 32;  // 2D slices per stage-1 step
  std::size_t epochs = 50;      // per stage
  std::uint64_t seed = 0;
  InputMode mode = InputMode::FLIP;
  // Worker threads for the nine independent path trainings. Results do not
  // depend on this value.
  std::size_t threads = 1;

  void validate() const;
};

enum class Stage { PATHS, POST };

struct EpochRecord {
  Stage stage;
  std::size_t path;  // kNumPaths for the post-processor
  std::size_t epoch;
  double loss;  // mean over the epoch's batches
  double lr;
  double seconds;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  // Columns: stage,path,epoch,loss,lr,seconds
  std::string to_csv() const;
};

// One manifest record with its volumes loaded.
struct TrainingCase {
  std::string case_id;
  Volume primary;
  std::optional<Volume> second;
  Volume truth;
};

// Reads every record. BIMODAL requires second_input_path (DataError naming
// the case otherwise). All volumes must share dims; a non-empty manifest is
// required.
std::vector<TrainingCase> load_cases(const Manifest& manifest, InputMode mode);

// Stage 1 for one path: every slice of every case, reshuffled each epoch,
// batch Dice loss, SGD with Nesterov momentum.
void train_path(PathModel<float>& model, const PathConfig& config,
                const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                std::vector<EpochRecord>* log);

// Stage 1 for all nine paths, possibly in parallel. Log records are
// appended in path order.
void train_paths(NinePathModel& model, const std::vector<TrainingCase>& cases,
                 const TrainConfig& cfg, TrainLog* log);

// Frozen-path inputs for stage 2, computed once per case.
struct PostDataset {
  std::vector<TensorF> stacks;  // [18, dx, dy, dz]
  std::vector<TensorF> truths;  // [dx, dy, dz]
};

PostDataset build_post_dataset(NinePathModel& model, const std::vector<TrainingCase>& cases,
                               std::size_t threads);

// Mean loss_post over the dataset, without updating anything.
double post_dataset_loss(PostProcessor<float>& post, const PostDataset& data);

// Stage 2: one volume per step, volumes reshuffled each epoch.
void train_post(PostProcessor<float>& post, const PostDataset& data, const TrainConfig& cfg,
                TrainLog* log);

// Both stages from a fresh model seeded by cfg.seed.
NinePathModel train(const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                    TrainLog* log);

}  // namespace seg25d
