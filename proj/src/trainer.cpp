#include "seg25d/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "seg25d/fpenv.hpp"
#include "seg25d/losses.hpp"
#include "seg25d/random.hpp"
#include "seg25d/store.hpp"

namespace seg25d {

namespace {

constexpr std::uint64_t kPathShuffleStream = 3000;
constexpr std::uint64_t kPostShuffleStream = 4000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string stage_name(Stage s) { return s == Stage::PATHS ? "paths" : "post"; }

void require_binary(const Volume& v, const std::string& what) {
  for (double x : v.data()) {
    if (x != 0.0 && x != 1.0) throw DataError(what + " is not a binary mask");
  }
}

struct SliceSample {
  TensorF primary;    // [H, W]
  TensorF secondary;  // [H, W]
  TensorF truth;      // [1, H, W]
};

std::vector<SliceSample> slice_dataset(const PathConfig& config,
                                       const std::vector<TrainingCase>& cases, InputMode mode) {
  std::vector<SliceSample> out;
  for (const auto& c : cases) {
    const Volume a = normalize(c.primary, config.plane, config.norm);
    const Volume b = mode == InputMode::FLIP
                         ? flip_lr(a)
                         : normalize(secondary_volume(mode, c.primary,
                                                      c.second ? &*c.second : nullptr),
                                     config.plane, config.norm);
    auto sa = slice_volume(a, config.plane);
    auto sb = slice_volume(b, config.plane);
    auto st = slice_volume(c.truth, config.plane);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      Shape s{1, st[i].dim(0), st[i].dim(1)};
      out.push_back({std::move(sa[i]), std::move(sb[i]), st[i].reshaped(std::move(s))});
    }
  }
  return out;
}

void check_loss(double loss, const std::string& where) {
  if (std::isnan(loss)) throw NumericError("NaN loss in " + where);
}

}  // namespace

void TrainConfig::validate() const {
  optimizer.validate();
  post_optimizer.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "stage,path,epoch,loss,lr,seconds\n";
  for (const auto& r : records) {
    os << stage_name(r.stage) << ',' << r.path << ',' << r.epoch << ',' << r.loss << ','
       << r.lr << ',' << r.seconds << '\n';
  }
  return os.str();
}

std::vector<TrainingCase> load_cases(const Manifest& manifest, InputMode mode) {
  if (manifest.records.empty()) throw DataError("manifest has no cases");
  std::vector<TrainingCase> cases;
  for (const auto& r : manifest.records) {
    TrainingCase c;
    c.case_id = r.case_id;
    c.primary = read_volume(r.input_volume_path);
    if (mode == InputMode::BIMODAL) {
      if (!r.second_input_path) {
        throw DataError("case " + r.case_id + ": bimodal mode needs second_input_path");
      }
      c.second = read_volume(*r.second_input_path);
      require_same_dims(c.primary, *c.second, "case " + r.case_id + " second input");
    }
    c.truth = read_volume(r.truth_mask_path);
    require_same_dims(c.primary, c.truth, "case " + r.case_id + " truth mask");
    require_binary(c.truth, "case " + r.case_id + " truth");
    if (!cases.empty()) require_same_dims(cases.front().primary, c.primary, "case " + r.case_id);
    cases.push_back(std::move(c));
  }
  return cases;
}

void train_path(PathModel<float>& model, const PathConfig& config,
                const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                std::vector<EpochRecord>* log) {
  enable_flush_to_zero();
  cfg.validate();
  if (cases.empty()) throw DataError("no training cases");
  const Dims& d = cases.front().primary.dims();
  if (d.x % 16 != 0 || d.y % 16 != 0 || d.z % 16 != 0) {
    throw DimensionError("training dims " + to_string(d) + " must be divisible by 16");
  }
  const auto data = slice_dataset(config, cases, cfg.mode);
  const auto params = model.parameters();
  Rng rng(mix_seed(cfg.seed, kPathShuffleStream + config.index));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Var<float>> probs;
      std::vector<const TensorF*> refs;
      for (std::size_t j = start; j < end; ++j) {
        const SliceSample& s = data[order[j]];
        probs.push_back(path_forward(model, cfg.mode, s.primary, &s.secondary, Grad::kTrack));
        refs.push_back(&s.truth);
      }
      Var<float> loss = loss_path<float>(probs, refs);
      const double value = loss.value()[0];
      check_loss(value, "path " + std::to_string(config.index) + " epoch " +
                            std::to_string(epoch));
      loss.backward();
      sgd_nesterov_step<float>(params, cfg.optimizer, epoch);
      total += value;
      ++batches;
    }
    if (log != nullptr) {
      log->push_back({Stage::PATHS, config.index, epoch, total / static_cast<double>(batches),
                      learning_rate(cfg.optimizer, epoch), seconds_since(t0)});
    }
  }
}

void train_paths(NinePathModel& model, const std::vector<TrainingCase>& cases,
                 const TrainConfig& cfg, TrainLog* log) {
  if (model.paths.size() != kNumPaths) throw DataError("model does not hold nine paths");
  const auto configs = all_path_configs();
  std::vector<std::vector<EpochRecord>> logs(kNumPaths);
  parallel_for(kNumPaths, cfg.threads, [&](std::size_t k) {
    train_path(model.paths[k], configs[k], cases, cfg, &logs[k]);
  });
  if (log != nullptr) {
    for (auto& l : logs) log->records.insert(log->records.end(), l.begin(), l.end());
  }
}

PostDataset build_post_dataset(NinePathModel& model, const std::vector<TrainingCase>& cases,
                               std::size_t threads) {
  PostDataset data;
  for (const auto& c : cases) {
    const Prediction pred =
        predict(model, c.primary, c.second ? &*c.second : nullptr, Aggregation::UNION, threads);
    data.stacks.push_back(build_stack(c.primary, pred.path_masks));
    data.truths.push_back(volume_to_tensor(c.truth));
  }
  return data;
}

double post_dataset_loss(PostProcessor<float>& post, const PostDataset& data) {
  enable_flush_to_zero();
  if (data.stacks.empty()) throw DataError("empty post-processor dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.stacks.size(); ++i) {
    Var<float> probs = post_probs(post, Var<float>::constant(data.stacks[i]), Grad::kNone);
    total += loss_post(probs, data.truths[i]).value()[0];
  }
  return total / static_cast<double>(data.stacks.size());
}

void train_post(PostProcessor<float>& post, const PostDataset& data, const TrainConfig& cfg,
                TrainLog* log) {
  enable_flush_to_zero();
  cfg.validate();
  if (data.stacks.empty()) throw DataError("empty post-processor dataset");
  const auto params = post.parameters();
  Rng rng(mix_seed(cfg.seed, kPostShuffleStream));
  std::vector<std::size_t> order(data.stacks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t i : order) {
      Var<float> probs = post_probs(post, Var<float>::constant(data.stacks[i]), Grad::kTrack);
      Var<float> loss = loss_post(probs, data.truths[i]);
      const double value = loss.value()[0];
      check_loss(value, "post-processor epoch " + std::to_string(epoch));
      loss.backward();
      sgd_nesterov_step<float>(params, cfg.post_optimizer, epoch);
      total += value;
    }
    if (log != nullptr) {
      log->records.push_back({Stage::POST, kNumPaths, epoch,
                              total / static_cast<double>(order.size()),
                              learning_rate(cfg.post_optimizer, epoch), seconds_since(t0)});
    }
  }
}

NinePathModel train(const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                    TrainLog* log) {
  cfg.validate();
  NinePathModel model = NinePathModel::create(cfg.mode, cfg.seed);
  train_paths(model, cases, cfg, log);
  const PostDataset data = build_post_dataset(model, cases, cfg.threads);
  train_post(model.post, data, cfg, log);
  return model;
}

}  // namespace seg25d
