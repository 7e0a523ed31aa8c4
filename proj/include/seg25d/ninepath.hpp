#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seg25d/preprocess.hpp"
#include "seg25d/unet.hpp"

namespace seg25d {

inline constexpr double kMaskThreshold = 0.5;
inline constexpr std::size_t kStackChannels = 2 * kNumPaths;

// 3D CNN over the 18-channel stack: four 3x3x3 convolutions
// 18 -> 36 -> 9 -> 9 -> 2, relu after the first three.
template <class T>
struct PostProcessor {
  static constexpr std::array<std::size_t, 5> kChannels{kStackChannels, 36, 9, 9, 2};

  std::array<Parameter<T>, 4> w;
  std::array<Parameter<T>, 4> b;

  // Uniform fan-in initialization, zero biases, except the last layer: zero
  // kernel and biases log(kHeadPrior), log(1 - kHeadPrior), so a fresh
  // model predicts lesion probability kHeadPrior everywhere.
  static PostProcessor create(std::uint64_t seed);
  std::vector<Parameter<T>*> parameters();

  void save(ModelCheckpoint& ckpt) const;
  static PostProcessor load(const ModelCheckpoint& ckpt);

  template <class U>
  PostProcessor<U> cast() const;
};

// Two-channel logits [2, dx, dy, dz] for a stacked input [18, dx, dy, dz].
template <class T>
Var<T> post_logits(PostProcessor<T>& post, const Var<T>& stacked, Grad grad);

// Softmax of post_logits.
template <class T>
Var<T> post_probs(PostProcessor<T>& post, const Var<T>& stacked, Grad grad);

// Lesion and complement probabilities, each [dx, dy, dz]. NaN raises
// NumericError.
template <class T>
std::pair<Tensor<T>, Tensor<T>> post_forward(PostProcessor<T>& post, const Tensor<T>& stacked);

enum class Aggregation { CNN, MAJORITY, UNION };

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

// Nine paths in canonical order plus the post-processor.
struct NinePathModel {
  std::vector<PathModel<float>> paths;
  PostProcessor<float> post;
  InputMode mode = InputMode::FLIP;

  static NinePathModel create(InputMode mode, std::uint64_t seed);

  // Every parameter plus meta.mode and meta.config_hash.
  ModelCheckpoint save(std::uint64_t config_hash = 0) const;
  static NinePathModel load(const ModelCheckpoint& ckpt);
};

// meta.config_hash is stored as four 16-bit chunks, exact in f32.
TensorF encode_hash(std::uint64_t h);
std::uint64_t decode_hash(const TensorF& t);

// The per-path secondary volume: the mirror of `primary` in FLIP mode, the
// second modality in BIMODAL mode (DataError when absent).
Volume secondary_volume(InputMode mode, const Volume& primary, const Volume* second);

// Sigmoid probabilities of one path, restacked to the input geometry.
Volume predict_path_probabilities(PathModel<float>& model, const PathConfig& config,
                                  InputMode mode, const Volume& primary,
                                  const Volume* second);

// Values below 0.5 map to 0, everything else to 1.
Volume binarize(const Volume& probabilities);

// predict_path_probabilities followed by binarize.
Volume predict_path_volume(PathModel<float>& model, const PathConfig& config, InputMode mode,
                           const Volume& primary, const Volume* second);

// Channel 2k holds path k's mask, channel 2k+1 the un-normalized primary
// input. Shape [18, dx, dy, dz], z fastest.
TensorF build_stack(const Volume& primary, std::span<const Volume> masks);

// Reorders a [dx, dy, dz] tensor into a volume.
Volume tensor_to_volume(const TensorF& t, const Volume& like, Modality modality);
TensorF volume_to_tensor(const Volume& v);

// Voxel is 1 when at least 5 of the 9 masks are 1.
Volume aggregate_majority(std::span<const Volume> masks);
// Voxelwise OR.
Volume aggregate_union(std::span<const Volume> masks);

struct Prediction {
  std::vector<Volume> path_masks;
  Volume mask;
};

// Path predictions may run on up to `threads` threads; the result does not
// depend on the thread count.
Prediction predict(NinePathModel& model, const Volume& primary, const Volume* second,
                   Aggregation aggregation, std::size_t threads = 1);

// Runs fn(0) .. fn(n - 1) on up to `threads` threads. The first exception
// thrown is rethrown after every worker finishes.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace seg25d
