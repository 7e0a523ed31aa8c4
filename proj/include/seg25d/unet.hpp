#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "seg25d/autodiff.hpp"
#include "seg25d/store.hpp"

namespace seg25d {

// What the second encoder sees: the left-right mirrored slice, or the
// co-registered slice of a second modality.
enum class InputMode : std::uint8_t { FLIP = 0, BIMODAL = 1 };

std::string to_string(InputMode m);
InputMode input_mode_from_string(const std::string& s);

inline constexpr std::size_t kFeatureWidth = 32;
// Initial per-pixel lesion probability of a fresh path.
inline constexpr double kHeadPrior = 0.01;
inline constexpr std::size_t kEncoderLevels = 5;
inline constexpr std::size_t kDecoderLevels = kEncoderLevels - 1;

// Whether a forward pass records a graph for parameter gradients.
enum class Grad { kNone, kTrack };

template <class T>
Var<T> bind(Parameter<T>& p, Grad grad) {
  return grad == Grad::kTrack ? Var<T>::param(p) : Var<T>::constant(p.value);
}

// conv3x3 -> relu -> conv3x3 -> relu
template <class T>
struct ConvBlock {
  Parameter<T> w1, b1, w2, b2;
};

template <class T>
struct Encoder {
  std::array<ConvBlock<T>, kEncoderLevels> blocks;
};

// Per level, a per-channel 2x1x1 kernel over the stacked encoder outputs.
template <class T>
struct Fusion {
  std::array<Parameter<T>, kEncoderLevels> w;  // [32, 1, 2, 1, 1]
  std::array<Parameter<T>, kEncoderLevels> b;  // [32]
};

// Indexed by the level each stage upsamples into (0 = full resolution).
template <class T>
struct Decoder {
  std::array<Parameter<T>, kDecoderLevels> up_w;  // [32, 32, 2, 2]
  std::array<Parameter<T>, kDecoderLevels> up_b;
  std::array<ConvBlock<T>, kDecoderLevels> blocks;
  Parameter<T> head_w;  // [1, 32, 1, 1]
  Parameter<T> head_b;  // [1]
};

// One of the nine dual-encoder U-Nets.
template <class T>
struct PathModel {
  std::size_t index = 0;
  Encoder<T> enc_a;
  Encoder<T> enc_b;
  Fusion<T> fuse;
  Decoder<T> dec;

  // Fresh model with seeded uniform fan-in initialization, zero biases, a
  // zero head kernel and a head bias of logit(kHeadPrior).
  static PathModel create(std::size_t index, std::uint64_t seed);

  // Parameters in a fixed order; names follow p{index}.{part}.{block}.{w|b}.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  void save(ModelCheckpoint& ckpt) const;
  // Throws FormatError if an entry is missing or has the wrong shape.
  static PathModel load(const ModelCheckpoint& ckpt, std::size_t index);

  template <class U>
  PathModel<U> cast() const;
};

// Level l features have shape [32, H / 2^l, W / 2^l]. H and W must be
// divisible by 16.
template <class T>
std::array<Var<T>, kEncoderLevels> encode(const Var<T>& slice, Encoder<T>& enc, Grad grad);

template <class T>
Var<T> fuse(const Var<T>& feat_a, const Var<T>& feat_b, Parameter<T>& w, Parameter<T>& b,
            Grad grad);

// How decoder stages merge the fused skip features with upsampled ones.
enum class SkipMerge { ADD, MULTIPLY };

// Returns the [1, H, W] sigmoid probability map.
template <class T>
Var<T> decode(const std::array<Var<T>, kEncoderLevels>& fused, Decoder<T>& dec, Grad grad,
              SkipMerge merge = SkipMerge::ADD);

// Logits before the sigmoid head, [1, H, W].
template <class T>
Var<T> decode_logits(const std::array<Var<T>, kEncoderLevels>& fused, Decoder<T>& dec,
                     Grad grad, SkipMerge merge = SkipMerge::ADD);

// Full path: both encoders, per-level fusion, decoder. `secondary` is the
// matching slice of the mirrored volume in FLIP mode or of the second
// modality in BIMODAL mode. Sagittal mirrors are a different slice of the
// volume, so the caller always supplies it; null raises DataError.
template <class T>
Var<T> path_forward(PathModel<T>& model, InputMode mode, const Tensor<T>& primary,
                    const Tensor<T>* secondary, Grad grad,
                    SkipMerge merge = SkipMerge::ADD);

}  // namespace seg25d
