#include "seg25d/ninepath.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "seg25d/fpenv.hpp"
#include "seg25d/ops.hpp"
#include "seg25d/optimizer.hpp"
#include "seg25d/random.hpp"

namespace seg25d {

namespace {

constexpr std::uint64_t kPostSeedStream = 2000;

template <class T>
PostProcessor<T> post_skeleton(Rng* rng) {
  PostProcessor<T> p;
  const auto& ch = PostProcessor<T>::kChannels;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string n = "post." + std::to_string(l);
    p.w[l] = Parameter<T>(n + ".w", Tensor<T>(Shape{ch[l + 1], ch[l], 3, 3, 3}));
    p.b[l] = Parameter<T>(n + ".b", Tensor<T>(Shape{ch[l + 1]}));
    if (rng != nullptr) init_uniform(p.w[l].value, ch[l] * 27, *rng);
  }
  return p;
}

}  // namespace

template <class T>
PostProcessor<T> PostProcessor<T>::create(std::uint64_t seed) {
  Rng rng(mix_seed(seed, kPostSeedStream));
  PostProcessor<T> p = post_skeleton<T>(&rng);
  // Same rare-class prior as the path heads. From a uniform softmax the
  // background Dice term, summed over every voxel, drove the lesion channel
  // to zero within a few steps for some seeds.
  for (T& v : p.w[3].value.data()) v = T{0};
  p.b[3].value[0] = static_cast<T>(std::log(kHeadPrior));
  p.b[3].value[1] = static_cast<T>(std::log(1.0 - kHeadPrior));
  return p;
}

template <class T>
std::vector<Parameter<T>*> PostProcessor<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (std::size_t l = 0; l < 4; ++l) {
    out.push_back(&w[l]);
    out.push_back(&b[l]);
  }
  return out;
}

template <class T>
void PostProcessor<T>::save(ModelCheckpoint& ckpt) const {
  for (std::size_t l = 0; l < 4; ++l) {
    ckpt.set(w[l].name, w[l].value.template cast<float>());
    ckpt.set(b[l].name, b[l].value.template cast<float>());
  }
}

template <class T>
PostProcessor<T> PostProcessor<T>::load(const ModelCheckpoint& ckpt) {
  PostProcessor<T> p = post_skeleton<T>(nullptr);
  for (Parameter<T>* q : p.parameters()) {
    const TensorF& t = ckpt.get(q->name);
    if (t.shape() != q->value.shape()) {
      throw FormatError("checkpoint entry " + q->name + " has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(q->value.shape()));
    }
    q->value = t.template cast<T>();
  }
  return p;
}

template <class T>
template <class U>
PostProcessor<U> PostProcessor<T>::cast() const {
  PostProcessor<U> out = post_skeleton<U>(nullptr);
  for (std::size_t l = 0; l < 4; ++l) {
    out.w[l].value = w[l].value.template cast<U>();
    out.b[l].value = b[l].value.template cast<U>();
  }
  return out;
}

template <class T>
Var<T> post_logits(PostProcessor<T>& post, const Var<T>& stacked, Grad grad) {
  const Shape& s = stacked.shape();
  if (s.size() != 4 || s[0] != kStackChannels) {
    throw DimensionError("post-processor expects [18,dx,dy,dz], got " + shape_str(s));
  }
  Var<T> h = stacked;
  for (std::size_t l = 0; l < 4; ++l) {
    h = conv3d(h, bind(post.w[l], grad), bind(post.b[l], grad));
    if (l < 3) h = relu(h);
  }
  return h;
}

template <class T>
Var<T> post_probs(PostProcessor<T>& post, const Var<T>& stacked, Grad grad) {
  return softmax_channels(post_logits(post, stacked, grad));
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> post_forward(PostProcessor<T>& post, const Tensor<T>& stacked) {
  Var<T> probs = post_probs(post, Var<T>::constant(stacked), Grad::kNone);
  const Tensor<T>& v = probs.value();
  check_not_nan(v, "post-processor output");
  const Shape ch{v.dim(1), v.dim(2), v.dim(3)};
  const std::size_t n = shape_size(ch);
  const auto d = v.data();
  Tensor<T> p(ch, std::vector<T>(d.begin(), d.begin() + n));
  Tensor<T> q(ch, std::vector<T>(d.begin() + n, d.end()));
  return {std::move(p), std::move(q)};
}

template struct PostProcessor<float>;
template struct PostProcessor<double>;
template PostProcessor<double> PostProcessor<float>::cast<double>() const;
template PostProcessor<float> PostProcessor<double>::cast<float>() const;
template Var<float> post_logits(PostProcessor<float>&, const Var<float>&, Grad);
template Var<double> post_logits(PostProcessor<double>&, const Var<double>&, Grad);
template Var<float> post_probs(PostProcessor<float>&, const Var<float>&, Grad);
template Var<double> post_probs(PostProcessor<double>&, const Var<double>&, Grad);
template std::pair<TensorF, TensorF> post_forward(PostProcessor<float>&, const TensorF&);
template std::pair<TensorD, TensorD> post_forward(PostProcessor<double>&, const TensorD&);

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::CNN: return "cnn";
    case Aggregation::MAJORITY: return "majority";
    case Aggregation::UNION: return "union";
  }
  return "?";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "cnn") return Aggregation::CNN;
  if (s == "majority") return Aggregation::MAJORITY;
  if (s == "union") return Aggregation::UNION;
  throw ConfigError("unknown aggregation \"" + s + "\" (expected cnn, majority or union)");
}

NinePathModel NinePathModel::create(InputMode mode, std::uint64_t seed) {
  NinePathModel m;
  m.mode = mode;
  for (std::size_t k = 0; k < kNumPaths; ++k) m.paths.push_back(PathModel<float>::create(k, seed));
  m.post = PostProcessor<float>::create(seed);
  return m;
}

TensorF encode_hash(std::uint64_t h) {
  TensorF t(Shape{4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((h >> (16 * i)) & 0xFFFF);
  return t;
}

std::uint64_t decode_hash(const TensorF& t) {
  if (t.shape() != Shape{4}) throw FormatError("meta.config_hash must have shape [4]");
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const float f = t[i];
    if (!(f >= 0.0f && f <= 65535.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f))) {
      throw FormatError("meta.config_hash chunk out of range");
    }
    h |= static_cast<std::uint64_t>(f) << (16 * i);
  }
  return h;
}

ModelCheckpoint NinePathModel::save(std::uint64_t config_hash) const {
  ModelCheckpoint c;
  c.set("meta.mode", TensorF(Shape{1}, static_cast<float>(mode)));
  c.set("meta.config_hash", encode_hash(config_hash));
  for (const auto& p : paths) p.save(c);
  post.save(c);
  return c;
}

NinePathModel NinePathModel::load(const ModelCheckpoint& ckpt) {
  NinePathModel m;
  const TensorF& mode = ckpt.get("meta.mode");
  if (mode.size() != 1 || (mode[0] != 0.0f && mode[0] != 1.0f)) {
    throw FormatError("meta.mode must be a single 0 (flip) or 1 (bimodal)");
  }
  m.mode = mode[0] == 0.0f ? InputMode::FLIP : InputMode::BIMODAL;
  for (std::size_t k = 0; k < kNumPaths; ++k) m.paths.push_back(PathModel<float>::load(ckpt, k));
  m.post = PostProcessor<float>::load(ckpt);
  return m;
}

Volume secondary_volume(InputMode mode, const Volume& primary, const Volume* second) {
  if (mode == InputMode::FLIP) return flip_lr(primary);
  if (second == nullptr) throw DataError("bimodal mode needs a second input volume");
  require_same_dims(primary, *second, "second input");
  return *second;
}

Volume predict_path_probabilities(PathModel<float>& model, const PathConfig& config,
                                  InputMode mode, const Volume& primary,
                                  const Volume* second) {
  const Dims& d = primary.dims();
  const auto shape = slice_shape(d, config.plane);
  if (shape[0] % 16 != 0 || shape[1] % 16 != 0) {
    throw DimensionError("in-plane dims of " + to_string(d) + " on the " +
                         to_string(config.plane) + " plane must be divisible by 16");
  }
  const Volume a = normalize(primary, config.plane, config.norm);
  // Mirroring only permutes slices and fibers, so the mirror of the
  // normalized volume is the normalized mirror.
  const Volume b = mode == InputMode::FLIP
                       ? flip_lr(a)
                       : normalize(secondary_volume(mode, primary, second), config.plane,
                                   config.norm);
  const auto sa = slice_volume(a, config.plane);
  const auto sb = slice_volume(b, config.plane);
  std::vector<TensorF> out;
  out.reserve(sa.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    Var<float> p = path_forward(model, mode, sa[i], &sb[i], Grad::kNone);
    check_not_nan(p.value(), "path output");
    out.push_back(p.value().reshaped(sa[i].shape()));
  }
  return restack(out, config.plane, d, primary.voxel_mm(), Modality::T1);
}

Volume binarize(const Volume& probabilities) {
  Volume m(probabilities.dims(), probabilities.voxel_mm(), Modality::MASK);
  const auto& src = probabilities.data();
  auto& dst = m.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < kMaskThreshold ? 0.0 : 1.0;
  return m;
}

Volume predict_path_volume(PathModel<float>& model, const PathConfig& config, InputMode mode,
                           const Volume& primary, const Volume* second) {
  return binarize(predict_path_probabilities(model, config, mode, primary, second));
}

namespace {

void require_nine(std::span<const Volume> masks, const Volume* like) {
  if (masks.size() != kNumPaths) {
    throw DimensionError("expected 9 path masks, got " + std::to_string(masks.size()));
  }
  const Volume& ref = like != nullptr ? *like : masks[0];
  for (std::size_t k = 0; k < masks.size(); ++k) {
    require_same_dims(ref, masks[k], "path mask " + std::to_string(k));
  }
}

}  // namespace

TensorF volume_to_tensor(const Volume& v) {
  const Dims& d = v.dims();
  TensorF t(Shape{d.x, d.y, d.z});
  auto out = t.data();
  std::size_t i = 0;
  for (std::size_t x = 0; x < d.x; ++x) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t z = 0; z < d.z; ++z) out[i++] = static_cast<float>(v.at(x, y, z));
    }
  }
  return t;
}

Volume tensor_to_volume(const TensorF& t, const Volume& like, Modality modality) {
  const Dims& d = like.dims();
  if (t.shape() != Shape{d.x, d.y, d.z}) {
    throw DimensionError("tensor " + shape_str(t.shape()) + " does not match volume " +
                         to_string(d));
  }
  Volume v(d, like.voxel_mm(), modality);
  const auto in = t.data();
  std::size_t i = 0;
  for (std::size_t x = 0; x < d.x; ++x) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t z = 0; z < d.z; ++z) v.at(x, y, z) = in[i++];
    }
  }
  return v;
}

TensorF build_stack(const Volume& primary, std::span<const Volume> masks) {
  require_nine(masks, &primary);
  const Dims& d = primary.dims();
  const std::size_t n = d.count();
  TensorF t(Shape{kStackChannels, d.x, d.y, d.z});
  auto out = t.data();
  const TensorF input = volume_to_tensor(primary);
  for (std::size_t k = 0; k < kNumPaths; ++k) {
    const TensorF m = volume_to_tensor(masks[k]);
    std::copy(m.data().begin(), m.data().end(), out.begin() + (2 * k) * n);
    std::copy(input.data().begin(), input.data().end(), out.begin() + (2 * k + 1) * n);
  }
  return t;
}

Volume aggregate_majority(std::span<const Volume> masks) {
  require_nine(masks, nullptr);
  Volume out(masks[0].dims(), masks[0].voxel_mm(), Modality::MASK);
  auto& dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    int votes = 0;
    for (const auto& m : masks) votes += m.data()[i] != 0.0;
    dst[i] = votes >= 5 ? 1.0 : 0.0;
  }
  return out;
}

Volume aggregate_union(std::span<const Volume> masks) {
  require_nine(masks, nullptr);
  Volume out(masks[0].dims(), masks[0].voxel_mm(), Modality::MASK);
  auto& dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    bool any = false;
    for (const auto& m : masks) any = any || m.data()[i] != 0.0;
    dst[i] = any ? 1.0 : 0.0;
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      enable_flush_to_zero();
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Prediction predict(NinePathModel& model, const Volume& primary, const Volume* second,
                   Aggregation aggregation, std::size_t threads) {
  if (model.paths.size() != kNumPaths) throw DataError("model does not hold nine paths");
  enable_flush_to_zero();
  const auto configs = all_path_configs();
  Prediction out;
  out.path_masks.resize(kNumPaths);
  parallel_for(kNumPaths, threads, [&](std::size_t k) {
    out.path_masks[k] =
        predict_path_volume(model.paths[k], configs[k], model.mode, primary, second);
  });
  switch (aggregation) {
    case Aggregation::MAJORITY:
      out.mask = aggregate_majority(out.path_masks);
      break;
    case Aggregation::UNION:
      out.mask = aggregate_union(out.path_masks);
      break;
    case Aggregation::CNN: {
      const TensorF stack = build_stack(primary, out.path_masks);
      auto [p, q] = post_forward(model.post, stack);
      out.mask = binarize(tensor_to_volume(p, primary, Modality::T1));
      break;
    }
  }
  return out;
}

}  // namespace seg25d
