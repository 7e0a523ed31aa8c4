#include "seg25d/unet.hpp"

#include <cmath>

#include "seg25d/ops.hpp"
#include "seg25d/optimizer.hpp"
#include "seg25d/random.hpp"

namespace seg25d {

std::string to_string(InputMode m) { return m == InputMode::FLIP ? "flip" : "bimodal"; }

InputMode input_mode_from_string(const std::string& s) {
  if (s == "flip") return InputMode::FLIP;
  if (s == "bimodal") return InputMode::BIMODAL;
  throw ConfigError("unknown input mode \"" + s + "\" (expected flip or bimodal)");
}

namespace {

constexpr std::size_t W = kFeatureWidth;

// Visits every parameter in canonical order. Works for const and non-const
// models.
template <class Model, class Fn>
void visit_params(Model& m, Fn&& fn) {
  auto block = [&](auto& b) {
    fn(b.w1);
    fn(b.b1);
    fn(b.w2);
    fn(b.b2);
  };
  for (auto& b : m.enc_a.blocks) block(b);
  for (auto& b : m.enc_b.blocks) block(b);
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    fn(m.fuse.w[l]);
    fn(m.fuse.b[l]);
  }
  for (std::size_t l = 0; l < kDecoderLevels; ++l) {
    fn(m.dec.up_w[l]);
    fn(m.dec.up_b[l]);
    block(m.dec.blocks[l]);
  }
  fn(m.dec.head_w);
  fn(m.dec.head_b);
}

template <class T>
Parameter<T> make_param(const std::string& name, Shape shape, std::size_t fan_in, Rng* rng) {
  Parameter<T> p(name, Tensor<T>(std::move(shape)));
  if (rng != nullptr && fan_in > 0) init_uniform(p.value, fan_in, *rng);
  return p;
}

template <class T>
ConvBlock<T> make_block(const std::string& prefix, std::size_t cin, Rng* rng) {
  return ConvBlock<T>{
      make_param<T>(prefix + "a.w", {W, cin, 3, 3}, cin * 9, rng),
      make_param<T>(prefix + "a.b", {W}, 0, nullptr),
      make_param<T>(prefix + "b.w", {W, W, 3, 3}, W * 9, rng),
      make_param<T>(prefix + "b.b", {W}, 0, nullptr),
  };
}

// Builds the parameter skeleton; with a null rng all values are zero.
template <class T>
PathModel<T> skeleton(std::size_t index, Rng* rng) {
  PathModel<T> m;
  m.index = index;
  const std::string p = "p" + std::to_string(index) + ".";
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    m.enc_a.blocks[l] = make_block<T>(p + "encA." + std::to_string(l), l == 0 ? 1 : W, rng);
  }
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    m.enc_b.blocks[l] = make_block<T>(p + "encB." + std::to_string(l), l == 0 ? 1 : W, rng);
  }
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    const std::string n = p + "fuse." + std::to_string(l);
    m.fuse.w[l] = make_param<T>(n + ".w", {W, 1, 2, 1, 1}, 2, rng);
    m.fuse.b[l] = make_param<T>(n + ".b", {W}, 0, nullptr);
  }
  for (std::size_t l = 0; l < kDecoderLevels; ++l) {
    const std::string n = p + "dec." + std::to_string(l);
    m.dec.up_w[l] = make_param<T>(n + "up.w", {W, W, 2, 2}, W, rng);
    m.dec.up_b[l] = make_param<T>(n + "up.b", {W}, 0, nullptr);
    m.dec.blocks[l] = make_block<T>(n, W, rng);
  }
  // The head kernel starts at zero and the bias at the lesion prior, so
  // every pixel begins at probability kHeadPrior. With fan-in scaling the
  // logits start near +-7 and the saturated sigmoid stalls Dice training; at
  // 0.5 the soft Dice gradient is tiny for lesions this sparse.
  m.dec.head_w = make_param<T>(p + "head.0.w", {1, W, 1, 1}, 0, nullptr);
  m.dec.head_b = make_param<T>(p + "head.0.b", {1}, 0, nullptr);
  if (rng != nullptr) {
    m.dec.head_b.value[0] = static_cast<T>(std::log(kHeadPrior / (1.0 - kHeadPrior)));
  }
  return m;
}

template <class T>
Var<T> conv_block(const Var<T>& x, ConvBlock<T>& b, Grad grad) {
  Var<T> h = relu(conv2d(x, bind(b.w1, grad), bind(b.b1, grad)));
  return relu(conv2d(h, bind(b.w2, grad), bind(b.b2, grad)));
}

}  // namespace

template <class T>
PathModel<T> PathModel<T>::create(std::size_t index, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 1000 + index));
  return skeleton<T>(index, &rng);
}

template <class T>
std::vector<Parameter<T>*> PathModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit_params(*this, [&](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <class T>
std::vector<const Parameter<T>*> PathModel<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  visit_params(*this, [&](const Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <class T>
std::size_t PathModel<T>::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const Parameter<T>& p) { n += p.value.size(); });
  return n;
}

template <class T>
void PathModel<T>::save(ModelCheckpoint& ckpt) const {
  visit_params(*this, [&](const Parameter<T>& p) {
    ckpt.set(p.name, p.value.template cast<float>());
  });
}

template <class T>
PathModel<T> PathModel<T>::load(const ModelCheckpoint& ckpt, std::size_t index) {
  PathModel<T> m = skeleton<T>(index, nullptr);
  visit_params(m, [&](Parameter<T>& p) {
    const TensorF& t = ckpt.get(p.name);
    if (t.shape() != p.value.shape()) {
      throw FormatError("checkpoint entry " + p.name + " has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(p.value.shape()));
    }
    p.value = t.template cast<T>();
  });
  return m;
}

template <class T>
template <class U>
PathModel<U> PathModel<T>::cast() const {
  PathModel<U> out = skeleton<U>(index, nullptr);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<U>();
    dst[i]->velocity = src[i]->velocity.template cast<U>();
  }
  return out;
}

template <class T>
std::array<Var<T>, kEncoderLevels> encode(const Var<T>& slice, Encoder<T>& enc, Grad grad) {
  const Shape& s = slice.shape();
  if (s.size() != 3 || s[0] != 1) {
    throw DimensionError("encode expects a [1,H,W] slice, got " + shape_str(s));
  }
  if (s[1] % 16 != 0 || s[2] % 16 != 0) {
    throw DimensionError("slice dims " + shape_str(s) + " must be divisible by 16");
  }
  std::array<Var<T>, kEncoderLevels> feats;
  Var<T> h = slice;
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    if (l > 0) h = avg_pool2(h);
    h = conv_block(h, enc.blocks[l], grad);
    feats[l] = h;
  }
  return feats;
}

template <class T>
Var<T> fuse(const Var<T>& feat_a, const Var<T>& feat_b, Parameter<T>& w, Parameter<T>& b,
            Grad grad) {
  if (feat_a.shape() != feat_b.shape() || feat_a.shape().size() != 3) {
    throw DimensionError("fuse shape mismatch " + shape_str(feat_a.shape()) + " vs " +
                         shape_str(feat_b.shape()));
  }
  const Shape& s = feat_a.shape();
  Var<T> stacked = stack2(feat_a, feat_b);  // [C, 2, h, w]
  Var<T> out = conv3d(stacked, bind(w, grad), bind(b, grad), s[0]);  // [C, 1, h, w]
  return reshape(out, s);
}

template <class T>
Var<T> decode_logits(const std::array<Var<T>, kEncoderLevels>& fused, Decoder<T>& dec,
                     Grad grad, SkipMerge merge) {
  for (std::size_t l = 1; l < kEncoderLevels; ++l) {
    const Shape& hi = fused[l - 1].shape();
    const Shape& lo = fused[l].shape();
    if (hi.size() != 3 || lo.size() != 3 || hi[0] != lo[0] || hi[1] != 2 * lo[1] ||
        hi[2] != 2 * lo[2]) {
      throw DimensionError("decoder level ladder broken between " + shape_str(hi) + " and " +
                           shape_str(lo));
    }
  }
  Var<T> h = fused[kEncoderLevels - 1];
  for (std::size_t step = 0; step < kDecoderLevels; ++step) {
    const std::size_t l = kDecoderLevels - 1 - step;
    Var<T> up = deconv2(h, bind(dec.up_w[l], grad), bind(dec.up_b[l], grad));
    Var<T> merged = merge == SkipMerge::ADD ? add(up, fused[l]) : mul(up, fused[l]);
    h = conv_block(merged, dec.blocks[l], grad);
  }
  return conv2d(h, bind(dec.head_w, grad), bind(dec.head_b, grad));
}

template <class T>
Var<T> decode(const std::array<Var<T>, kEncoderLevels>& fused, Decoder<T>& dec, Grad grad,
              SkipMerge merge) {
  return sigmoid(decode_logits(fused, dec, grad, merge));
}

template <class T>
Var<T> path_forward(PathModel<T>& model, InputMode mode, const Tensor<T>& primary,
                    const Tensor<T>* secondary, Grad grad, SkipMerge merge) {
  if (secondary == nullptr) {
    throw DataError(std::string("path_forward: missing secondary slice in ") +
                    (mode == InputMode::BIMODAL ? "bimodal" : "flip") + " mode");
  }
  auto as_slice = [](const Tensor<T>& t) {
    if (t.rank() == 2) return t.reshaped(Shape{1, t.dim(0), t.dim(1)});
    return t;
  };
  Tensor<T> a = as_slice(primary);
  Tensor<T> b = as_slice(*secondary);
  if (a.shape() != b.shape()) {
    throw DimensionError("primary " + shape_str(a.shape()) + " and secondary " +
                         shape_str(b.shape()) + " slices differ");
  }
  auto fa = encode(Var<T>::constant(std::move(a)), model.enc_a, grad);
  auto fb = encode(Var<T>::constant(std::move(b)), model.enc_b, grad);
  std::array<Var<T>, kEncoderLevels> fused;
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    fused[l] = fuse(fa[l], fb[l], model.fuse.w[l], model.fuse.b[l], grad);
  }
  return decode(fused, model.dec, grad, merge);
}

#define SEG25D_INSTANTIATE_UNET(T)                                                       \
  template struct PathModel<T>;                                                          \
  template std::array<Var<T>, kEncoderLevels> encode(const Var<T>&, Encoder<T>&, Grad);  \
  template Var<T> fuse(const Var<T>&, const Var<T>&, Parameter<T>&, Parameter<T>&, Grad); \
  template Var<T> decode(const std::array<Var<T>, kEncoderLevels>&, Decoder<T>&, Grad,   \
                         SkipMerge);                                                     \
  template Var<T> decode_logits(const std::array<Var<T>, kEncoderLevels>&, Decoder<T>&,  \
                                Grad, SkipMerge);                                        \
  template Var<T> path_forward(PathModel<T>&, InputMode, const Tensor<T>&,               \
                               const Tensor<T>*, Grad, SkipMerge);

SEG25D_INSTANTIATE_UNET(float)
SEG25D_INSTANTIATE_UNET(double)

template PathModel<double> PathModel<float>::cast<double>() const;
template PathModel<float> PathModel<double>::cast<float>() const;
template PathModel<float> PathModel<float>::cast<float>() const;

}  // namespace seg25d
