// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance                 run every criterion
//   acceptance --criterion N   run criterion N only (1..8)
//
// Exit status is 0 only when every selected criterion passes. Scratch files
// go under ./acceptance_work.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "seg25d/cli.hpp"
#include "seg25d/losses.hpp"
#include "seg25d/metrics.hpp"
#include "seg25d/ops.hpp"
#include "seg25d/store.hpp"
#include "seg25d/trainer.hpp"

using namespace seg25d;
using seg25d::testing::grad_check;
using seg25d::testing::random_away_from_zero;
using seg25d::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kElementwiseTol = 1e-4;
constexpr double kCompositeTol = 1e-3;
constexpr int kGradSeeds = 10;
constexpr double kGradBudgetSeconds = 300.0;
// Composite graphs contain many relus; a small step keeps the central
// difference from straddling a kink.
constexpr double kCompositeStep = 1e-6;
constexpr double kExactTol = 1e-12;
constexpr double kOracleTol = 1e-12;
constexpr double kNormalTol = 0.02;
constexpr double kOverfitDice = 0.90;
constexpr double kOverfitBudgetSeconds = 3600.0;
constexpr double kOrderingMargin = 0.05;

// Desk-scale training: the batch of 32 slices at learning rate 0.01 scaled
// linearly to 16 slices at 0.005; momentum, weight decay, decay rate and 50
// epochs unchanged. Stage 2 steps per volume and keeps the default 0.01.
TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.optimizer.learning_rate0 = 0.005;
  cfg.epochs = 50;
  cfg.seed = seed;
  return cfg;
}

// Criterion 6 trains 16 cases per path; 32x32x32 volumes and 20 epochs keep
// it within tens of minutes on one core.
constexpr Dims kOrderingDims{32, 32, 32};
constexpr std::size_t kOrderingEpochs = 20;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir(int criterion) {
  const fs::path p = fs::current_path() / "acceptance_work" / ("c" + std::to_string(criterion));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- 1

struct GradCase {
  std::string name;
  double tol;
  std::function<double(Rng&)> run;  // max relative error for one seed
};

std::vector<GradCase> grad_cases() {
  using V = Var<double>;
  std::vector<GradCase> c;
  c.push_back({"conv2d 3x3", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({2, 5, 4}, rng));
                 Parameter<double> w("w", random_tensor({3, 2, 3, 3}, rng));
                 Parameter<double> b("b", random_tensor({3}, rng));
                 const TensorD wt = random_tensor({3, 5, 4}, rng);
                 auto f = [&] { return weighted_sum(conv2d(V::param(x), V::param(w), V::param(b)), wt); };
                 return grad_check({&x, &w, &b}, f, rng).max_rel_error;
               }});
  c.push_back({"conv2d 1x1", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({4, 3, 3}, rng));
                 Parameter<double> w("w", random_tensor({2, 4, 1, 1}, rng));
                 Parameter<double> b("b", random_tensor({2}, rng));
                 const TensorD wt = random_tensor({2, 3, 3}, rng);
                 auto f = [&] { return weighted_sum(conv2d(V::param(x), V::param(w), V::param(b)), wt); };
                 return grad_check({&x, &w, &b}, f, rng).max_rel_error;
               }});
  c.push_back({"conv3d 3x3x3", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({2, 3, 4, 3}, rng));
                 Parameter<double> w("w", random_tensor({3, 2, 3, 3, 3}, rng));
                 Parameter<double> b("b", random_tensor({3}, rng));
                 const TensorD wt = random_tensor({3, 3, 4, 3}, rng);
                 auto f = [&] { return weighted_sum(conv3d(V::param(x), V::param(w), V::param(b)), wt); };
                 return grad_check({&x, &w, &b}, f, rng).max_rel_error;
               }});
  c.push_back({"conv3d 2x1x1 grouped", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({4, 2, 3, 5}, rng));
                 Parameter<double> w("w", random_tensor({4, 1, 2, 1, 1}, rng));
                 Parameter<double> b("b", random_tensor({4}, rng));
                 const TensorD wt = random_tensor({4, 1, 3, 5}, rng);
                 auto f = [&] {
                   return weighted_sum(conv3d(V::param(x), V::param(w), V::param(b), 4), wt);
                 };
                 return grad_check({&x, &w, &b}, f, rng).max_rel_error;
               }});
  c.push_back({"deconv2", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({3, 2, 3}, rng));
                 Parameter<double> w("w", random_tensor({3, 2, 2, 2}, rng));
                 Parameter<double> b("b", random_tensor({2}, rng));
                 const TensorD wt = random_tensor({2, 4, 6}, rng);
                 auto f = [&] { return weighted_sum(deconv2(V::param(x), V::param(w), V::param(b)), wt); };
                 return grad_check({&x, &w, &b}, f, rng).max_rel_error;
               }});
  c.push_back({"avg_pool2", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({2, 4, 6}, rng));
                 const TensorD wt = random_tensor({2, 2, 3}, rng);
                 auto f = [&] { return weighted_sum(avg_pool2(V::param(x)), wt); };
                 return grad_check({&x}, f, rng).max_rel_error;
               }});
  c.push_back({"relu", kElementwiseTol, [](Rng& rng) {
                 // inputs kept clear of the kink
                 Parameter<double> x("x", random_away_from_zero({3, 4, 5}, rng, 0.05));
                 const TensorD wt = random_tensor({3, 4, 5}, rng);
                 auto f = [&] { return weighted_sum(relu(V::param(x)), wt); };
                 return grad_check({&x}, f, rng).max_rel_error;
               }});
  c.push_back({"sigmoid", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({3, 4}, rng, -3.0, 3.0));
                 const TensorD wt = random_tensor({3, 4}, rng);
                 auto f = [&] { return weighted_sum(sigmoid(V::param(x)), wt); };
                 return grad_check({&x}, f, rng).max_rel_error;
               }});
  c.push_back({"softmax_channels", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> x("x", random_tensor({2, 3, 4}, rng, -2.0, 2.0));
                 const TensorD wt = random_tensor({2, 3, 4}, rng);
                 auto f = [&] { return weighted_sum(softmax_channels(V::param(x)), wt); };
                 return grad_check({&x}, f, rng).max_rel_error;
               }});
  c.push_back({"dice_soft", kElementwiseTol, [](Rng& rng) {
                 Parameter<double> p("p", random_tensor({3, 4}, rng, 0.0, 1.0));
                 TensorD r(Shape{3, 4});
                 for (auto& v : r.data()) v = rng.uniform01() < 0.5;
                 auto f = [&] { return dice_soft(V::param(p), r); };
                 return grad_check({&p}, f, rng).max_rel_error;
               }});
  c.push_back({"loss_path", kCompositeTol, [](Rng& rng) {
                 Parameter<double> z("z", random_tensor({1, 4, 5}, rng, -2.0, 2.0));
                 TensorD r(Shape{1, 4, 5});
                 for (auto& v : r.data()) v = rng.uniform01() < 0.4;
                 auto f = [&] { return loss_path(sigmoid(V::param(z)), r); };
                 return grad_check({&z}, f, rng).max_rel_error;
               }});
  c.push_back({"loss_post", kCompositeTol, [](Rng& rng) {
                 Parameter<double> z("z", random_tensor({2, 3, 3, 2}, rng, -2.0, 2.0));
                 TensorD r(Shape{3, 3, 2});
                 for (auto& v : r.data()) v = rng.uniform01() < 0.4;
                 auto f = [&] { return loss_post(softmax_channels(V::param(z)), r); };
                 return grad_check({&z}, f, rng).max_rel_error;
               }});
  c.push_back({"full path 16x16", kCompositeTol, [](Rng& rng) {
                 auto m = PathModel<double>::create(0, rng.index(1u << 30));
                 for (auto& v : m.dec.head_w.value.data()) v = rng.uniform(-0.5, 0.5);
                 for (auto* p : m.parameters()) {
                   if (p->value.rank() == 1) {
                     for (auto& v : p->value.data()) v = rng.uniform(-0.1, 0.1);
                   }
                 }
                 const TensorD a = random_tensor({16, 16}, rng);
                 const TensorD b = random_tensor({16, 16}, rng);
                 TensorD ref(Shape{1, 16, 16});
                 for (auto& v : ref.data()) v = rng.uniform01() < 0.3;
                 auto f = [&] {
                   return loss_path(path_forward(m, InputMode::FLIP, a, &b, Grad::kTrack), ref);
                 };
                 return grad_check(m.parameters(), f, rng, 3, kCompositeStep).max_rel_error;
               }});
  c.push_back({"post-processor 18x4x4x4", kCompositeTol, [](Rng& rng) {
                 auto post = PostProcessor<double>::create(rng.index(1u << 30));
                 for (auto* p : post.parameters()) {
                   if (p->value.rank() == 1) {
                     for (auto& v : p->value.data()) v = rng.uniform(-0.1, 0.1);
                   }
                 }
                 // The last kernel starts at zero, which would hide every earlier layer.
                 for (auto& v : post.w[3].value.data()) v = rng.uniform(-0.15, 0.15);
                 TensorD s(Shape{18, 4, 4, 4});
                 for (std::size_t ch = 0; ch < 18; ++ch) {
                   for (std::size_t i = 0; i < 64; ++i) {
                     s[ch * 64 + i] = ch % 2 == 0 ? (rng.uniform01() < 0.3) : rng.uniform(0, 1.5);
                   }
                 }
                 TensorD ref(Shape{4, 4, 4});
                 for (auto& v : ref.data()) v = rng.uniform01() < 0.3;
                 auto f = [&] {
                   return loss_post(post_probs(post, Var<double>::constant(s), Grad::kTrack), ref);
                 };
                 return grad_check(post.parameters(), f, rng, 25, kCompositeStep).max_rel_error;
               }});
  return c;
}

Outcome criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& gc : grad_cases()) {
    double worst = 0.0;
    for (int seed = 0; seed < kGradSeeds; ++seed) {
      Rng rng(mix_seed(1, static_cast<std::uint64_t>(seed)));
      worst = std::max(worst, gc.run(rng));
    }
    o.detail << " " << gc.name << "=" << worst;
    o.require(worst < gc.tol, gc.name + " error " + format_double(worst));
  }
  const double secs = seconds_since(t0);
  o.detail << " seconds=" << secs;
  o.require(secs < kGradBudgetSeconds, "runtime over 5 minutes");
  return o;
}

// ---------------------------------------------------------------- 2

void near(Outcome& o, const std::string& what, double got, double want) {
  o.require(std::abs(got - want) <= kExactTol,
            what + " got " + format_double(got) + " want " + format_double(want));
}

Outcome criterion2() {
  Outcome o;
  const Dims d{10, 1, 1};
  auto mask = [&](std::vector<double> v) { return Volume(d, {}, Modality::MASK, std::move(v)); };
  const Volume m = mask({1, 1, 0, 0, 0, 0, 0, 0, 0, 0});
  near(o, "dice identical", dice_coefficient(m, m).dice, 1.0);
  near(o, "dice disjoint", dice_coefficient(m, mask({0, 0, 1, 1, 0, 0, 0, 0, 0, 0})).dice, 0.0);
  near(o, "dice TP3 FP1 FN2",
       dice_coefficient(mask({1, 1, 1, 1, 0, 0, 0, 0, 0, 0}), mask({1, 1, 1, 0, 1, 1, 0, 0, 0, 0}))
           .dice,
       6.0 / 9.0);

  const TensorD half(Shape{2, 2}, 0.5);
  const TensorD r(Shape{2, 2}, std::vector<double>{1, 1, 0, 0});
  near(o, "loss_path exact", loss_path(Var<double>::constant(r), r).value().item(), 0.0);
  near(o, "loss_path uniform half", loss_path(Var<double>::constant(half), r).value().item(),
       1.0 / 3.0);
  near(o, "loss_post uniform half",
       loss_post(Var<double>::constant(half), Var<double>::constant(half), r).value().item(),
       2.0 / 3.0);
  TensorD one_minus(Shape{2, 2});
  for (std::size_t i = 0; i < 4; ++i) one_minus[i] = 1.0 - r[i];
  near(o, "loss_post hard correct",
       loss_post(Var<double>::constant(r), Var<double>::constant(one_minus), r).value().item(),
       0.0);

  const OptimizerConfig opt;
  near(o, "lr epoch 0", learning_rate(opt, 0), 0.01);
  near(o, "lr epoch 49", learning_rate(opt, 49), 0.01 * std::pow(0.97, 49));

  // One axial slice 1,2,3,4: mean 2.5, population std sqrt(1.25).
  const Volume v({2, 2, 1}, {}, Modality::T1, {1, 2, 3, 4});
  const Volume n = normalize(v, Plane::AXIAL, NormScheme::IN_PLANE);
  for (std::size_t i = 0; i < 4; ++i) {
    near(o, "in-plane z-score", n.data()[i], (v.data()[i] - 2.5) / std::sqrt(1.25));
  }
  // Axial normal is z. With x fastest the fibers are (y=0: 0 then 2) and
  // (y=1: 10 then 30), so each maps to -1 then +1.
  const Volume f({1, 2, 2}, {}, Modality::T1, {0, 10, 2, 30});
  const Volume c = normalize(f, Plane::AXIAL, NormScheme::CROSS_PLANE);
  const double want[] = {-1, -1, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) near(o, "cross-plane z-score", c.data()[i], want[i]);
  const Volume flat({2, 2, 2}, {}, Modality::T1, std::vector<double>(8, 3.0));
  const Volume zeroed = normalize(flat, Plane::CORONAL, NormScheme::BOTH);
  for (double x : zeroed.data()) {
    near(o, "constant region", x, 0.0);
  }
  return o;
}

// ---------------------------------------------------------------- 3

double brute_force_p(std::size_t na, std::size_t nb, double w) {
  const std::size_t n = na + nb;
  std::vector<int> pick(n, 0);
  std::fill(pick.end() - static_cast<long>(na), pick.end(), 1);
  std::size_t total = 0, le = 0, ge = 0;
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += pick[i] ? static_cast<double>(i + 1) : 0.0;
    ++total;
    le += s <= w;
    ge += s >= w;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
}

Outcome criterion3() {
  Outcome o;
  Rng rng(3);
  double worst_exact = 0.0;
  std::size_t pairs = 0;
  for (std::size_t na = 1; na < 10; ++na) {
    for (std::size_t nb = 1; na + nb <= 10; ++nb) {
      for (int t = 0; t < 5; ++t) {
        std::vector<double> pool(na + nb);
        for (auto& x : pool) x = rng.uniform01();
        const std::vector<double> a(pool.begin(), pool.begin() + static_cast<long>(na));
        const std::vector<double> b(pool.begin() + static_cast<long>(na), pool.end());
        const RankSumResult r = wilcoxon_ranksum(a, b);
        o.require(r.exact, "pooled n <= 10 without ties must use the exact test");
        worst_exact = std::max(worst_exact, std::abs(r.p - brute_force_p(na, nb, r.w)));
        ++pairs;
      }
    }
  }
  o.detail << " pairs=" << pairs << " max_exact_diff=" << worst_exact;
  o.require(worst_exact <= kOracleTol, "exact p disagrees with enumeration");

  double worst_normal = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(10), b(10);
    for (auto& x : a) x = rng.uniform01();
    const double shift = 0.1 * (t % 6);
    for (auto& x : b) x = rng.uniform01() + shift;
    worst_normal = std::max(worst_normal,
                            std::abs(wilcoxon_normal(a, b).p - wilcoxon_exact(a, b).p));
  }
  o.detail << " max_normal_diff=" << worst_normal;
  o.require(worst_normal <= kNormalTol, "normal approximation off by more than 0.02");
  return o;
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
  Outcome o;
  const fs::path dir = work_dir(4);
  PhantomSpec spec;
  spec.seed = 4;
  const Phantom ph = gen_phantom(spec);
  for (const Volume* v : {&ph.t1, &ph.flair, &ph.truth}) {
    const auto bytes = encode_volume(*v);
    const Volume back = decode_volume(bytes);
    o.require(back == *v && encode_volume(back) == bytes, "MVOL1 roundtrip");
  }
  write_volume(ph.t1, dir / "t1.mvol");
  o.require(read_volume(dir / "t1.mvol") == ph.t1, "MVOL1 file roundtrip");

  NinePathModel model = NinePathModel::create(InputMode::FLIP, 4);
  const ModelCheckpoint ckpt = model.save(12345);
  const auto cb = encode_checkpoint(ckpt);
  o.require(decode_checkpoint(cb) == ckpt && encode_checkpoint(decode_checkpoint(cb)) == cb,
            "NPCK1 roundtrip");
  write_checkpoint(ckpt, dir / "m.npck");
  o.require(read_checkpoint(dir / "m.npck") == ckpt, "NPCK1 file roundtrip");
  o.require(NinePathModel::load(ckpt).save(12345) == ckpt, "model reload");

  for (Plane p : {Plane::AXIAL, Plane::CORONAL, Plane::SAGITTAL}) {
    o.require(restack(slice_volume(ph.t1, p), p, ph.t1.dims(), ph.t1.voxel_mm(), Modality::T1) ==
                  ph.t1,
              "slice/restack identity on " + to_string(p));
  }
  o.require(flip_lr(flip_lr(ph.flair)) == ph.flair, "flip involution");

  for (Aggregation a : {Aggregation::CNN, Aggregation::MAJORITY, Aggregation::UNION}) {
    const Prediction pr = predict(model, ph.t1, nullptr, a);
    o.require(pr.mask.dims() == ph.t1.dims(), "mask dims for " + to_string(a));
    for (const auto& pm : pr.path_masks) {
      o.require(pm.dims() == ph.t1.dims(), "path mask dims");
    }
  }
  o.detail << " dims=" << to_string(ph.t1.dims());
  return o;
}

// ---------------------------------------------------------------- 5

Outcome criterion5() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  PhantomSpec spec;
  spec.seed = 5;
  const Phantom ph = gen_phantom(spec);
  const std::vector<TrainingCase> cases{{"overfit", ph.t1, ph.flair, ph.truth}};
  TrainLog log;
  NinePathModel model = train(cases, desk_config(5), &log);
  const Prediction pr = predict(model, ph.t1, nullptr, Aggregation::CNN);
  const double dice = dice_coefficient(pr.mask, ph.truth).dice;
  const double secs = seconds_since(t0);
  std::ostringstream finals;
  for (const auto& r : log.records) {
    if (r.stage == Stage::PATHS && r.epoch + 1 == desk_config(5).epochs) {
      finals << (r.path == 0 ? "" : "/") << r.loss;
    }
  }
  o.detail << " dims=" << to_string(ph.t1.dims()) << " lesion_voxels=" << ph.truth.count_nonzero()
           << " cnn_dice=" << dice
           << " majority_dice=" << dice_coefficient(aggregate_majority(pr.path_masks), ph.truth).dice
           << " final_path_losses=" << finals.str()
           << " final_post_loss=" << log.records.back().loss << " seconds=" << secs;
  o.require(dice >= kOverfitDice, "training-set CNN Dice below 0.90");
  o.require(secs <= kOverfitBudgetSeconds, "runtime over 60 minutes");
  return o;
}

// ---------------------------------------------------------------- 6

std::vector<TrainingCase> phantom_cases(std::size_t first, std::size_t n, Dims dims,
                                        std::uint64_t seed) {
  std::vector<TrainingCase> out;
  for (std::size_t i = first; i < first + n; ++i) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.seed = mix_seed(seed, i);
    const Phantom p = gen_phantom(spec);
    out.push_back({"case_" + std::to_string(i), p.t1, p.flair, p.truth});
  }
  return out;
}

Outcome criterion6() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_set = phantom_cases(0, 16, kOrderingDims, 6);
  const auto test_set = phantom_cases(16, 8, kOrderingDims, 6);
  TrainConfig cfg = desk_config(6);
  cfg.epochs = kOrderingEpochs;
  NinePathModel model = train(train_set, cfg, nullptr);
  double sum[3] = {0, 0, 0};
  for (const auto& c : test_set) {
    const Prediction pr = predict(model, c.primary, nullptr, Aggregation::CNN);
    sum[0] += dice_coefficient(pr.mask, c.truth).dice;
    sum[1] += dice_coefficient(aggregate_majority(pr.path_masks), c.truth).dice;
    sum[2] += dice_coefficient(aggregate_union(pr.path_masks), c.truth).dice;
  }
  const double n = static_cast<double>(test_set.size());
  const double cnn = sum[0] / n, maj = sum[1] / n, uni = sum[2] / n;
  o.detail << " dims=" << to_string(kOrderingDims) << " epochs=" << kOrderingEpochs
           << " cnn=" << cnn << " majority=" << maj << " union=" << uni
           << " seconds=" << seconds_since(t0);
  o.require(cnn >= maj, "cnn < majority");
  o.require(maj > uni, "majority <= union");
  o.require(cnn - uni >= kOrderingMargin, "cnn - union < 0.05");
  return o;
}

// ---------------------------------------------------------------- 7

Volume box_mask(Dims d, VoxelSize mm, std::array<std::size_t, 3> lo,
                std::array<std::size_t, 3> n) {
  Volume v(d, mm, Modality::MASK);
  for (std::size_t x = lo[0]; x < lo[0] + n[0]; ++x) {
    for (std::size_t y = lo[1]; y < lo[1] + n[1]; ++y) {
      for (std::size_t z = lo[2]; z < lo[2] + n[2]; ++z) v.at(x, y, z) = 1.0;
    }
  }
  return v;
}

Outcome criterion7() {
  Outcome o;
  const Dims d{32, 32, 32};
  // 20 voxels of 0.995 mm span 19.9 mm; 20 voxels of 1 mm span 20.0 mm.
  const LesionSize below = classify_lesion_size(box_mask(d, {0.995f, 1, 1}, {3, 3, 3}, {20, 5, 5}));
  const LesionSize at = classify_lesion_size(box_mask(d, {1, 1, 1}, {3, 3, 3}, {20, 5, 5}));
  o.detail << " x_extent_small=" << below.extent_mm.x << " x_extent_large=" << at.extent_mm.x;
  o.require(below.lesion_class == LesionClass::SMALL, "19.9 mm extent must be SMALL");
  o.require(at.lesion_class == LesionClass::LARGE, "20.0 mm extent must be LARGE");
  const LesionSize z_below = classify_lesion_size(box_mask(d, {1, 1, 0.995f}, {0, 0, 0}, {5, 5, 25}));
  const LesionSize z_at = classify_lesion_size(box_mask(d, {1, 1, 1}, {0, 0, 0}, {5, 5, 25}));
  o.require(z_below.lesion_class == LesionClass::SMALL, "24.875 mm z extent must be SMALL");
  o.require(z_at.lesion_class == LesionClass::LARGE, "25.0 mm z extent must be LARGE");

  // Evaluation report over phantoms: every row's class follows the rule on
  // its own extents, and the per-group counts partition the cases.
  const fs::path dir = work_dir(7);
  std::ostringstream out, err;
  const std::string pdir = (dir / "phantoms").string();
  if (run_cli({"phantom", "--count", "12", "--size", "48x64x48", "--seed", "7", "--out", pdir}, out,
              err) != kExitOk) {
    o.require(false, "phantom command: " + err.str());
    return o;
  }
  const Manifest m = load_manifest(dir / "phantoms" / "manifest.json");
  fs::create_directories(dir / "pred");
  for (const auto& r : m.records) {
    fs::copy_file(r.truth_mask_path, dir / "pred" / (r.case_id + ".mvol"));
  }
  std::ostringstream eout;
  if (run_cli({"evaluate", "--pred-dir", (dir / "pred").string(), "--manifest",
               (dir / "phantoms" / "manifest.json").string(), "--out",
               (dir / "eval.csv").string()},
              eout, err) != kExitOk) {
    o.require(false, "evaluate command: " + err.str());
    return o;
  }
  const auto bytes = read_file_bytes(dir / "eval.csv");
  std::istringstream csv(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(csv, line);
  std::size_t small = 0, large = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    const double ex = std::stod(cells[6]), ey = std::stod(cells[7]), ez = std::stod(cells[8]);
    const bool rule_small = ex < 20.0 && ey < 20.0 && ez < 25.0;
    o.require(cells[5] == (rule_small ? "SMALL" : "LARGE"), "class of " + cells[0]);
    (rule_small ? small : large) += 1;
  }
  const std::string summary = eout.str();
  o.require(summary.find("group=SMALL n=" + std::to_string(small)) != std::string::npos,
            "SMALL group count");
  o.require(summary.find("group=LARGE n=" + std::to_string(large)) != std::string::npos,
            "LARGE group count");
  o.require(small + large == m.records.size(), "groups partition the cases");
  o.detail << " phantoms_small=" << small << " phantoms_large=" << large;
  return o;
}

// ---------------------------------------------------------------- 8

// The log's seconds column is wall-clock time; every other column must match.
std::string drop_seconds(const std::string& csv) {
  std::istringstream is(csv);
  std::ostringstream os;
  for (std::string line; std::getline(is, line);) os << line.substr(0, line.rfind(',')) << "\n";
  return os.str();
}

std::string file_text(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

bool pipeline(const fs::path& root, std::string& error) {
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) {
    if (run_cli(args, out, err) == kExitOk) return true;
    error = args[0] + ": " + err.str();
    return false;
  };
  const std::string manifest = (root / "data" / "manifest.json").string();
  fs::create_directories(root);
  write_file_bytes(root / "config.json",
                   [] {
                     const std::string s =
                         R"({"seed": 8, "dims": [16, 16, 16], "epochs": 2, "batch_size": 16})";
                     return std::vector<std::uint8_t>(s.begin(), s.end());
                   }());
  return run({"phantom", "--count", "4", "--size", "16x16x16", "--seed", "8", "--out",
              (root / "data").string()}) &&
         run({"train", "--manifest", manifest, "--config", (root / "config.json").string(),
              "--out", (root / "model.npck").string(), "--reference"}) &&
         run({"predict", "--checkpoint", (root / "model.npck").string(), "--manifest", manifest,
              "--aggregation", "cnn", "--out-dir", (root / "pred").string(), "--reference"}) &&
         run({"evaluate", "--pred-dir", (root / "pred").string(), "--manifest", manifest, "--out",
              (root / "eval.csv").string()});
}

Outcome criterion8() {
  Outcome o;
  const fs::path dir = work_dir(8);
  std::string error;
  for (const char* run : {"a", "b"}) {
    if (!pipeline(dir / run, error)) {
      o.require(false, error);
      return o;
    }
  }
  const fs::path a = dir / "a", b = dir / "b";
  std::size_t compared = 0;
  auto same = [&](const fs::path& rel) {
    ++compared;
    o.require(file_text(a / rel) == file_text(b / rel), rel.string() + " differs");
  };
  same("model.npck");
  same("eval.csv");
  for (const auto& e : fs::directory_iterator(a / "data")) same(fs::path("data") / e.path().filename());
  for (const auto& e : fs::directory_iterator(a / "pred")) same(fs::path("pred") / e.path().filename());
  o.require(drop_seconds(file_text(a / "model.npck.log.csv")) ==
                drop_seconds(file_text(b / "model.npck.log.csv")),
            "training log differs outside the seconds column");
  o.detail << " files_compared=" << compared;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"gradient suite", criterion1},        {"exact values", criterion2},
      {"rank-sum oracle", criterion3},       {"roundtrips and shapes", criterion4},
      {"single-phantom overfit", criterion5}, {"aggregation ordering", criterion6},
      {"lesion-size stratification", criterion7}, {"pipeline determinism", criterion8}};
  bool ok = true;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = all[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::cout << "CRITERION " << i + 1 << " (" << all[i].first << "): "
              << (o.pass ? "PASS" : "FAIL") << o.detail.str() << std::endl;
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
