#include <gtest/gtest.h>

#include <cmath>

#include "seg25d/preprocess.hpp"
#include "seg25d/random.hpp"

using namespace seg25d;

namespace {

Volume random_volume(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(d, {}, Modality::T1);
  for (auto& x : v.data()) x = static_cast<float>(rng.uniform(0, 3));
  return v;
}

constexpr Plane kPlanes[] = {Plane::AXIAL, Plane::CORONAL, Plane::SAGITTAL};

TEST(PathConfigs, CanonicalOrder) {
  const auto c = all_path_configs();
  EXPECT_EQ(c[0], (PathConfig{Plane::AXIAL, NormScheme::IN_PLANE, 0}));
  EXPECT_EQ(c[4], (PathConfig{Plane::CORONAL, NormScheme::CROSS_PLANE, 4}));
  EXPECT_EQ(c[8], (PathConfig{Plane::SAGITTAL, NormScheme::BOTH, 8}));
}

TEST(Slicing, ShapesPerPlane) {
  const Dims d{48, 64, 32};
  EXPECT_EQ(slice_count(d, Plane::AXIAL), 32u);
  EXPECT_EQ(slice_shape(d, Plane::AXIAL), (std::array<std::size_t, 2>{48, 64}));
  EXPECT_EQ(slice_count(d, Plane::CORONAL), 64u);
  EXPECT_EQ(slice_shape(d, Plane::CORONAL), (std::array<std::size_t, 2>{48, 32}));
  EXPECT_EQ(slice_count(d, Plane::SAGITTAL), 48u);
  EXPECT_EQ(slice_shape(d, Plane::SAGITTAL), (std::array<std::size_t, 2>{64, 32}));
}

TEST(Slicing, SliceRestackIdentityOnAllPlanes) {
  const Volume v = random_volume({5, 4, 3}, 1);
  for (Plane p : kPlanes) {
    const auto s = slice_volume(v, p);
    EXPECT_EQ(restack(s, p, v.dims(), v.voxel_mm(), v.modality()), v) << to_string(p);
  }
}

TEST(Slicing, VoxelPlacement) {
  Volume v({3, 4, 5}, {}, Modality::T1);
  v.at(2, 1, 3) = 7.0;
  EXPECT_EQ(slice_volume(v, Plane::AXIAL)[3](2, 1), 7.0f);
  EXPECT_EQ(slice_volume(v, Plane::CORONAL)[1](2, 3), 7.0f);
  EXPECT_EQ(slice_volume(v, Plane::SAGITTAL)[2](1, 3), 7.0f);
}

TEST(Slicing, RestackRejectsWrongShapes) {
  const Volume v = random_volume({4, 4, 4}, 2);
  auto s = slice_volume(v, Plane::AXIAL);
  s.pop_back();
  EXPECT_THROW(restack(s, Plane::AXIAL, v.dims()), DimensionError);
  auto t = slice_volume(v, Plane::AXIAL);
  t[0] = TensorF(Shape{4, 3});
  EXPECT_THROW(restack(t, Plane::AXIAL, v.dims()), DimensionError);
}

TEST(Flip, InvolutionAndMirror) {
  const Volume v = random_volume({6, 3, 2}, 3);
  EXPECT_EQ(flip_lr(flip_lr(v)), v);
  EXPECT_EQ(flip_lr(v).at(0, 1, 1), v.at(5, 1, 1));
}

TEST(Normalize, InPlaneExactValues) {
  // One axial slice holding 1, 2, 3, 4: mean 2.5, population std sqrt(1.25).
  Volume v({2, 2, 1}, {}, Modality::T1, {1, 2, 3, 4});
  const Volume n = normalize(v, Plane::AXIAL, NormScheme::IN_PLANE);
  const double sd = std::sqrt(1.25);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(n.data()[i], (v.data()[i] - 2.5) / sd, 1e-12);
  }
}

TEST(Normalize, CrossPlaneUsesFibersAlongNormal) {
  // Axial normal is z: each (x, y) fiber is z-scored on its own.
  Volume v({1, 2, 2}, {}, Modality::T1, {0, 10, 2, 30});
  const Volume n = normalize(v, Plane::AXIAL, NormScheme::CROSS_PLANE);
  EXPECT_NEAR(n.at(0, 0, 0), -1.0, 1e-12);
  EXPECT_NEAR(n.at(0, 0, 1), 1.0, 1e-12);
  EXPECT_NEAR(n.at(0, 1, 0), -1.0, 1e-12);
  EXPECT_NEAR(n.at(0, 1, 1), 1.0, 1e-12);
}

TEST(Normalize, ConstantRegionsMapToZero) {
  Volume v({4, 4, 2}, {}, Modality::T1);
  for (auto& x : v.data()) x = 5.0;
  for (Plane p : kPlanes) {
    for (NormScheme s : {NormScheme::IN_PLANE, NormScheme::CROSS_PLANE, NormScheme::BOTH}) {
      const Volume n = normalize(v, p, s);
      for (double x : n.data()) EXPECT_EQ(x, 0.0);
    }
  }
}

TEST(Normalize, BothIsInPlaneThenCrossPlane) {
  const Volume v = random_volume({4, 6, 5}, 4);
  for (Plane p : kPlanes) {
    const Volume both = normalize(v, p, NormScheme::BOTH);
    const Volume seq = normalize(normalize(v, p, NormScheme::IN_PLANE), p, NormScheme::CROSS_PLANE);
    EXPECT_EQ(both, seq);
  }
}

TEST(Normalize, SlicesHaveZeroMeanUnitStdAndAreIdempotent) {
  const Volume v = random_volume({8, 6, 4}, 5);
  for (Plane p : kPlanes) {
    const Volume n = normalize(v, p, NormScheme::IN_PLANE);
    for (const auto& s : slice_volume(n, p)) {
      double mean = 0, sq = 0;
      for (float x : s.data()) mean += x;
      mean /= static_cast<double>(s.size());
      for (float x : s.data()) sq += (x - mean) * (x - mean);
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(std::sqrt(sq / static_cast<double>(s.size())), 1.0, 1e-6);
    }
    for (NormScheme s : {NormScheme::IN_PLANE, NormScheme::CROSS_PLANE}) {
      const Volume once = normalize(v, p, s);
      const Volume twice = normalize(once, p, s);
      for (std::size_t i = 0; i < once.data().size(); ++i) {
        EXPECT_NEAR(once.data()[i], twice.data()[i], 1e-10);
      }
    }
  }
}

TEST(Normalize, CommutesWithFlip) {
  const Volume v = random_volume({6, 4, 4}, 6);
  for (Plane p : kPlanes) {
    for (NormScheme s : {NormScheme::IN_PLANE, NormScheme::CROSS_PLANE, NormScheme::BOTH}) {
      const Volume a = flip_lr(normalize(v, p, s));
      const Volume b = normalize(flip_lr(v), p, s);
      for (std::size_t i = 0; i < a.data().size(); ++i) {
        EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
      }
    }
  }
}

TEST(Phantom, DeterministicAndWellFormed) {
  PhantomSpec spec;
  spec.seed = 9;
  const Phantom a = gen_phantom(spec);
  const Phantom b = gen_phantom(spec);
  EXPECT_EQ(a.t1, b.t1);
  EXPECT_EQ(a.flair, b.flair);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_EQ(a.truth.modality(), Modality::MASK);
  EXPECT_NO_THROW(a.truth.validate());
  EXPECT_GT(a.truth.count_nonzero(), 0u);
  spec.seed = 10;
  EXPECT_NE(gen_phantom(spec).truth, a.truth);
}

TEST(Phantom, LesionsInLeftHemisphereWithContrast) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.seed = seed;
    const Phantom p = gen_phantom(spec);
    const Dims& d = p.truth.dims();
    double t1_in = 0, t1_out = 0, fl_in = 0, fl_out = 0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t z = 0; z < d.z; ++z) {
      for (std::size_t y = 0; y < d.y; ++y) {
        for (std::size_t x = 0; x < d.x; ++x) {
          if (p.truth.at(x, y, z) != 0.0) {
            EXPECT_LT(x, d.x / 2);
            t1_in += p.t1.at(x, y, z);
            fl_in += p.flair.at(x, y, z);
            ++n_in;
          } else if (p.t1.at(x, y, z) > 0.5) {
            t1_out += p.t1.at(x, y, z);
            fl_out += p.flair.at(x, y, z);
            ++n_out;
          }
        }
      }
    }
    ASSERT_GT(n_in, 0u);
    EXPECT_LT(t1_in / n_in, t1_out / n_out - 0.2);
    EXPECT_GT(fl_in / n_in, fl_out / n_out + 0.2);
  }
}

TEST(Phantom, RequiresDivisibleBy16) {
  PhantomSpec spec;
  spec.dims = {50, 64, 48};
  EXPECT_THROW(gen_phantom(spec), ConfigError);
  EXPECT_THROW(require_divisible_by_16({16, 16, 8}), ConfigError);
  EXPECT_NO_THROW(require_divisible_by_16({16, 32, 48}));
}

}  // namespace
