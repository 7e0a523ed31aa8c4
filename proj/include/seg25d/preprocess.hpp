#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "seg25d/tensor.hpp"
#include "seg25d/volume.hpp"

namespace seg25d {

// AXIAL: slices at fixed z, images x by y. CORONAL: fixed y, images x by z.
// SAGITTAL: fixed x, images y by z.
enum class Plane { AXIAL = 0, CORONAL = 1, SAGITTAL = 2 };

// IN_PLANE z-scores every 2D slice of the plane, CROSS_PLANE z-scores every
// 1D fiber along the plane normal, BOTH applies IN_PLANE then CROSS_PLANE.
enum class NormScheme { IN_PLANE = 0, CROSS_PLANE = 1, BOTH = 2 };

std::string to_string(Plane p);
std::string to_string(NormScheme s);

struct PathConfig {
  Plane plane;
  NormScheme norm;
  std::size_t index;

  bool operator==(const PathConfig&) const = default;
};

inline constexpr std::size_t kNumPaths = 9;

// Plane-major canonical order: (AXIAL, CORONAL, SAGITTAL) x
// (IN_PLANE, CROSS_PLANE, BOTH).
std::array<PathConfig, kNumPaths> all_path_configs();

// Extent along the plane normal and the (rows, cols) shape of each slice.
std::size_t slice_count(const Dims& d, Plane p);
std::array<std::size_t, 2> slice_shape(const Dims& d, Plane p);

// Slices with population std below this map to zeros.
inline constexpr double kNormEpsilon = 1e-6;

Volume normalize(const Volume& v, Plane plane, NormScheme scheme);

// Ordered 2D slices, each [rows, cols] per slice_shape().
std::vector<TensorF> slice_volume(const Volume& v, Plane plane);

// Inverse of slice_volume. Voxel size and modality come from the arguments.
Volume restack(const std::vector<TensorF>& slices, Plane plane, const Dims& dims,
               VoxelSize voxel = {}, Modality modality = Modality::T1);

// Mirror across x: x -> dx - 1 - x.
Volume flip_lr(const Volume& v);

struct PhantomSpec {
  Dims dims{48, 64, 48};
  VoxelSize voxel_mm{1.0f, 1.0f, 1.0f};
  // Brain ellipsoid semi-axes in voxels; zero means 0.4 * the axis extent.
  std::array<double, 3> brain_semi_axes{0.0, 0.0, 0.0};
  std::size_t lesion_count_min = 1;
  std::size_t lesion_count_max = 3;
  double lesion_semi_axis_min = 2.0;
  double lesion_semi_axis_max = 7.0;
  double t1_base = 0.8;
  double flair_base = 0.6;
  double t1_lesion_delta = -0.3;
  double flair_lesion_delta = 0.3;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

struct Phantom {
  Volume t1;
  Volume flair;
  Volume truth;
};

// Synthetic brain with 1-3 ellipsoidal lesions confined to the left half
// (x < dx/2) of the brain ellipsoid. Every axis must be divisible by 16.
Phantom gen_phantom(const PhantomSpec& spec);

// Throws ConfigError unless every axis is a positive multiple of 16.
void require_divisible_by_16(const Dims& d);

}  // namespace seg25d
