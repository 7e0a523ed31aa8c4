#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seg25d/error.hpp"

namespace seg25d {

enum class Modality : std::uint8_t { T1 = 0, FLAIR = 1, MASK = 2, MAP = 3 };

std::string to_string(Modality m);

struct Dims {
  std::size_t x = 0, y = 0, z = 0;

  std::size_t count() const { return x * y * z; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

struct VoxelSize {
  float x = 1.0f, y = 1.0f, z = 1.0f;
  bool operator==(const VoxelSize&) const = default;
};

// 3D scalar grid, x fastest, then y, then z. Values are held in double;
// the on-disk payload is f32. x runs left to right,
// y posterior to anterior, z inferior to superior.
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, VoxelSize voxel, Modality modality);
  Volume(Dims dims, VoxelSize voxel, Modality modality, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  const VoxelSize& voxel_mm() const { return voxel_; }
  Modality modality() const { return modality_; }
  void set_modality(Modality m) { modality_ = m; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.x * (y + dims_.y * z);
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[index(x, y, z)];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // MASK: only 0/1. MAP: non-negative integers. Throws DataError otherwise.
  void validate() const;

  // Number of nonzero voxels.
  std::size_t count_nonzero() const;

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_;
  VoxelSize voxel_;
  Modality modality_ = Modality::T1;
  std::vector<double> data_;
};

// Throws DimensionError unless a and b share dims.
void require_same_dims(const Volume& a, const Volume& b, const std::string& what);

}  // namespace seg25d
