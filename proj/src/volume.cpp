#include "seg25d/volume.hpp"

#include <algorithm>
#include <cmath>

namespace seg25d {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::T1: return "T1";
    case Modality::FLAIR: return "FLAIR";
    case Modality::MASK: return "MASK";
    case Modality::MAP: return "MAP";
  }
  return "?";
}

std::string to_string(const Dims& d) {
  return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

Volume::Volume(Dims dims, VoxelSize voxel, Modality modality)
    : Volume(dims, voxel, modality, std::vector<double>(dims.count(), 0.0)) {}

Volume::Volume(Dims dims, VoxelSize voxel, Modality modality, std::vector<double> data)
    : dims_(dims), voxel_(voxel), modality_(modality), data_(std::move(data)) {
  if (dims_.count() == 0) throw DimensionError("volume dims must be positive");
  if (!(voxel_.x > 0 && voxel_.y > 0 && voxel_.z > 0)) {
    throw DimensionError("voxel sizes must be positive");
  }
  if (data_.size() != dims_.count()) {
    throw DimensionError("volume data length " + std::to_string(data_.size()) +
                         " does not match dims " + to_string(dims_));
  }
}

void Volume::validate() const {
  if (modality_ == Modality::MASK) {
    for (double v : data_) {
      if (v != 0.0 && v != 1.0) throw DataError("MASK volume holds non-binary value");
    }
  } else if (modality_ == Modality::MAP) {
    for (double v : data_) {
      if (!(v >= 0.0) || std::floor(v) != v) {
        throw DataError("MAP volume holds a value that is not a non-negative integer");
      }
    }
  }
}

std::size_t Volume::count_nonzero() const {
  return static_cast<std::size_t>(
      std::count_if(data_.begin(), data_.end(), [](double v) { return v != 0.0; }));
}

void require_same_dims(const Volume& a, const Volume& b, const std::string& what) {
  if (a.dims() != b.dims()) {
    throw DimensionError(what + ": dims " + to_string(a.dims()) + " vs " +
                         to_string(b.dims()));
  }
}

}  // namespace seg25d
