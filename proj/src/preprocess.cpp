#include "seg25d/preprocess.hpp"

#include <cmath>

#include "seg25d/random.hpp"

namespace seg25d {

std::string to_string(Plane p) {
  switch (p) {
    case Plane::AXIAL: return "axial";
    case Plane::CORONAL: return "coronal";
    case Plane::SAGITTAL: return "sagittal";
  }
  return "?";
}

std::string to_string(NormScheme s) {
  switch (s) {
    case NormScheme::IN_PLANE: return "in_plane";
    case NormScheme::CROSS_PLANE: return "cross_plane";
    case NormScheme::BOTH: return "both";
  }
  return "?";
}

std::array<PathConfig, kNumPaths> all_path_configs() {
  std::array<PathConfig, kNumPaths> out{};
  std::size_t i = 0;
  for (Plane p : {Plane::AXIAL, Plane::CORONAL, Plane::SAGITTAL}) {
    for (NormScheme s : {NormScheme::IN_PLANE, NormScheme::CROSS_PLANE, NormScheme::BOTH}) {
      out[i] = PathConfig{p, s, i};
      ++i;
    }
  }
  return out;
}

namespace {

// Maps (slice k, row i, col j) to a voxel index.
struct PlaneGeometry {
  std::size_t count, rows, cols;
  std::size_t stride_k, stride_i, stride_j;

  PlaneGeometry(const Dims& d, Plane p) {
    const std::size_t sx = 1, sy = d.x, sz = d.x * d.y;
    switch (p) {
      case Plane::AXIAL:
        count = d.z, rows = d.x, cols = d.y;
        stride_k = sz, stride_i = sx, stride_j = sy;
        break;
      case Plane::CORONAL:
        count = d.y, rows = d.x, cols = d.z;
        stride_k = sy, stride_i = sx, stride_j = sz;
        break;
      case Plane::SAGITTAL:
      default:
        count = d.x, rows = d.y, cols = d.z;
        stride_k = sx, stride_i = sy, stride_j = sz;
        break;
    }
  }

  std::size_t at(std::size_t k, std::size_t i, std::size_t j) const {
    return k * stride_k + i * stride_i + j * stride_j;
  }
};

// z-scores the values at `idx` in place with the epsilon-zero rule.
void zscore(std::vector<double>& data, const std::vector<std::size_t>& idx) {
  double mean = 0.0;
  for (auto i : idx) mean += data[i];
  mean /= static_cast<double>(idx.size());
  double var = 0.0;
  for (auto i : idx) var += (data[i] - mean) * (data[i] - mean);
  const double sd = std::sqrt(var / static_cast<double>(idx.size()));
  if (sd < kNormEpsilon) {
    for (auto i : idx) data[i] = 0.0;
    return;
  }
  for (auto i : idx) data[i] = (data[i] - mean) / sd;
}

void normalize_in_plane(std::vector<double>& data, const PlaneGeometry& g) {
  std::vector<std::size_t> idx(g.rows * g.cols);
  for (std::size_t k = 0; k < g.count; ++k) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) idx[n++] = g.at(k, i, j);
    }
    zscore(data, idx);
  }
}

void normalize_cross_plane(std::vector<double>& data, const PlaneGeometry& g) {
  std::vector<std::size_t> idx(g.count);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      for (std::size_t k = 0; k < g.count; ++k) idx[k] = g.at(k, i, j);
      zscore(data, idx);
    }
  }
}

}  // namespace

std::size_t slice_count(const Dims& d, Plane p) { return PlaneGeometry(d, p).count; }

std::array<std::size_t, 2> slice_shape(const Dims& d, Plane p) {
  PlaneGeometry g(d, p);
  return {g.rows, g.cols};
}

Volume normalize(const Volume& v, Plane plane, NormScheme scheme) {
  PlaneGeometry g(v.dims(), plane);
  std::vector<double> data = v.data();
  if (scheme == NormScheme::IN_PLANE || scheme == NormScheme::BOTH) {
    normalize_in_plane(data, g);
  }
  if (scheme == NormScheme::CROSS_PLANE || scheme == NormScheme::BOTH) {
    normalize_cross_plane(data, g);
  }
  return Volume(v.dims(), v.voxel_mm(), v.modality(), std::move(data));
}

std::vector<TensorF> slice_volume(const Volume& v, Plane plane) {
  PlaneGeometry g(v.dims(), plane);
  std::vector<TensorF> out;
  out.reserve(g.count);
  const auto& data = v.data();
  for (std::size_t k = 0; k < g.count; ++k) {
    TensorF t(Shape{g.rows, g.cols});
    float* dst = t.raw();
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        *dst++ = static_cast<float>(data[g.at(k, i, j)]);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

Volume restack(const std::vector<TensorF>& slices, Plane plane, const Dims& dims,
               VoxelSize voxel, Modality modality) {
  PlaneGeometry g(dims, plane);
  if (slices.size() != g.count) {
    throw DimensionError("restack: " + std::to_string(slices.size()) + " slices for " +
                         to_string(plane) + " plane of " + to_string(dims) +
                         ", expected " + std::to_string(g.count));
  }
  Volume v(dims, voxel, modality);
  auto& data = v.data();
  for (std::size_t k = 0; k < g.count; ++k) {
    const auto& s = slices[k].shape();
    const bool ok = (s.size() == 2 && s[0] == g.rows && s[1] == g.cols) ||
                    (s.size() == 3 && s[0] == 1 && s[1] == g.rows && s[2] == g.cols);
    if (!ok) {
      throw DimensionError("restack: slice " + std::to_string(k) + " has shape " +
                           shape_str(s) + ", expected [" + std::to_string(g.rows) + "," +
                           std::to_string(g.cols) + "]");
    }
    const float* src = slices[k].raw();
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) data[g.at(k, i, j)] = *src++;
    }
  }
  return v;
}

Volume flip_lr(const Volume& v) {
  const Dims& d = v.dims();
  Volume out(d, v.voxel_mm(), v.modality());
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) out.at(d.x - 1 - x, y, z) = v.at(x, y, z);
    }
  }
  return out;
}

void require_divisible_by_16(const Dims& d) {
  if (d.count() == 0 || d.x % 16 || d.y % 16 || d.z % 16) {
    throw ConfigError("dims " + to_string(d) + " must each be a positive multiple of 16");
  }
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;

  bool contains(double x, double y, double z) const {
    const double a = (x - center[0]) / semi[0];
    const double b = (y - center[1]) / semi[1];
    const double c = (z - center[2]) / semi[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

// True when every voxel of `lesion` lies inside `brain` and left of the midline.
bool lesion_fits(const Ellipsoid& lesion, const Ellipsoid& brain, const Dims& d) {
  if (lesion.center[0] + lesion.semi[0] >= static_cast<double>(d.x) / 2.0 - 0.5) {
    return false;
  }
  for (int ax = 0; ax < 3; ++ax) {
    if (lesion.center[ax] - lesion.semi[ax] < 0.0) return false;
  }
  if (lesion.center[1] + lesion.semi[1] > static_cast<double>(d.y - 1) ||
      lesion.center[2] + lesion.semi[2] > static_cast<double>(d.z - 1)) {
    return false;
  }
  const auto lo = [&](int ax) {
    return static_cast<std::size_t>(std::ceil(lesion.center[ax] - lesion.semi[ax]));
  };
  const auto hi = [&](int ax) {
    return static_cast<std::size_t>(std::floor(lesion.center[ax] + lesion.semi[ax]));
  };
  for (std::size_t z = lo(2); z <= hi(2); ++z) {
    for (std::size_t y = lo(1); y <= hi(1); ++y) {
      for (std::size_t x = lo(0); x <= hi(0); ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y),
                     fz = static_cast<double>(z);
        if (lesion.contains(fx, fy, fz) &&
            (!brain.contains(fx, fy, fz) || 2 * x >= d.x)) {
          return false;
        }
      }
    }
  }
  return true;
}

}  // namespace

Phantom gen_phantom(const PhantomSpec& spec) {
  require_divisible_by_16(spec.dims);
  if (spec.lesion_count_min > spec.lesion_count_max ||
      spec.lesion_semi_axis_min <= 0.0 ||
      spec.lesion_semi_axis_min > spec.lesion_semi_axis_max) {
    throw ConfigError("phantom lesion ranges are inconsistent");
  }
  const Dims& d = spec.dims;
  Rng rng(spec.seed);

  Ellipsoid brain{};
  const std::array<std::size_t, 3> ext{d.x, d.y, d.z};
  for (int ax = 0; ax < 3; ++ax) {
    brain.center[ax] = (static_cast<double>(ext[ax]) - 1.0) / 2.0;
    brain.semi[ax] = spec.brain_semi_axes[ax] > 0.0 ? spec.brain_semi_axes[ax]
                                                    : 0.4 * static_cast<double>(ext[ax]);
  }

  const std::size_t n_lesions =
      spec.lesion_count_min +
      rng.index(spec.lesion_count_max - spec.lesion_count_min + 1);
  std::vector<Ellipsoid> lesions;
  for (std::size_t l = 0; l < n_lesions; ++l) {
    double smax = spec.lesion_semi_axis_max;
    bool placed = false;
    for (int attempt = 0; attempt < 4000 && !placed; ++attempt) {
      if (attempt > 0 && attempt % 500 == 0) {
        smax = std::max(spec.lesion_semi_axis_min, smax * 0.8);
      }
      Ellipsoid e{};
      for (int ax = 0; ax < 3; ++ax) e.semi[ax] = rng.uniform(spec.lesion_semi_axis_min, smax);
      e.center[0] = rng.uniform(brain.center[0] - brain.semi[0], brain.center[0]);
      e.center[1] = rng.uniform(brain.center[1] - brain.semi[1], brain.center[1] + brain.semi[1]);
      e.center[2] = rng.uniform(brain.center[2] - brain.semi[2], brain.center[2] + brain.semi[2]);
      if (lesion_fits(e, brain, d)) {
        lesions.push_back(e);
        placed = true;
      }
    }
    if (!placed) throw ConfigError("could not place a lesion inside the left hemisphere");
  }

  Phantom ph{Volume(d, spec.voxel_mm, Modality::T1), Volume(d, spec.voxel_mm, Modality::FLAIR),
             Volume(d, spec.voxel_mm, Modality::MASK)};
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y),
                     fz = static_cast<double>(z);
        double t1 = 0.0, flair = 0.0, truth = 0.0;
        if (brain.contains(fx, fy, fz)) {
          t1 = spec.t1_base;
          flair = spec.flair_base;
          for (const auto& e : lesions) {
            if (e.contains(fx, fy, fz)) {
              truth = 1.0;
              break;
            }
          }
          if (truth > 0.0) {
            t1 += spec.t1_lesion_delta;
            flair += spec.flair_lesion_delta;
          }
        }
        // Noise is drawn for every voxel in a fixed order so the stream does
        // not depend on the anatomy.
        const double n1 = rng.normal() * spec.noise_sigma;
        const double n2 = rng.normal() * spec.noise_sigma;
        // Values are rounded to f32 so they survive an MVOL1 roundtrip.
        ph.t1.at(x, y, z) = static_cast<float>(t1 + n1);
        ph.flair.at(x, y, z) = static_cast<float>(flair + n2);
        ph.truth.at(x, y, z) = truth;
      }
    }
  }
  return ph;
}

}  // namespace seg25d
