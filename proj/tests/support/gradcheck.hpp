#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seg25d/autodiff.hpp"
#include "seg25d/random.hpp"

namespace seg25d::testing {

// Central finite differences against reverse-mode gradients, in double.
//
// Each checked coordinate contributes |a - n| / max(|a|, |n|, floor), where
// floor is 1% of the largest analytic gradient magnitude of its tensor, so
// entries that are zero up to cancellation noise are judged on the
// tensor's scale. The result is the maximum over checked coordinates.
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline constexpr double kFdStep = 1e-3;
inline constexpr double kFloorFraction = 1e-2;

// `build` must construct a fresh scalar graph from the current parameter
// values, binding each parameter with Var<double>::param. At most
// `max_coords` coordinates per parameter are checked, chosen by `rng`.
inline GradCheck grad_check(const std::vector<Parameter<double>*>& params,
                            const std::function<Var<double>()>& build, Rng& rng,
                            std::size_t max_coords = 1u << 30, double h = kFdStep) {
  for (auto* p : params) p->zero_grad();
  Var<double> root = build();
  root.backward();

  GradCheck out;
  for (auto* p : params) {
    const Tensor<double> analytic = p->gradient;
    double scale = 0.0;
    for (double g : analytic.data()) scale = std::max(scale, std::abs(g));
    const double floor = std::max(kFloorFraction * scale, 1e-300);

    std::vector<std::size_t> coords(p->value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = build().value().item();
      p->value[i] = saved - h;
      const double down = build().value().item();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  for (auto* p : params) p->zero_grad();
  return out;
}

// Tensor with entries uniform on [lo, hi).
inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Entries uniform with magnitude in [margin, 1), random sign. Keeps relu
// inputs away from the kink.
inline Tensor<double> random_away_from_zero(const Shape& shape, Rng& rng, double margin) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) {
    const double m = rng.uniform(margin, 1.0);
    v = rng.uniform01() < 0.5 ? -m : m;
  }
  return t;
}

}  // namespace seg25d::testing
