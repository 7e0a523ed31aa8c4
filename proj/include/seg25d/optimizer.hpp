#pragma once

#include <cstddef>
#include <span>

#include "seg25d/autodiff.hpp"
#include "seg25d/random.hpp"

namespace seg25d {

struct OptimizerConfig {
  double learning_rate0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Multiplicative learning-rate decay applied once per epoch.
  double lr_epoch_decay = 0.03;
  // When positive, the loss gradient is rescaled so its global L2 norm over
  // all parameters is at most this value. Zero disables clipping.
  double max_grad_norm = 5.0;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

// learning_rate0 * (1 - lr_epoch_decay)^epoch
double learning_rate(const OptimizerConfig& config, std::size_t epoch);

// One SGD step with Nesterov momentum and coupled L2 weight decay:
//   g = s * grad + wd * w;  v = mu * v + g;  w -= lr(epoch) * (g + mu * v)
// where s = min(1, max_grad_norm / |grad|) with clipping on, else 1.
// Gradients are zeroed afterwards. A NaN gradient anywhere raises
// NumericError before any parameter is touched.
template <class T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params,
                       const OptimizerConfig& config, std::size_t epoch);

// Uniform on [-sqrt(6/fan_in), sqrt(6/fan_in)].
template <class T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng);

}  // namespace seg25d
