#include "seg25d/optimizer.hpp"

#include <cmath>
#include <string>

namespace seg25d {

void OptimizerConfig::validate() const {
  if (!(learning_rate0 > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(lr_epoch_decay >= 0.0 && lr_epoch_decay < 1.0)) {
    throw ConfigError("learning-rate epoch decay must be in [0,1)");
  }
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be non-negative");
}

double learning_rate(const OptimizerConfig& config, std::size_t epoch) {
  return config.learning_rate0 *
         std::pow(1.0 - config.lr_epoch_decay, static_cast<double>(epoch));
}

template <class T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params,
                       const OptimizerConfig& config, std::size_t epoch) {
  // Sequential double accumulation keeps the norm, and so the step,
  // independent of vectorization.
  double norm2 = 0.0;
  for (const auto* p : params) {
    for (const T g : p->gradient.data()) {
      if (std::isnan(g)) throw NumericError("NaN gradient in parameter " + p->name);
      norm2 += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  T scale{1};
  const double norm = std::sqrt(norm2);
  if (config.max_grad_norm > 0.0 && norm > config.max_grad_norm) {
    scale = static_cast<T>(config.max_grad_norm / norm);
  }
  const T lr = static_cast<T>(learning_rate(config, epoch));
  const T mu = static_cast<T>(config.momentum);
  const T wd = static_cast<T>(config.weight_decay);
  for (auto* p : params) {
    auto w = p->value.data();
    auto v = p->velocity.data();
    auto grad = p->gradient.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T g = scale * grad[i] + wd * w[i];
      v[i] = mu * v[i] + g;
      w[i] -= lr * (g + mu * v[i]);
      grad[i] = T{0};
    }
  }
}

template <class T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template void sgd_nesterov_step(std::span<Parameter<float>* const>,
                                const OptimizerConfig&, std::size_t);
template void sgd_nesterov_step(std::span<Parameter<double>* const>,
                                const OptimizerConfig&, std::size_t);
template void init_uniform(Tensor<float>&, std::size_t, Rng&);
template void init_uniform(Tensor<double>&, std::size_t, Rng&);

}  // namespace seg25d
