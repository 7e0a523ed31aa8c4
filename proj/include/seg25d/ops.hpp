#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "seg25d/autodiff.hpp"

namespace seg25d {

// 2D convolution, stride 1, "same" zero padding. Kernels are
// [C_out, C_in, k, k] with k = 3 (padding 1) or k = 1 (padding 0).
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias);

// 3D convolution, stride 1. Kernels are [C_out, C_in / groups, kd, kh, kw].
// Supported: 3x3x3 with padding 1, and 2x1x1 with padding 0.
template <class T>
Var<T> conv3d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias,
              std::size_t groups = 1);

// 2x2 average pooling with stride 2 over [C, H, W].
template <class T>
Var<T> avg_pool2(const Var<T>& input);

// 2x2 transposed convolution with stride 2. Kernels are [C_in, C_out, 2, 2].
template <class T>
Var<T> deconv2(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias);

template <class T>
Var<T> relu(const Var<T>& input);

template <class T>
Var<T> sigmoid(const Var<T>& input);

// Softmax across the leading axis, which must have extent 2.
template <class T>
Var<T> softmax_channels(const Var<T>& input);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

// scale * x + shift, elementwise.
template <class T>
Var<T> affine(const Var<T>& x, T scale, T shift);

// Stacks two [C, ...] tensors into [C, 2, ...].
template <class T>
Var<T> stack2(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

// x[c] for a tensor with a leading channel axis.
template <class T>
Var<T> select_channel(const Var<T>& x, std::size_t channel);

// sum_i w_i * x_i as a scalar.
template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

// Soft Dice 2*sum(p*r) / (sum(p^2) + sum(r^2)) pooled over every pair
// (probs[k], refs[k]). Equals 1 when both denominators vanish.
template <class T>
Var<T> dice_soft(std::span<const Var<T>> probs,
                 std::span<const Tensor<T>* const> refs);

template <class T>
Var<T> dice_soft(const Var<T>& probs, const Tensor<T>& ref) {
  const Tensor<T>* r = &ref;
  return dice_soft<T>(std::span<const Var<T>>(&probs, 1),
                      std::span<const Tensor<T>* const>(&r, 1));
}

}  // namespace seg25d
