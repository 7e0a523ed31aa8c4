#pragma once

#include <span>

#include "seg25d/ops.hpp"

namespace seg25d {

// 1 - D(p, r), with D pooled over every (prediction, reference) pair so a
// batch of slices is scored as one region.
template <class T>
Var<T> loss_path(std::span<const Var<T>> probs, std::span<const Tensor<T>* const> refs) {
  return affine(dice_soft<T>(probs, refs), T{-1}, T{1});
}

template <class T>
Var<T> loss_path(const Var<T>& probs, const Tensor<T>& ref) {
  return affine(dice_soft<T>(probs, ref), T{-1}, T{1});
}

// 2 - (D(p, r) + D(q, 1 - r)) for the lesion channel p and its complement q.
template <class T>
Var<T> loss_post(const Var<T>& p, const Var<T>& q, const Tensor<T>& ref) {
  Tensor<T> complement(ref.shape());
  const auto r = ref.data();
  auto c = complement.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = T{1} - r[i];
  return affine(add(dice_soft<T>(p, ref), dice_soft<T>(q, complement)), T{-1}, T{2});
}

// loss_post on a [2, ...] softmax output against a reference shaped like
// one channel.
template <class T>
Var<T> loss_post(const Var<T>& probs, const Tensor<T>& ref) {
  const Var<T> p = select_channel(probs, 0);
  const Var<T> q = select_channel(probs, 1);
  return loss_post(p, q, ref.reshaped(p.shape()));
}

}  // namespace seg25d
