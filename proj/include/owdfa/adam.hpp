#pragma once

#include <span>
#include <vector>

#include "owdfa/tensor.hpp"

namespace owdfa {

/// Moment accumulators for Adam with bias correction. `m` and `v` are sized
/// on the first step and must keep matching the parameter list afterwards.
template <typename Scalar>
struct AdamState {
  long step = 0;
  std::vector<Vec<Scalar>> m;
  std::vector<Vec<Scalar>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 2e-4;
};

/// One update of every parameter from its gradient slot. A parameter with no
/// gradient is treated as having a zero gradient.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, AdamState<Scalar>& state);

}  // namespace owdfa
