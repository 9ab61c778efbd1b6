#pragma once

#include <cstdint>
#include <vector>

#include "trajmode/autodiff.hpp"

namespace trajmode {

struct AdamOptions {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<Scalar>> m;  // first moments, one per parameter
  std::vector<Tensor<Scalar>> v;  // second moments
  std::uint64_t step_count = 0;
};

/// Zero moments shaped like `params`.
template <typename Scalar>
AdamState<Scalar> make_adam_state(const ad::ParameterSet<Scalar>& params, AdamOptions options = {});

/// One bias-corrected Adam update of every parameter from its current grad.
template <typename Scalar>
void adam_step(ad::ParameterSet<Scalar>& params, AdamState<Scalar>& state);

}  // namespace trajmode
