#include "trajmode/adam.hpp"

#include <cmath>

#include "trajmode/error.hpp"

namespace trajmode {

template <typename Scalar>
AdamState<Scalar> make_adam_state(const ad::ParameterSet<Scalar>& params, AdamOptions options) {
  AdamState<Scalar> state;
  state.options = options;
  for (const auto& p : params.items()) {
    state.m.emplace_back(p.var.shape());
    state.v.emplace_back(p.var.shape());
  }
  return state;
}

template <typename Scalar>
void adam_step(ad::ParameterSet<Scalar>& params, AdamState<Scalar>& state) {
  auto& items = params.items();
  if (items.size() != state.m.size() || items.size() != state.v.size())
    throw Error(ErrorKind::Shape, "adam state does not match parameter set");
  ++state.step_count;
  const auto& o = state.options;
  const auto t = static_cast<double>(state.step_count);
  const auto b1 = static_cast<Scalar>(o.beta1);
  const auto b2 = static_cast<Scalar>(o.beta2);
  const auto correction1 = static_cast<Scalar>(1.0 - std::pow(o.beta1, t));
  const auto correction2 = static_cast<Scalar>(1.0 - std::pow(o.beta2, t));
  const auto lr = static_cast<Scalar>(o.lr);
  const auto eps = static_cast<Scalar>(o.eps);

  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor<Scalar>& value = items[i].var.mutable_value();
    const Tensor<Scalar>& grad = items[i].var.grad();
    if (grad.shape() != value.shape() || state.m[i].shape() != value.shape())
      throw Error(ErrorKind::Shape, "adam: shape mismatch for parameter '" + items[i].name + "'");
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = grad.array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    value.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

template AdamState<float> make_adam_state(const ad::ParameterSet<float>&, AdamOptions);
template AdamState<double> make_adam_state(const ad::ParameterSet<double>&, AdamOptions);
template void adam_step(ad::ParameterSet<float>&, AdamState<float>&);
template void adam_step(ad::ParameterSet<double>&, AdamState<double>&);

}  // namespace trajmode
