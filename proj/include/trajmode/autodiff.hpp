#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "trajmode/tensor.hpp"

namespace trajmode::ad {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads.
  std::function<void(Node&)> backward;
};

/// Handle to a node of the computation graph. Cheap to copy; copies alias.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() const { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  Node<Scalar>& node() const { return *node_; }
  const std::shared_ptr<Node<Scalar>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Non-differentiable input.
template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value);

/// Differentiable leaf (a trainable tensor).
template <typename Scalar>
Var<Scalar> leaf(Tensor<Scalar> value);

template <typename Scalar>
struct Parameter {
  std::string name;
  Var<Scalar> var;
};

/// Named trainable tensors, unique names, kept in insertion order.
template <typename Scalar>
class ParameterSet {
 public:
  Var<Scalar> add(std::string name, Tensor<Scalar> init);
  const Var<Scalar>& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter<Scalar>>& items() { return items_; }
  const std::vector<Parameter<Scalar>>& items() const { return items_; }

  /// Names sorted lexicographically (checkpoint order).
  std::vector<std::string> sorted_names() const;
  Index total_size() const;

 private:
  std::vector<Parameter<Scalar>> items_;
};

/// Enables NaN/Inf checks after every op. On by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

// Elementwise.
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x);

/// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
/// Identity when not training or p == 0.
template <typename Scalar> Var<Scalar> dropout(const Var<Scalar>& x, double p, Rng& rng, bool training);

/// Sum of all elements, shape [1].
template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);

/// input N x C x H x W, weights O x C x k x k, bias O -> N x O x H' x W'.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weights, const Var<Scalar>& bias, int stride, int pad);

/// input N x C x L, weights O x C x k, bias O -> N x O x L with
/// out[t] = sum_i w[i] * in[t - dilation * i] (zero before the start).
template <typename Scalar>
Var<Scalar> conv1d_dilated_causal(const Var<Scalar>& input, const Var<Scalar>& weights, const Var<Scalar>& bias,
                                  int dilation);

/// input N x F, weights F x O, bias O -> N x O.
template <typename Scalar>
Var<Scalar> dense(const Var<Scalar>& input, const Var<Scalar>& weights, const Var<Scalar>& bias);

/// N x C x H x W -> N x C.
template <typename Scalar> Var<Scalar> global_avg_pool(const Var<Scalar>& x);

/// N x C x L -> N x C taking position lengths[n] - 1 of each row.
template <typename Scalar> Var<Scalar> last_step(const Var<Scalar>& x, const std::vector<int>& lengths);

template <typename Scalar>
struct CrossEntropy {
  Var<Scalar> loss;             // mean negative log-likelihood, shape [1]
  Tensor<Scalar> probabilities;  // N x K softmax
};

/// Numerically stable softmax + mean NLL; the reduction accumulates in double.
template <typename Scalar>
CrossEntropy<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels);

/// Row-wise softmax of an N x K tensor (no graph).
template <typename Scalar> Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

/// Reverse-mode sweep from a scalar. Every gradient in the graph is reset
/// first, so repeated calls give identical results.
template <typename Scalar> void backward(const Var<Scalar>& loss);

}  // namespace trajmode::ad
