#include "trajmode/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "trajmode/error.hpp"

namespace trajmode::ad {

namespace {

std::atomic<bool> g_finite_checks{
#ifdef NDEBUG
    false
#else
    true
#endif
};

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
using RowMatrix = typename Tensor<S>::RowMatrix;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

void require_shape(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::Shape, message);
}

template <typename S>
Var<S> make_node(const char* op, Tensor<S> value, std::vector<NodePtr<S>> inputs, std::function<void(Node<S>&)> fn) {
  if (finite_checks() && !value.all_finite())
    throw Error(ErrorKind::Internal, std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node<S>>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in->requires_grad;
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Var<S>(std::move(node));
}

// Patches of one image: rows (c, ki, kj), columns (oh, ow).
template <typename S>
void im2col_2d(const S* x, Index channels, Index height, Index width, int k, int stride, int pad, Index out_h,
               Index out_w, RowMatrix<S>& cols) {
  for (Index c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        S* row = cols.data() + ((c * k + ki) * k + kj) * out_h * out_w;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + ki;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + kj;
            row[oh * out_w + ow] =
                (ih >= 0 && ih < height && iw >= 0 && iw < width) ? x[(c * height + ih) * width + iw] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_2d(const RowMatrix<S>& cols, Index channels, Index height, Index width, int k, int stride, int pad,
               Index out_h, Index out_w, S* dx) {
  for (Index c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const S* row = cols.data() + ((c * k + ki) * k + kj) * out_h * out_w;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= width) continue;
            dx[(c * height + ih) * width + iw] += row[oh * out_w + ow];
          }
        }
      }
    }
  }
}

// Causal taps of one sequence: rows (c, i), columns t; entry in[c, t - dilation * i].
template <typename S>
void im2col_causal(const S* x, Index channels, Index length, int k, int dilation, RowMatrix<S>& cols) {
  for (Index c = 0; c < channels; ++c) {
    const S* in = x + c * length;
    for (int i = 0; i < k; ++i) {
      S* row = cols.data() + (c * k + i) * length;
      const Index lag = static_cast<Index>(dilation) * i;
      for (Index t = 0; t < length; ++t) row[t] = t >= lag ? in[t - lag] : S(0);
    }
  }
}

template <typename S>
void col2im_causal(const RowMatrix<S>& cols, Index channels, Index length, int k, int dilation, S* dx) {
  for (Index c = 0; c < channels; ++c) {
    S* out = dx + c * length;
    for (int i = 0; i < k; ++i) {
      const S* row = cols.data() + (c * k + i) * length;
      const Index lag = static_cast<Index>(dilation) * i;
      for (Index t = lag; t < length; ++t) out[t - lag] += row[t];
    }
  }
}

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

template <typename S>
Var<S> constant(Tensor<S> value) {
  auto node = std::make_shared<Node<S>>();
  node->value = std::move(value);
  return Var<S>(std::move(node));
}

template <typename S>
Var<S> leaf(Tensor<S> value) {
  auto node = std::make_shared<Node<S>>();
  node->grad = Tensor<S>(value.shape());
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename S>
Var<S> ParameterSet<S>::add(std::string name, Tensor<S> init) {
  if (contains(name)) throw Error(ErrorKind::Internal, "duplicate parameter name '" + name + "'");
  items_.push_back(Parameter<S>{std::move(name), leaf(std::move(init))});
  return items_.back().var;
}

template <typename S>
const Var<S>& ParameterSet<S>::get(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.var;
  throw Error(ErrorKind::Checkpoint, "missing parameter '" + std::string(name) + "'");
}

template <typename S>
bool ParameterSet<S>::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const Parameter<S>& p) { return p.name == name; });
}

template <typename S>
std::vector<std::string> ParameterSet<S>::sorted_names() const {
  std::vector<std::string> names;
  for (const auto& p : items_) names.push_back(p.name);
  std::sort(names.begin(), names.end());
  return names;
}

template <typename S>
Index ParameterSet<S>::total_size() const {
  Index n = 0;
  for (const auto& p : items_) n += p.var.value().size();
  return n;
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_shape(a.shape() == b.shape(), "add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  Tensor<S> out = a.value();
  out.array() += b.value().array();
  return make_node<S>("add", std::move(out), {a.ptr(), b.ptr()}, [](Node<S>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad.array() += self.grad.array();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_shape(a.shape() == b.shape(), "mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  Tensor<S> out = a.value();
  out.array() *= b.value().array();
  return make_node<S>("mul", std::move(out), {a.ptr(), b.ptr()}, [](Node<S>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) x.grad.array() += self.grad.array() * y.value.array();
    if (y.requires_grad) y.grad.array() += self.grad.array() * x.value.array();
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out = a.value();
  out.array() *= factor;
  return make_node<S>("scale", std::move(out), {a.ptr()}, [factor](Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad.array() * factor;
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  Tensor<S> out = x.value();
  out.array() = out.array().max(S(0));
  return make_node<S>("relu", std::move(out), {x.ptr()}, [](Node<S>& self) {
    auto& in = *self.inputs[0];
    in.grad.array() += (in.value.array() > S(0)).select(self.grad.array(), S(0));
  });
}

template <typename S>
Var<S> dropout(const Var<S>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorKind::Precondition, "dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Tensor<S> mask(x.shape());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? S(0) : keep_scale;
  Tensor<S> out = x.value();
  out.array() *= mask.array();
  return make_node<S>("dropout", std::move(out), {x.ptr()}, [mask = std::move(mask)](Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad.array() * mask.array();
  });
}

template <typename S>
Var<S> sum(const Var<S>& x) {
  double total = 0.0;
  for (S v : x.value().values()) total += static_cast<double>(v);
  return make_node<S>("sum", Tensor<S>::scalar(static_cast<S>(total)), {x.ptr()}, [](Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Convolutions and dense

template <typename S>
Var<S> conv2d(const Var<S>& input, const Var<S>& weights, const Var<S>& bias, int stride, int pad) {
  require_shape(input.value().rank() == 4, "conv2d: input must be N x C x H x W, got " + to_string(input.shape()));
  require_shape(weights.value().rank() == 4, "conv2d: weights must be O x C x k x k, got " + to_string(weights.shape()));
  const Index n = input.value().dim(0), c = input.value().dim(1), h = input.value().dim(2), w = input.value().dim(3);
  const Index o = weights.value().dim(0);
  const int k = static_cast<int>(weights.value().dim(2));
  require_shape(weights.value().dim(1) == c && weights.value().dim(3) == k,
                "conv2d: weights " + to_string(weights.shape()) + " incompatible with input " + to_string(input.shape()));
  require_shape(bias.value().rank() == 1 && bias.value().dim(0) == o,
                "conv2d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(o) + " filters");
  if (stride < 1 || pad < 0) throw Error(ErrorKind::Precondition, "conv2d: stride must be >= 1 and pad >= 0");
  require_shape(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel larger than padded input");

  const Index out_h = (h + 2 * pad - k) / stride + 1;
  const Index out_w = (w + 2 * pad - k) / stride + 1;
  const Index patch = c * k * k;
  const Index spatial = out_h * out_w;

  Tensor<S> out(Shape{n, o, out_h, out_w});
  const auto w_mat = weights.value().matrix(o, patch);
  const Eigen::Map<const Vec<S>> b_vec(bias.value().data(), o);
  RowMatrix<S> cols(patch, spatial);
  for (Index i = 0; i < n; ++i) {
    im2col_2d(input.value().data() + i * c * h * w, c, h, w, k, stride, pad, out_h, out_w, cols);
    Eigen::Map<RowMatrix<S>> y(out.data() + i * o * spatial, o, spatial);
    y.noalias() = w_mat * cols;
    y.colwise() += b_vec;
  }

  return make_node<S>(
      "conv2d", std::move(out), {input.ptr(), weights.ptr(), bias.ptr()},
      [=](Node<S>& self) {
        auto& x = *self.inputs[0];
        auto& wt = *self.inputs[1];
        auto& b = *self.inputs[2];
        const auto w_mat = wt.value.matrix(o, patch);
        RowMatrix<S> cols(patch, spatial);
        RowMatrix<S> dcols;
        for (Index i = 0; i < n; ++i) {
          const Eigen::Map<const RowMatrix<S>> g(self.grad.data() + i * o * spatial, o, spatial);
          if (wt.requires_grad) {
            im2col_2d(x.value.data() + i * c * h * w, c, h, w, k, stride, pad, out_h, out_w, cols);
            wt.grad.matrix(o, patch).noalias() += g * cols.transpose();
          }
          if (b.requires_grad) Eigen::Map<Vec<S>>(b.grad.data(), o) += g.rowwise().sum();
          if (x.requires_grad) {
            dcols.noalias() = w_mat.transpose() * g;
            col2im_2d(dcols, c, h, w, k, stride, pad, out_h, out_w, x.grad.data() + i * c * h * w);
          }
        }
      });
}

template <typename S>
Var<S> conv1d_dilated_causal(const Var<S>& input, const Var<S>& weights, const Var<S>& bias, int dilation) {
  require_shape(input.value().rank() == 3, "conv1d: input must be N x C x L, got " + to_string(input.shape()));
  require_shape(weights.value().rank() == 3, "conv1d: weights must be O x C x k, got " + to_string(weights.shape()));
  const Index n = input.value().dim(0), c = input.value().dim(1), len = input.value().dim(2);
  const Index o = weights.value().dim(0);
  const int k = static_cast<int>(weights.value().dim(2));
  require_shape(weights.value().dim(1) == c,
                "conv1d: weights " + to_string(weights.shape()) + " incompatible with input " + to_string(input.shape()));
  require_shape(bias.value().rank() == 1 && bias.value().dim(0) == o,
                "conv1d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(o) + " filters");
  if (k < 1 || dilation < 1) throw Error(ErrorKind::Precondition, "conv1d: kernel and dilation must be >= 1");

  const Index taps = c * k;
  Tensor<S> out(Shape{n, o, len});
  const auto w_mat = weights.value().matrix(o, taps);
  const Eigen::Map<const Vec<S>> b_vec(bias.value().data(), o);
  RowMatrix<S> cols(taps, len);
  for (Index i = 0; i < n; ++i) {
    im2col_causal(input.value().data() + i * c * len, c, len, k, dilation, cols);
    Eigen::Map<RowMatrix<S>> y(out.data() + i * o * len, o, len);
    y.noalias() = w_mat * cols;
    y.colwise() += b_vec;
  }

  return make_node<S>("conv1d", std::move(out), {input.ptr(), weights.ptr(), bias.ptr()}, [=](Node<S>& self) {
    auto& x = *self.inputs[0];
    auto& wt = *self.inputs[1];
    auto& b = *self.inputs[2];
    const auto w_mat = wt.value.matrix(o, taps);
    RowMatrix<S> cols(taps, len);
    RowMatrix<S> dcols;
    for (Index i = 0; i < n; ++i) {
      const Eigen::Map<const RowMatrix<S>> g(self.grad.data() + i * o * len, o, len);
      if (wt.requires_grad) {
        im2col_causal(x.value.data() + i * c * len, c, len, k, dilation, cols);
        wt.grad.matrix(o, taps).noalias() += g * cols.transpose();
      }
      if (b.requires_grad) Eigen::Map<Vec<S>>(b.grad.data(), o) += g.rowwise().sum();
      if (x.requires_grad) {
        dcols.noalias() = w_mat.transpose() * g;
        col2im_causal(dcols, c, len, k, dilation, x.grad.data() + i * c * len);
      }
    }
  });
}

template <typename S>
Var<S> dense(const Var<S>& input, const Var<S>& weights, const Var<S>& bias) {
  require_shape(input.value().rank() == 2 && weights.value().rank() == 2 && bias.value().rank() == 1,
                "dense: expected N x F input, F x O weights, O bias");
  const Index n = input.value().dim(0), f = input.value().dim(1), o = weights.value().dim(1);
  require_shape(weights.value().dim(0) == f && bias.value().dim(0) == o,
                "dense: input " + to_string(input.shape()) + ", weights " + to_string(weights.shape()) + ", bias " +
                    to_string(bias.shape()));
  Tensor<S> out(Shape{n, o});
  auto y = out.matrix(n, o);
  y.noalias() = input.value().matrix(n, f) * weights.value().matrix(f, o);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data(), o);

  return make_node<S>("dense", std::move(out), {input.ptr(), weights.ptr(), bias.ptr()}, [=](Node<S>& self) {
    auto& x = *self.inputs[0];
    auto& wt = *self.inputs[1];
    auto& b = *self.inputs[2];
    const auto g = std::as_const(self.grad).matrix(n, o);
    if (x.requires_grad) x.grad.matrix(n, f).noalias() += g * wt.value.matrix(f, o).transpose();
    if (wt.requires_grad) wt.grad.matrix(f, o).noalias() += x.value.matrix(n, f).transpose() * g;
    if (b.requires_grad) Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.grad.data(), o) += g.colwise().sum();
  });
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  require_shape(x.value().rank() == 4, "global_avg_pool: expected N x C x H x W, got " + to_string(x.shape()));
  const Index n = x.value().dim(0), c = x.value().dim(1), hw = x.value().dim(2) * x.value().dim(3);
  Tensor<S> out(Shape{n, c});
  out.matrix(n * c, 1) = x.value().matrix(n * c, hw).rowwise().mean();
  return make_node<S>("global_avg_pool", std::move(out), {x.ptr()}, [=](Node<S>& self) {
    const S inv = S(1) / static_cast<S>(hw);
    auto dx = self.inputs[0]->grad.matrix(n * c, hw);
    const auto g = std::as_const(self.grad).matrix(n * c, 1);
    dx.colwise() += g.col(0) * inv;
  });
}

template <typename S>
Var<S> last_step(const Var<S>& x, const std::vector<int>& lengths) {
  require_shape(x.value().rank() == 3, "last_step: expected N x C x L, got " + to_string(x.shape()));
  const Index n = x.value().dim(0), c = x.value().dim(1), len = x.value().dim(2);
  require_shape(static_cast<Index>(lengths.size()) == n, "last_step: one length per sequence required");
  for (int l : lengths)
    if (l < 1 || l > len) throw Error(ErrorKind::Precondition, "sequence length must be in [1, L]");
  Tensor<S> out(Shape{n, c});
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) out[i * c + ch] = x.value()[(i * c + ch) * len + lengths[i] - 1];
  return make_node<S>("last_step", std::move(out), {x.ptr()}, [=](Node<S>& self) {
    auto& dx = self.inputs[0]->grad;
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch) dx[(i * c + ch) * len + lengths[i] - 1] += self.grad[i * c + ch];
  });
}

// ---------------------------------------------------------------------------
// Loss

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  require_shape(logits.rank() == 2, "softmax: expected N x K, got " + to_string(logits.shape()));
  const Index n = logits.dim(0), k = logits.dim(1);
  Tensor<S> probs(logits.shape());
  for (Index i = 0; i < n; ++i) {
    const S* z = logits.data() + i * k;
    S* p = probs.data() + i * k;
    const S m = *std::max_element(z, z + k);
    double total = 0.0;
    for (Index j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j] - m));
    for (Index j = 0; j < k; ++j) p[j] = static_cast<S>(std::exp(static_cast<double>(z[j] - m)) / total);
  }
  return probs;
}

template <typename S>
CrossEntropy<S> softmax_cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  require_shape(logits.value().rank() == 2, "softmax_cross_entropy: expected N x K, got " + to_string(logits.shape()));
  const Index n = logits.value().dim(0), k = logits.value().dim(1);
  require_shape(static_cast<Index>(labels.size()) == n && n > 0, "softmax_cross_entropy: one label per row required");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw Error(ErrorKind::Precondition, "label " + std::to_string(y) + " out of range for " + std::to_string(k) +
                                               " classes");

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const S* z = logits.value().data() + i * k;
    const double m = static_cast<double>(*std::max_element(z, z + k));
    double sum_exp = 0.0;
    for (Index j = 0; j < k; ++j) sum_exp += std::exp(static_cast<double>(z[j]) - m);
    total += m + std::log(sum_exp) - static_cast<double>(z[labels[static_cast<std::size_t>(i)]]);
  }
  Tensor<S> probs = softmax(logits.value());
  auto loss = make_node<S>("softmax_cross_entropy", Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n))),
                           {logits.ptr()}, [=](Node<S>& self) {
                             auto& dz = self.inputs[0]->grad;
                             const S g = self.grad[0] / static_cast<S>(n);
                             for (Index i = 0; i < n; ++i) {
                               for (Index j = 0; j < k; ++j) {
                                 const S onehot = labels[static_cast<std::size_t>(i)] == j ? S(1) : S(0);
                                 dz[i * k + j] += (probs[i * k + j] - onehot) * g;
                               }
                             }
                           });
  return CrossEntropy<S>{std::move(loss), std::move(probs)};
}

// ---------------------------------------------------------------------------
// Reverse sweep

template <typename S>
void backward(const Var<S>& loss) {
  if (loss.value().size() != 1)
    throw Error(ErrorKind::Shape, "backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Post-order DFS: inputs precede their consumers.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<S>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<S>* node : order) {
    if (node->grad.shape() == node->value.shape()) {
      node->grad.fill(S(0));
    } else {
      node->grad = Tensor<S>(node->value.shape());
    }
  }
  loss.node().grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------

#define TRAJMODE_INSTANTIATE(S)                                                                   \
  template Var<S> constant(Tensor<S>);                                                            \
  template Var<S> leaf(Tensor<S>);                                                                \
  template class ParameterSet<S>;                                                                 \
  template Var<S> add(const Var<S>&, const Var<S>&);                                              \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                              \
  template Var<S> scale(const Var<S>&, S);                                                        \
  template Var<S> relu(const Var<S>&);                                                            \
  template Var<S> dropout(const Var<S>&, double, Rng&, bool);                                     \
  template Var<S> sum(const Var<S>&);                                                             \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);                  \
  template Var<S> conv1d_dilated_causal(const Var<S>&, const Var<S>&, const Var<S>&, int);        \
  template Var<S> dense(const Var<S>&, const Var<S>&, const Var<S>&);                             \
  template Var<S> global_avg_pool(const Var<S>&);                                                 \
  template Var<S> last_step(const Var<S>&, const std::vector<int>&);                              \
  template Tensor<S> softmax(const Tensor<S>&);                                                   \
  template CrossEntropy<S> softmax_cross_entropy(const Var<S>&, const std::vector<int>&);         \
  template void backward(const Var<S>&);

TRAJMODE_INSTANTIATE(float)
TRAJMODE_INSTANTIATE(double)

#undef TRAJMODE_INSTANTIATE

}  // namespace trajmode::ad
