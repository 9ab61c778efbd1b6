#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "trajmode/adam.hpp"
#include "trajmode/autodiff.hpp"
#include "trajmode/error.hpp"

using namespace trajmode;

namespace {

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.normal());
  return t;
}

// Six nested loops over n, o, oh, ow, c and the kernel window.
template <typename S>
Tensor<S> naive_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const Index OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  Tensor<S> y({N, O, OH, OW});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index oh = 0; oh < OH; ++oh)
        for (Index ow = 0; ow < OW; ++ow) {
          double acc = b[o];
          for (Index c = 0; c < C; ++c)
            for (Index ki = 0; ki < K; ++ki)
              for (Index kj = 0; kj < K; ++kj) {
                const Index ih = oh * stride - pad + ki, iw = ow * stride - pad + kj;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += static_cast<double>(w[((o * C + c) * K + ki) * K + kj]) * x[((n * C + c) * H + ih) * W + iw];
              }
          y[((n * O + o) * OH + oh) * OW + ow] = static_cast<S>(acc);
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches nested loops") {
  Rng rng(1);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}, std::pair{2, 0}}) {
    const auto x = random_tensor<double>({2, 3, 7, 6}, rng);
    const auto w = random_tensor<double>({5, 3, 3, 3}, rng);
    const auto b = random_tensor<double>({5}, rng);
    const auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), stride, pad).value();
    const auto ref = naive_conv2d(x, w, b, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  SUBCASE("float") {
    const auto x = random_tensor<float>({1, 2, 5, 5}, rng);
    const auto w = random_tensor<float>({3, 2, 3, 3}, rng);
    const auto b = random_tensor<float>({3}, rng);
    const auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 1, 1).value();
    const auto ref = naive_conv2d(x, w, b, 1, 1);
    for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Rng rng(2);
  const auto x = ad::constant(random_tensor<float>({1, 2, 5, 5}, rng));
  const auto w = ad::constant(random_tensor<float>({3, 4, 3, 3}, rng));
  const auto b = ad::constant(random_tensor<float>({3}, rng));
  CHECK_THROWS_AS(ad::conv2d(x, w, b, 1, 1), Error);
}

TEST_CASE("dilated causal conv: impulse response") {
  Tensor<double> x({1, 1, 20});
  x[5] = 1.0;
  Tensor<double> w({1, 1, 3}, std::vector<double>{2.0, 3.0, 5.0});
  const auto y = ad::conv1d_dilated_causal(ad::constant(x), ad::constant(w), ad::constant(Tensor<double>({1})), 4).value();
  for (Index t = 0; t < 20; ++t) {
    const double expect = t == 5 ? 2.0 : t == 9 ? 3.0 : t == 13 ? 5.0 : 0.0;
    CHECK(y[t] == expect);
  }
}

TEST_CASE("dilated causal conv never reads the future") {
  Rng rng(4);
  const auto w = ad::constant(random_tensor<float>({4, 3, 3}, rng));
  const auto b = ad::constant(random_tensor<float>({4}, rng));
  for (int t0 = 0; t0 < 30; t0 += 7) {
    auto a = random_tensor<float>({2, 3, 30}, rng);
    auto c = a;
    for (Index n = 0; n < 2; ++n)
      for (Index ch = 0; ch < 3; ++ch)
        for (Index t = t0 + 1; t < 30; ++t) c[(n * 3 + ch) * 30 + t] += 5.0f;
    const auto ya = ad::conv1d_dilated_causal(ad::constant(a), w, b, 2).value();
    const auto yc = ad::conv1d_dilated_causal(ad::constant(c), w, b, 2).value();
    for (Index n = 0; n < 2; ++n)
      for (Index o = 0; o < 4; ++o)
        for (Index t = 0; t <= t0; ++t) CHECK(ya[(n * 4 + o) * 30 + t] == yc[(n * 4 + o) * 30 + t]);
  }
}

TEST_CASE("dense matches a naive matmul") {
  Rng rng(5);
  const auto x = random_tensor<double>({4, 6}, rng);
  const auto w = random_tensor<double>({6, 3}, rng);
  const auto b = random_tensor<double>({3}, rng);
  const auto y = ad::dense(ad::constant(x), ad::constant(w), ad::constant(b)).value();
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j) {
      double acc = b[j];
      for (Index k = 0; k < 6; ++k) acc += x[i * 6 + k] * w[k * 3 + j];
      CHECK(y[i * 3 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("softmax cross entropy") {
  Tensor<double> z({2, 3}, std::vector<double>{1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0});
  const auto ce = ad::softmax_cross_entropy(ad::constant(z), {2, 0});
  const double row0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(ce.loss.value().item() == doctest::Approx(row0 / 2.0).epsilon(1e-12));
  CHECK(ce.probabilities[3] == doctest::Approx(1.0));
  CHECK_THROWS_AS(ad::softmax_cross_entropy(ad::constant(z), {3, 0}), Error);
  CHECK_THROWS_AS(ad::softmax_cross_entropy(ad::constant(z), {0}), Error);
}

TEST_CASE("dropout") {
  Rng rng(6);
  const auto x = ad::constant(Tensor<float>({1000}, 1.0f));
  CHECK(ad::dropout(x, 0.5, rng, false).value() == x.value());
  const auto y = ad::dropout(x, 0.25, rng, true).value();
  int zeros = 0;
  for (float v : y.values()) {
    CHECK((v == 0.0f || v == doctest::Approx(1.0f / 0.75f)));
    zeros += v == 0.0f;
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
  CHECK_THROWS_AS(ad::dropout(x, 1.0, rng, true), Error);
}

TEST_CASE("backward overwrites gradients and requires a scalar") {
  Rng rng(7);
  auto a = ad::leaf(random_tensor<double>({3}, rng));
  const auto loss = ad::sum(ad::mul(a, a));
  ad::backward(loss);
  const auto g1 = a.grad();
  ad::backward(loss);
  CHECK(a.grad() == g1);
  for (Index i = 0; i < 3; ++i) CHECK(g1[i] == doctest::Approx(2 * a.value()[i]));
  CHECK_THROWS_AS(ad::backward(ad::mul(a, a)), Error);
}

TEST_CASE("a value feeding two consumers accumulates both paths") {
  auto a = ad::leaf(Tensor<double>({1}, 3.0));
  const auto loss = ad::add(ad::mul(a, a), ad::scale(a, 4.0));
  ad::backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(10.0));
}

TEST_CASE("finite checks flag NaN") {
  const bool saved = ad::finite_checks();
  ad::set_finite_checks(true);
  auto a = ad::leaf(Tensor<double>({1}, std::nan("")));
  CHECK_THROWS_AS(ad::scale(a, 2.0), Error);
  ad::set_finite_checks(saved);
}

TEST_CASE("adam first step matches the closed form") {
  ad::ParameterSet<double> params;
  auto p = params.add("p", Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
  ad::backward(ad::sum(ad::mul(p, ad::constant(Tensor<double>({2}, std::vector<double>{0.5, -3.0})))));
  AdamOptions o;
  auto state = make_adam_state(params, o);
  adam_step(params, state);
  // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
  for (int i = 0; i < 2; ++i) {
    const double g = i == 0 ? 0.5 : -3.0;
    const double start = i == 0 ? 1.0 : -2.0;
    CHECK(p.value()[i] == doctest::Approx(start - o.lr * g / (std::abs(g) + o.eps)).epsilon(1e-7));
  }
  CHECK(state.step_count == 1);
}

TEST_CASE("parameter set") {
  ad::ParameterSet<float> ps;
  ps.add("b", Tensor<float>({2}));
  ps.add("a", Tensor<float>({3}));
  CHECK(ps.sorted_names() == std::vector<std::string>{"a", "b"});
  CHECK(ps.total_size() == 5);
  CHECK_THROWS_AS(ps.add("a", Tensor<float>({1})), Error);
  CHECK_THROWS_AS(ps.get("zzz"), Error);
}

TEST_CASE("gradient suite") {
  for (const auto& c : testing::gradient_suite(42)) {
    INFO(c.name);
    CHECK(c.result.checked > 0);
    CHECK(c.result.max_rel_error < 1e-3);
  }
}
