#include <doctest.h>

#include <cmath>
#include <sstream>

#include "checks.hpp"
#include "synthetic.hpp"
#include "trajmode/checkpoint.hpp"
#include "trajmode/error.hpp"
#include "trajmode/models.hpp"

using namespace trajmode;

namespace {

std::vector<Trajectory> tiny_dataset(int per_class = 10, int points = 40) {
  testing::SyntheticOptions opt;
  opt.per_class = per_class;
  opt.points = points;
  opt.cadence_period = 4;
  return testing::synthetic_dataset(opt, 5);
}

ModelConfig tiny_train_config() {
  ModelConfig cfg = testing::tiny_config();
  cfg.train.epochs = 3;
  cfg.train.batch_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("tcn receptive field") {
  const TcnConfig tcn;
  CHECK(tcn.dilations() == std::vector<int>{1, 2, 4, 8});
  CHECK(tcn.receptive_field() == 61);
  TcnConfig wide;
  wide.seq_len = 128;
  CHECK(testing::traced_receptive_field(wide) == 61);
  TcnConfig small;
  small.kernel = 2;
  small.levels = 3;
  small.seq_len = 40;
  CHECK(small.receptive_field() == 15);
  CHECK(testing::traced_receptive_field(small) == 15);
}

TEST_CASE("tcn branch is causal") { CHECK(testing::tcn_is_causal(3, 20)); }

TEST_CASE("fusion weights") {
  const FusionState a = update_fusion(1.0, 0.0);
  CHECK(a.alpha == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
  CHECK(a.alpha == doctest::Approx(0.7311).epsilon(1e-4));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform();
    const FusionState eq = update_fusion(r, r);
    CHECK(std::abs(eq.alpha - 0.5) <= 1e-12);
    const FusionState f = update_fusion(rng.uniform(), rng.uniform());
    CHECK(f.alpha + f.beta == 1.0);
    CHECK(f.alpha > 0.0);
    CHECK(f.alpha < 1.0);
  }
  const FusionState pinned = fixed_fusion(1.0);
  CHECK(pinned.alpha == 1.0);
  CHECK(pinned.beta == 0.0);
  CHECK_THROWS_AS(fixed_fusion(1.5), Error);
}

TEST_CASE("fused argmax equals the weighted probability rule") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 4, k = 5;
    Tensor<double> c({n, k}), t({n, k});
    for (Index i = 0; i < c.size(); ++i) {
      c[i] = rng.normal() * 3;
      t[i] = rng.normal() * 3;
    }
    const FusionState f = update_fusion(rng.uniform(), rng.uniform());
    const auto got = fuse_argmax(c, t, f);
    const auto pc = ad::softmax(c), pt = ad::softmax(t);
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_v = -1;
      for (Index j = 0; j < k; ++j) {
        const double v = f.alpha * pc[i * k + j] + f.beta * pt[i * k + j];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(j);
        }
      }
      CHECK(got[static_cast<std::size_t>(i)] == best);
    }
    // Adding a per-row constant to both branches leaves the argmax alone.
    Tensor<double> c2 = c, t2 = t;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < k; ++j) {
        c2[i * k + j] += 7.0 * static_cast<double>(i);
        t2[i * k + j] -= 4.0 * static_cast<double>(i);
      }
    CHECK(fuse_argmax(c2, t2, f) == got);
  }
}

TEST_CASE("argmax ties go to the lower index") {
  Tensor<float> s({1, 3}, std::vector<float>{1.0f, 2.0f, 2.0f});
  CHECK(argmax_rows(s) == std::vector<int>{1});
}

TEST_CASE("forward shapes") {
  const ModelConfig cfg = testing::tiny_config();
  const auto model = Model<float>::create(cfg, 1);
  const auto imgs = ad::constant(Tensor<float>({2, 3, cfg.grid.cells_y, cfg.grid.cells_x}, 0.5f));
  CHECK(cnn_forward(model, imgs).shape() == Shape{2, 2});
  Rng rng(0);
  const auto seqs = ad::constant(Tensor<float>({2, 3, cfg.tcn.seq_len}, 0.5f));
  CHECK(tcn_forward(model, seqs, {3, 16}, rng, false).shape() == Shape{2, 2});
  CHECK_THROWS_AS(cnn_forward(model, ad::constant(Tensor<float>({2, 3, 4, 4}))), Error);
  CHECK_THROWS_AS(tcn_forward(model, ad::constant(Tensor<float>({2, 3, 7})), {3, 3}, rng, false), Error);
}

TEST_CASE("features: deltas, padding and standardization") {
  Trajectory t;
  t.points = {{0, 40.0, 116.0, 0.0}, {1, 40.5, 116.25, 10.0}, {2, 41.0, 116.0, 15.0}};
  TcnInput in = prepare_tcn_input(t, 5);
  CHECK(in.length == 3);
  CHECK(in.values(0, 0) == 0.0);
  CHECK(in.values(0, 1) == 0.25);
  CHECK(in.values(1, 2) == 0.5);
  CHECK(in.values(2, 2) == 5.0);
  CHECK(in.values.col(4).isZero());
  const SequenceStats st = fit_sequence_stats({in});
  standardize(in, st);
  CHECK(in.values.col(3).isZero());
  CHECK(in.values.row(2).head(3).mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(prepare_tcn_input(t, 2).length == 2);
}

TEST_CASE("stratified split") {
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i % 3 == 0 ? 0 : 1);
  const DataSplit a = stratified_split(labels, 0.8, 9);
  const DataSplit b = stratified_split(labels, 0.8, 9);
  CHECK(a.train == b.train);
  CHECK(a.train.size() + a.validation.size() == labels.size());
  CHECK(std::is_sorted(a.train.begin(), a.train.end()));
  int train0 = 0;
  for (auto i : a.train) train0 += labels[i] == 0;
  CHECK(train0 == 14);  // round(0.8 * 17)
}

TEST_CASE("training is reproducible and checkpoints round-trip bitwise") {
  const auto data = tiny_dataset();
  const ModelConfig cfg = tiny_train_config();
  const TrainResult a = train(data, cfg, 17);
  const TrainResult b = train(data, cfg, 17);
  CHECK(a.log.size() == 3);
  CHECK(checkpoint_bytes(a.model) == checkpoint_bytes(b.model));
  for (const auto& e : a.log) {
    CHECK(e.alpha + e.beta == 1.0);
    CHECK(std::isfinite(e.loss));
  }

  std::stringstream ss;
  save_checkpoint(ss, a.model);
  const Model<float> back = load_checkpoint(ss);
  CHECK(back.config == a.model.config);
  CHECK(back.norm == a.model.norm);
  CHECK(back.fusion == a.model.fusion);
  for (const auto& p : a.model.params.items()) CHECK(back.params.get(p.name).value() == p.var.value());
  CHECK(predict(back, data) == predict(a.model, data));
}

TEST_CASE("checkpoint corruption is detected") {
  const Model<float> m = Model<float>::create(testing::tiny_config(), 1);
  const std::string bytes = checkpoint_bytes(m);
  auto load = [](std::string s) {
    std::stringstream ss(s);
    return load_checkpoint(ss);
  };
  CHECK_NOTHROW(load(bytes));
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(load(bad_magic), Error);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(load(bad_version), Error);
  CHECK_THROWS_AS(load(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(load(bytes.substr(0, 6)), Error);
  try {
    load(bytes.substr(0, bytes.size() - 3));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Checkpoint);
  }
}

TEST_CASE("single-class data cannot be trained") {
  auto data = tiny_dataset(4);
  std::vector<Trajectory> walks;
  for (auto& t : data)
    if (t.mode->index == 0) walks.push_back(t);
  CHECK_THROWS_AS(train(walks, tiny_train_config(), 1), Error);
}

TEST_CASE("alpha pinned to 1 trains the CNN branch alone") {
  const auto data = tiny_dataset();
  ModelConfig a_cfg = tiny_train_config();
  ModelConfig b_cfg = a_cfg;
  b_cfg.tcn.hidden_units = 7;
  b_cfg.tcn.levels = 1;
  b_cfg.tcn.dropout = 0.3;
  TrainOptions pin;
  pin.fixed_alpha = 1.0;
  const TrainResult a = train(data, a_cfg, 23, pin);
  const TrainResult b = train(data, b_cfg, 23, pin);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].loss == b.log[e].loss);
    CHECK(a.log[e].loss == a.log[e].cnn_loss);
    CHECK(a.log[e].alpha == 1.0);
  }
  for (const auto& p : a.model.params.items())
    if (p.name.rfind("cnn.", 0) == 0) CHECK(b.model.params.get(p.name).value() == p.var.value());
}
