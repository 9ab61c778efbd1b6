#include "trajmode/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "trajmode/error.hpp"

namespace trajmode {

// ---------------------------------------------------------------------------
// Configuration

std::vector<int> TcnConfig::dilations() const {
  std::vector<int> d;
  int v = 1;
  for (int i = 0; i < levels; ++i) {
    d.push_back(v);
    v *= dilation_base;
  }
  return d;
}

int TcnConfig::receptive_field() const {
  int span = 0;
  for (int d : dilations()) span += 2 * (kernel - 1) * d;
  return span + 1;
}

void validate(const CnnConfig& cfg) {
  if (cfg.channels.empty()) throw Error(ErrorKind::Config, "cnn needs at least one block");
  for (int c : cfg.channels)
    if (c < 1) throw Error(ErrorKind::Config, "cnn channel counts must be positive");
}

void validate(const TcnConfig& cfg) {
  if (cfg.in_channels != 3) throw Error(ErrorKind::Config, "tcn in_channels must be 3 (dlon, dlat, dts)");
  if (cfg.hidden_units < 1 || cfg.kernel < 1 || cfg.levels < 1 || cfg.dilation_base < 1 || cfg.seq_len < 1)
    throw Error(ErrorKind::Config, "tcn hidden_units, kernel, levels, dilation_base and seq_len must be >= 1");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw Error(ErrorKind::Config, "tcn dropout must be in [0, 1)");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw Error(ErrorKind::Config, "learning rate must be positive");
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw Error(ErrorKind::Config, "batch_size and epochs must be >= 1");
  if (!(cfg.split > 0.0 && cfg.split <= 1.0)) throw Error(ErrorKind::Config, "split must be in (0, 1]");
}

void validate(const ModelConfig& cfg) {
  validate(cfg.grid);
  validate(cfg.cnn);
  validate(cfg.tcn);
  validate(cfg.stl);
  validate(cfg.train);
  if (!(cfg.inject_weight >= 0.0) || !std::isfinite(cfg.inject_weight))
    throw Error(ErrorKind::Config, "inject_weight must be finite and non-negative");
  if (cfg.classes() < 2) throw Error(ErrorKind::Config, "label map needs at least two classes");
}

// ---------------------------------------------------------------------------
// Fusion

FusionState update_fusion(double r1, double r2) {
  if (!(r1 >= 0.0 && r1 <= 1.0 && r2 >= 0.0 && r2 <= 1.0))
    throw Error(ErrorKind::Precondition, "branch accuracies must be in [0, 1]");
  const double e1 = std::exp(r1);
  const double e2 = std::exp(r2);
  FusionState f;
  f.r1 = r1;
  f.r2 = r2;
  f.alpha = e1 / (e1 + e2);
  f.beta = 1.0 - f.alpha;
  return f;
}

FusionState fixed_fusion(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Precondition, "alpha must be in [0, 1]");
  FusionState f;
  f.alpha = alpha;
  f.beta = 1.0 - alpha;
  return f;
}

// ---------------------------------------------------------------------------
// Features

TcnInput prepare_tcn_input(const Trajectory& traj, int seq_len) {
  if (traj.points.empty()) throw Error(ErrorKind::Precondition, "empty trajectory");
  if (seq_len < 1) throw Error(ErrorKind::Precondition, "seq_len must be >= 1");
  TcnInput in;
  in.length = static_cast<int>(std::min<std::size_t>(traj.points.size(), static_cast<std::size_t>(seq_len)));
  in.values = Eigen::MatrixXd::Zero(3, seq_len);
  for (int i = 1; i < in.length; ++i) {
    const GpsPoint& a = traj.points[static_cast<std::size_t>(i - 1)];
    const GpsPoint& b = traj.points[static_cast<std::size_t>(i)];
    in.values(0, i) = b.lon - a.lon;
    in.values(1, i) = b.lat - a.lat;
    in.values(2, i) = b.ts - a.ts;
  }
  return in;
}

SequenceStats fit_sequence_stats(const std::vector<TcnInput>& inputs) {
  SequenceStats stats;
  std::array<double, 3> sum{}, sum_sq{};
  double count = 0.0;
  for (const auto& in : inputs) {
    for (int t = 0; t < in.length; ++t) {
      for (int c = 0; c < 3; ++c) {
        sum[c] += in.values(c, t);
        sum_sq[c] += in.values(c, t) * in.values(c, t);
      }
    }
    count += in.length;
  }
  if (count == 0.0) return stats;
  for (int c = 0; c < 3; ++c) {
    stats.mean[c] = sum[c] / count;
    const double var = std::max(0.0, sum_sq[c] / count - stats.mean[c] * stats.mean[c]);
    const double sd = std::sqrt(var);
    stats.stddev[c] = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;
  }
  return stats;
}

void standardize(TcnInput& input, const SequenceStats& stats) {
  for (int t = 0; t < input.length; ++t)
    for (int c = 0; c < 3; ++c) input.values(c, t) = (input.values(c, t) - stats.mean[c]) / stats.stddev[c];
}

RawFeatures extract_features(const Trajectory& traj, const ModelConfig& cfg) {
  RawFeatures raw;
  raw.image = build_image(traj, cfg.grid);
  const Trajectory injected = inject_period(traj, cfg.stl, InjectionConfig{cfg.inject_weight});
  raw.sequence = prepare_tcn_input(injected, cfg.tcn.seq_len);
  return raw;
}

Normalization fit_normalization(const std::vector<RawFeatures>& features) {
  if (features.empty()) throw Error(ErrorKind::Data, "cannot fit normalization on no samples");
  std::vector<TrajectoryImage> images;
  std::vector<TcnInput> sequences;
  images.reserve(features.size());
  sequences.reserve(features.size());
  for (const auto& f : features) {
    images.push_back(f.image);
    sequences.push_back(f.sequence);
  }
  Normalization norm;
  norm.image = normalize_channels(images).stats;
  norm.sequence = fit_sequence_stats(sequences);
  return norm;
}

EncodedSample encode(const RawFeatures& raw, const Normalization& norm, int label) {
  EncodedSample s;
  s.label = label;
  const TrajectoryImage img = normalize_channels({raw.image}, norm.image).images.front();
  const GridConfig& g = img.grid();
  s.image.resize(static_cast<std::size_t>(kImageChannels * g.cells_y * g.cells_x));
  std::size_t i = 0;
  for (int c = 0; c < kImageChannels; ++c)
    for (int y = 0; y < g.cells_y; ++y)
      for (int x = 0; x < g.cells_x; ++x) s.image[i++] = static_cast<float>(img.at(x, y, c));

  TcnInput seq = raw.sequence;
  standardize(seq, norm.sequence);
  s.length = seq.length;
  s.sequence.resize(static_cast<std::size_t>(seq.values.size()));
  i = 0;
  for (Eigen::Index c = 0; c < seq.values.rows(); ++c)
    for (Eigen::Index t = 0; t < seq.values.cols(); ++t) s.sequence[i++] = static_cast<float>(seq.values(c, t));
  return s;
}

template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<EncodedSample>& samples, const std::vector<std::size_t>& indices,
                         const ModelConfig& cfg) {
  const auto n = static_cast<Index>(indices.size());
  const Index h = cfg.grid.cells_y, w = cfg.grid.cells_x, len = cfg.tcn.seq_len;
  const Index image_size = kImageChannels * h * w;
  const Index seq_size = 3 * len;
  Batch<Scalar> b;
  b.images = Tensor<Scalar>(Shape{n, kImageChannels, h, w});
  b.sequences = Tensor<Scalar>(Shape{n, 3, len});
  for (Index i = 0; i < n; ++i) {
    const EncodedSample& s = samples.at(indices[static_cast<std::size_t>(i)]);
    if (static_cast<Index>(s.image.size()) != image_size || static_cast<Index>(s.sequence.size()) != seq_size)
      throw Error(ErrorKind::Mismatch, "encoded sample does not match the model's grid / seq_len");
    std::copy(s.image.begin(), s.image.end(), b.images.data() + i * image_size);
    std::copy(s.sequence.begin(), s.sequence.end(), b.sequences.data() + i * seq_size);
    b.lengths.push_back(s.length);
    b.labels.push_back(s.label);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Network

namespace {

template <typename Scalar>
Tensor<Scalar> he_uniform(Shape shape, Index fan_in, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

std::string block_name(const char* branch, int i) { return std::string(branch) + ".block" + std::to_string(i); }

}  // namespace

template <typename Scalar>
Model<Scalar> Model<Scalar>::create(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Model m;
  m.config = config;
  const Index k = config.classes();

  Rng cnn_rng(derive_seed(seed, "cnn-init"));
  const auto& ch = config.cnn.channels;
  auto add_conv2d = [&](const std::string& name, Index out, Index in, Index ks) {
    m.params.add(name + ".weight", he_uniform<Scalar>(Shape{out, in, ks, ks}, in * ks * ks, cnn_rng));
    m.params.add(name + ".bias", Tensor<Scalar>(Shape{out}));
  };
  add_conv2d("cnn.stem", ch[0], kImageChannels, 3);
  for (int b = 0; b < config.cnn.blocks(); ++b) {
    const Index in = b == 0 ? ch[0] : ch[static_cast<std::size_t>(b - 1)];
    const Index out = ch[static_cast<std::size_t>(b)];
    const std::string name = block_name("cnn", b);
    add_conv2d(name + ".conv1", out, in, 3);
    add_conv2d(name + ".conv2", out, out, 3);
    if (in != out || b > 0) add_conv2d(name + ".proj", out, in, 1);
  }
  m.params.add("cnn.head.weight", he_uniform<Scalar>(Shape{ch.back(), k}, ch.back(), cnn_rng));
  m.params.add("cnn.head.bias", Tensor<Scalar>(Shape{k}));

  Rng tcn_rng(derive_seed(seed, "tcn-init"));
  const TcnConfig& tc = config.tcn;
  auto add_conv1d = [&](const std::string& name, Index out, Index in, Index ks) {
    m.params.add(name + ".weight", he_uniform<Scalar>(Shape{out, in, ks}, in * ks, tcn_rng));
    m.params.add(name + ".bias", Tensor<Scalar>(Shape{out}));
  };
  for (int i = 0; i < tc.levels; ++i) {
    const Index in = i == 0 ? tc.in_channels : tc.hidden_units;
    const std::string name = block_name("tcn", i);
    add_conv1d(name + ".conv1", tc.hidden_units, in, tc.kernel);
    add_conv1d(name + ".conv2", tc.hidden_units, tc.hidden_units, tc.kernel);
    if (in != tc.hidden_units) add_conv1d(name + ".downsample", tc.hidden_units, in, 1);
  }
  m.params.add("tcn.head.weight", he_uniform<Scalar>(Shape{tc.hidden_units, k}, tc.hidden_units, tcn_rng));
  m.params.add("tcn.head.bias", Tensor<Scalar>(Shape{k}));
  return m;
}

template <typename Scalar>
template <typename To>
Model<To> Model<Scalar>::cast() const {
  Model<To> out;
  out.config = config;
  out.norm = norm;
  out.fusion = fusion;
  for (const auto& p : params.items()) out.params.add(p.name, p.var.value().template cast<To>());
  return out;
}

template <typename Scalar>
ad::Var<Scalar> cnn_forward(const Model<Scalar>& model, const ad::Var<Scalar>& images) {
  const auto& cfg = model.config;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != kImageChannels || s[2] != cfg.grid.cells_y || s[3] != cfg.grid.cells_x)
    throw Error(ErrorKind::Shape, "cnn input " + to_string(s) + " does not match N x 3 x " +
                                      std::to_string(cfg.grid.cells_y) + " x " + std::to_string(cfg.grid.cells_x));
  const auto& p = model.params;
  auto conv = [&](const ad::Var<Scalar>& x, const std::string& name, int stride, int pad) {
    return ad::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), stride, pad);
  };

  ad::Var<Scalar> x = ad::relu(conv(images, "cnn.stem", 1, 1));
  for (int b = 0; b < cfg.cnn.blocks(); ++b) {
    const std::string name = block_name("cnn", b);
    const int stride = b == 0 ? 1 : 2;
    ad::Var<Scalar> y = ad::relu(conv(x, name + ".conv1", stride, 1));
    y = conv(y, name + ".conv2", 1, 1);
    const ad::Var<Scalar> shortcut = p.contains(name + ".proj.weight") ? conv(x, name + ".proj", stride, 0) : x;
    x = ad::relu(ad::add(y, shortcut));
  }
  return ad::dense(ad::global_avg_pool(x), p.get("cnn.head.weight"), p.get("cnn.head.bias"));
}

template <typename Scalar>
ad::Var<Scalar> tcn_forward(const Model<Scalar>& model, const ad::Var<Scalar>& sequences,
                            const std::vector<int>& lengths, Rng& rng, bool training) {
  const TcnConfig& tc = model.config.tcn;
  const Shape& s = sequences.shape();
  if (s.size() != 3 || s[1] != tc.in_channels || s[2] != tc.seq_len)
    throw Error(ErrorKind::Shape, "tcn input " + to_string(s) + " does not match N x " +
                                      std::to_string(tc.in_channels) + " x " + std::to_string(tc.seq_len));
  for (int len : lengths)
    if (len < 1) throw Error(ErrorKind::Precondition, "tcn sequence length must be >= 1");
  const auto& p = model.params;
  auto conv = [&](const ad::Var<Scalar>& x, const std::string& name, int dilation) {
    return ad::conv1d_dilated_causal(x, p.get(name + ".weight"), p.get(name + ".bias"), dilation);
  };

  ad::Var<Scalar> x = sequences;
  const auto dilations = tc.dilations();
  for (int i = 0; i < tc.levels; ++i) {
    const std::string name = block_name("tcn", i);
    const int d = dilations[static_cast<std::size_t>(i)];
    ad::Var<Scalar> h = ad::dropout(ad::relu(conv(x, name + ".conv1", d)), tc.dropout, rng, training);
    h = ad::dropout(ad::relu(conv(h, name + ".conv2", d)), tc.dropout, rng, training);
    const ad::Var<Scalar> res = p.contains(name + ".downsample.weight") ? conv(x, name + ".downsample", 1) : x;
    x = ad::relu(ad::add(h, res));
  }
  return ad::dense(ad::last_step(x, lengths), p.get("tcn.head.weight"), p.get("tcn.head.bias"));
}

template <typename Scalar>
CombinedLoss<Scalar> combined_loss(const ad::Var<Scalar>& cnn_logits, const ad::Var<Scalar>& tcn_logits,
                                   const std::vector<int>& labels, const FusionState& fusion) {
  if (cnn_logits.shape() != tcn_logits.shape())
    throw Error(ErrorKind::Shape, "branch logits " + to_string(cnn_logits.shape()) + " and " +
                                      to_string(tcn_logits.shape()) + " differ");
  auto lc = ad::softmax_cross_entropy(cnn_logits, labels).loss;
  auto lt = ad::softmax_cross_entropy(tcn_logits, labels).loss;
  auto total = ad::add(ad::scale(lc, static_cast<Scalar>(fusion.alpha)), ad::scale(lt, static_cast<Scalar>(fusion.beta)));
  return CombinedLoss<Scalar>{std::move(total), std::move(lc), std::move(lt)};
}

namespace {

// Softmax of one row in double.
template <typename Scalar>
void row_softmax(const Scalar* z, Index k, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(k));
  double m = static_cast<double>(z[0]);
  for (Index j = 1; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
  double total = 0.0;
  for (Index j = 0; j < k; ++j) total += (out[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(z[j]) - m));
  for (auto& v : out) v /= total;
}

}  // namespace

template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& scores) {
  if (scores.rank() != 2) throw Error(ErrorKind::Shape, "argmax_rows expects N x K");
  const Index n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Scalar* row = scores.data() + i * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

template <typename Scalar>
std::vector<int> fuse_argmax(const Tensor<Scalar>& cnn_logits, const Tensor<Scalar>& tcn_logits,
                             const FusionState& fusion) {
  if (cnn_logits.shape() != tcn_logits.shape() || cnn_logits.rank() != 2)
    throw Error(ErrorKind::Shape, "fuse_argmax: logits must both be N x K");
  const Index n = cnn_logits.dim(0), k = cnn_logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  std::vector<double> pc, pt;
  for (Index i = 0; i < n; ++i) {
    row_softmax(cnn_logits.data() + i * k, k, pc);
    row_softmax(tcn_logits.data() + i * k, k, pt);
    int best = 0;
    double best_score = -1.0;
    for (Index j = 0; j < k; ++j) {
      const double score = fusion.alpha * pc[static_cast<std::size_t>(j)] + fusion.beta * pt[static_cast<std::size_t>(j)];
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

namespace {

struct BranchLogits {
  Tensor<float> cnn;
  Tensor<float> tcn;
};

BranchLogits evaluate_logits(const Model<float>& model, const std::vector<EncodedSample>& samples,
                             const std::vector<std::size_t>& indices, std::size_t chunk) {
  const Index k = model.config.classes();
  const auto n = static_cast<Index>(indices.size());
  BranchLogits out{Tensor<float>(Shape{n, k}), Tensor<float>(Shape{n, k})};
  Rng unused(0);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t end = std::min(indices.size(), start + chunk);
    const std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                        indices.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch<float> batch = make_batch<float>(samples, part, model.config);
    const auto cl = cnn_forward(model, ad::constant(batch.images));
    const auto tl = tcn_forward(model, ad::constant(batch.sequences), batch.lengths, unused, false);
    std::copy(cl.value().values().begin(), cl.value().values().end(), out.cnn.data() + static_cast<Index>(start) * k);
    std::copy(tl.value().values().begin(), tl.value().values().end(), out.tcn.data() + static_cast<Index>(start) * k);
  }
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<EncodedSample>& samples,
                const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) correct += pred[i] == samples[indices[i]].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace

BranchPredictions predict_samples(const Model<float>& model, const std::vector<EncodedSample>& samples,
                                  const std::vector<std::size_t>& indices, std::size_t chunk) {
  const BranchLogits logits = evaluate_logits(model, samples, indices, chunk);
  return BranchPredictions{argmax_rows(logits.cnn), argmax_rows(logits.tcn),
                           fuse_argmax(logits.cnn, logits.tcn, model.fusion)};
}

std::vector<int> predict(const Model<float>& model, const std::vector<Trajectory>& trajectories) {
  std::vector<EncodedSample> samples;
  samples.reserve(trajectories.size());
  for (const auto& t : trajectories) samples.push_back(encode(extract_features(t, model.config), model.norm));
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return predict_samples(model, samples, idx).fused;
}

// ---------------------------------------------------------------------------
// Training

DataSplit stratified_split(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  Rng rng(seed);
  std::set<int> classes(labels.begin(), labels.end());
  DataSplit split;
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    rng.shuffle(members);
    const auto n = static_cast<long long>(members.size());
    const long long n_train = std::clamp<long long>(std::llround(fraction * static_cast<double>(n)), 1, n);
    split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
    split.validation.insert(split.validation.end(), members.begin() + n_train, members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

std::vector<int> dataset_labels(const std::vector<Trajectory>& dataset) {
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const auto& t : dataset) {
    if (!t.mode) throw Error(ErrorKind::Data, "trajectory '" + t.traj_id + "' has no mode label");
    labels.push_back(t.mode->index);
  }
  return labels;
}

TrainResult train(const std::vector<Trajectory>& dataset, const ModelConfig& config, std::uint64_t seed,
                  const TrainOptions& options) {
  validate(config);
  const std::vector<int> labels = dataset_labels(dataset);
  for (int y : labels)
    if (y < 0 || y >= config.classes()) throw Error(ErrorKind::Data, "label index outside the label map");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2)
    throw Error(ErrorKind::Data, "training needs at least two classes, dataset has fewer");

  TrainResult result;
  result.split = stratified_split(labels, config.train.split, derive_seed(seed, "split"));

  std::vector<RawFeatures> raw;
  raw.reserve(dataset.size());
  for (const auto& t : dataset) raw.push_back(extract_features(t, config));
  std::vector<RawFeatures> train_raw;
  for (std::size_t i : result.split.train) train_raw.push_back(raw[i]);
  const Normalization norm = fit_normalization(train_raw);
  train_raw.clear();

  std::vector<EncodedSample> samples;
  samples.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) samples.push_back(encode(raw[i], norm, labels[i]));
  raw.clear();

  Model<float> model = Model<float>::create(config, seed);
  model.norm = norm;
  model.fusion = options.fixed_alpha ? fixed_fusion(*options.fixed_alpha) : FusionState{};
  AdamState<float> adam = make_adam_state(model.params, AdamOptions{config.train.lr});
  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  Rng dropout_rng(derive_seed(seed, "dropout"));

  const std::vector<std::size_t>& eval_idx =
      result.split.validation.empty() ? result.split.train : result.split.validation;
  std::vector<std::size_t> order = result.split.train;
  const auto batch_size = static_cast<std::size_t>(config.train.batch_size);

  for (int epoch = 1; epoch <= config.train.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, cnn_sum = 0.0, tcn_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch<float> batch = make_batch<float>(samples, idx, config);
      const auto cl = cnn_forward(model, ad::constant(batch.images));
      const auto tl = tcn_forward(model, ad::constant(batch.sequences), batch.lengths, dropout_rng, true);
      const auto loss = combined_loss(cl, tl, batch.labels, model.fusion);
      ad::backward(loss.total);
      adam_step(model.params, adam);
      const auto count = static_cast<double>(idx.size());
      loss_sum += static_cast<double>(loss.total.value().item()) * count;
      cnn_sum += static_cast<double>(loss.cnn.value().item()) * count;
      tcn_sum += static_cast<double>(loss.tcn.value().item()) * count;
    }

    const BranchLogits logits = evaluate_logits(model, samples, eval_idx, 64);
    const double r1 = accuracy(argmax_rows(logits.cnn), samples, eval_idx);
    const double r2 = accuracy(argmax_rows(logits.tcn), samples, eval_idx);
    if (options.fixed_alpha) {
      model.fusion.r1 = r1;
      model.fusion.r2 = r2;
    } else {
      model.fusion = update_fusion(r1, r2);
    }

    EpochLog entry;
    entry.epoch = epoch;
    const auto n_train = static_cast<double>(order.size());
    entry.loss = loss_sum / n_train;
    entry.cnn_loss = cnn_sum / n_train;
    entry.tcn_loss = tcn_sum / n_train;
    entry.r1 = r1;
    entry.r2 = r2;
    entry.alpha = model.fusion.alpha;
    entry.beta = model.fusion.beta;
    entry.val_acc = accuracy(fuse_argmax(logits.cnn, logits.tcn, model.fusion), samples, eval_idx);
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

template Batch<float> make_batch(const std::vector<EncodedSample>&, const std::vector<std::size_t>&, const ModelConfig&);
template Batch<double> make_batch(const std::vector<EncodedSample>&, const std::vector<std::size_t>&,
                                  const ModelConfig&);
template struct Model<float>;
template struct Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template ad::Var<float> cnn_forward(const Model<float>&, const ad::Var<float>&);
template ad::Var<double> cnn_forward(const Model<double>&, const ad::Var<double>&);
template ad::Var<float> tcn_forward(const Model<float>&, const ad::Var<float>&, const std::vector<int>&, Rng&, bool);
template ad::Var<double> tcn_forward(const Model<double>&, const ad::Var<double>&, const std::vector<int>&, Rng&,
                                     bool);
template CombinedLoss<float> combined_loss(const ad::Var<float>&, const ad::Var<float>&, const std::vector<int>&,
                                           const FusionState&);
template CombinedLoss<double> combined_loss(const ad::Var<double>&, const ad::Var<double>&, const std::vector<int>&,
                                            const FusionState&);
template std::vector<int> fuse_argmax(const Tensor<float>&, const Tensor<float>&, const FusionState&);
template std::vector<int> fuse_argmax(const Tensor<double>&, const Tensor<double>&, const FusionState&);
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace trajmode
