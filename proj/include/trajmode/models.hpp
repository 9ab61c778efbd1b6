#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "trajmode/adam.hpp"
#include "trajmode/autodiff.hpp"
#include "trajmode/mapping.hpp"
#include "trajmode/stl.hpp"
#include "trajmode/trajectory.hpp"

namespace trajmode {

// ---------------------------------------------------------------------------
// Configuration

struct CnnConfig {
  std::vector<int> channels{16, 32, 64};  // one residual block per entry

  int blocks() const { return static_cast<int>(channels.size()); }
  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

struct TcnConfig {
  int in_channels = 3;
  int hidden_units = 25;
  int kernel = 3;
  int dilation_base = 2;
  int levels = 4;  // residual blocks, two causal convs each
  double dropout = 0.05;
  int seq_len = 300;

  /// dilation_base^i for i in [0, levels).
  std::vector<int> dilations() const;
  /// Input positions that can reach one output: 1 + 2 (k - 1) sum(dilations).
  int receptive_field() const;
  friend bool operator==(const TcnConfig&, const TcnConfig&) = default;
};

struct TrainConfig {
  double lr = 0.002;
  int batch_size = 64;
  int epochs = 20;
  double split = 0.8;  // training fraction per class

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything needed to turn trajectories into model inputs and to rebuild the
/// network. Serialized verbatim into checkpoints.
struct ModelConfig {
  GridConfig grid;
  CnnConfig cnn;
  TcnConfig tcn;
  StlConfig stl;
  double inject_weight = 1.0;
  TrainConfig train;
  LabelMap labels = LabelMap::geolife_default();

  int classes() const { return labels.num_classes(); }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const CnnConfig& cfg);
void validate(const TcnConfig& cfg);
void validate(const TrainConfig& cfg);
void validate(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Fusion

struct FusionState {
  double r1 = 0.0;  // CNN-only accuracy
  double r2 = 0.0;  // TCN-only accuracy
  double alpha = 0.5;
  double beta = 0.5;

  friend bool operator==(const FusionState&, const FusionState&) = default;
};

/// alpha = e^r1 / (e^r1 + e^r2), beta = 1 - alpha.
FusionState update_fusion(double r1, double r2);

/// Fusion with a forced alpha (used to pin training to one branch).
FusionState fixed_fusion(double alpha);

// ---------------------------------------------------------------------------
// Features

struct SequenceStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  friend bool operator==(const SequenceStats&, const SequenceStats&) = default;
};

struct Normalization {
  ChannelStats image;
  SequenceStats sequence;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Per-point channels [dlon, dlat, dts] (first point 0), truncated or
/// right-padded with zeros to seq_len.
struct TcnInput {
  Eigen::MatrixXd values;  // 3 x seq_len
  int length = 0;          // min(N, seq_len)
};

TcnInput prepare_tcn_input(const Trajectory& traj, int seq_len);

/// Mean / std per channel over the valid positions of all inputs (std 0 -> 1).
SequenceStats fit_sequence_stats(const std::vector<TcnInput>& inputs);

/// Standardizes valid positions; padding stays zero.
void standardize(TcnInput& input, const SequenceStats& stats);

struct RawFeatures {
  TrajectoryImage image;
  TcnInput sequence;
};

/// Image from the raw trajectory, sequence from the period-injected one.
RawFeatures extract_features(const Trajectory& traj, const ModelConfig& cfg);

Normalization fit_normalization(const std::vector<RawFeatures>& features);

/// Model-ready sample: image as C x H x W (H = cells_y, W = cells_x) and a
/// standardized 3 x seq_len sequence.
struct EncodedSample {
  std::vector<float> image;
  std::vector<float> sequence;
  int length = 0;
  int label = -1;
};

EncodedSample encode(const RawFeatures& raw, const Normalization& norm, int label = -1);

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;     // N x 3 x H x W
  Tensor<Scalar> sequences;  // N x 3 x L
  std::vector<int> lengths;
  std::vector<int> labels;
};

template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<EncodedSample>& samples, const std::vector<std::size_t>& indices,
                         const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
struct Model {
  ModelConfig config;
  Normalization norm;
  FusionState fusion;
  ad::ParameterSet<Scalar> params;

  /// Fresh parameters: He-uniform weights from seeded streams, zero biases.
  /// CNN and TCN parameters come from separate streams.
  static Model create(const ModelConfig& config, std::uint64_t seed);

  template <typename To>
  Model<To> cast() const;
};

/// Stem conv, residual blocks (stride 2 after the first), global average pool,
/// dense head. Returns N x K logits.
template <typename Scalar>
ad::Var<Scalar> cnn_forward(const Model<Scalar>& model, const ad::Var<Scalar>& images);

/// Residual blocks of dilated causal convolutions; the hidden state at
/// lengths[n] - 1 feeds a dense head. Returns N x K logits.
template <typename Scalar>
ad::Var<Scalar> tcn_forward(const Model<Scalar>& model, const ad::Var<Scalar>& sequences,
                            const std::vector<int>& lengths, Rng& rng, bool training);

template <typename Scalar>
struct CombinedLoss {
  ad::Var<Scalar> total;  // alpha * cnn + beta * tcn
  ad::Var<Scalar> cnn;
  ad::Var<Scalar> tcn;
};

/// alpha * CE(cnn) + beta * CE(tcn); the weights are constants.
template <typename Scalar>
CombinedLoss<Scalar> combined_loss(const ad::Var<Scalar>& cnn_logits, const ad::Var<Scalar>& tcn_logits,
                                   const std::vector<int>& labels, const FusionState& fusion);

/// argmax of alpha * softmax(cnn) + beta * softmax(tcn); ties go to the lower index.
template <typename Scalar>
std::vector<int> fuse_argmax(const Tensor<Scalar>& cnn_logits, const Tensor<Scalar>& tcn_logits,
                             const FusionState& fusion);

/// Row-wise argmax with ties to the lower index.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& scores);

struct BranchPredictions {
  std::vector<int> cnn;
  std::vector<int> tcn;
  std::vector<int> fused;
};

/// Evaluation-mode predictions for encoded samples, processed in fixed-size chunks.
BranchPredictions predict_samples(const Model<float>& model, const std::vector<EncodedSample>& samples,
                                  const std::vector<std::size_t>& indices, std::size_t chunk = 64);

/// Fused labels for raw trajectories using the model's stored normalization.
std::vector<int> predict(const Model<float>& model, const std::vector<Trajectory>& trajectories);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;      // mean combined loss over training batches
  double cnn_loss = 0.0;  // mean CNN cross-entropy
  double tcn_loss = 0.0;  // mean TCN cross-entropy
  double r1 = 0.0;        // validation accuracy, CNN branch
  double r2 = 0.0;        // validation accuracy, TCN branch
  double alpha = 0.5;     // weights for the next epoch
  double beta = 0.5;
  double val_acc = 0.0;   // fused validation accuracy after the update
};

struct TrainOptions {
  std::optional<double> fixed_alpha;                 // pin fusion weights
  std::function<void(const EpochLog&)> on_epoch;  // progress callback
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Per-class seeded shuffle, first round(fraction * n) (at least one) to train.
/// Both index lists are returned sorted.
DataSplit stratified_split(const std::vector<int>& labels, double fraction, std::uint64_t seed);

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  DataSplit split;
};

/// Labels of a labelled dataset; throws Data if any trajectory is unlabelled.
std::vector<int> dataset_labels(const std::vector<Trajectory>& dataset);

/// Stratified split, normalization fit on the training fold, Adam on the
/// fused loss, fusion weights refreshed from validation accuracies each epoch.
TrainResult train(const std::vector<Trajectory>& dataset, const ModelConfig& config, std::uint64_t seed,
                  const TrainOptions& options = {});

}  // namespace trajmode
