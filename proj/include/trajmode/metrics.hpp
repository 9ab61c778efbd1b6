#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace trajmode {

/// K×K counts; rows are true classes, columns predicted classes.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred, int num_classes);

struct BinaryCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct BinaryMetrics {
  double acc = 0, precision = 0, recall = 0, f1 = 0;
};

/// One-vs-rest counts for class c.
BinaryCounts binary_counts(const ConfusionMatrix& cm, int c);
BinaryMetrics binary_metrics(const BinaryCounts& counts);
BinaryMetrics binary_metrics(const ConfusionMatrix& cm, int c);

struct MetricsReport {
  double acc = 0;
  std::vector<BinaryMetrics> per_class;
  std::vector<std::int64_t> support;  // true count per class
  double macro_f1 = 0;
  ConfusionMatrix counts;
};

/// acc = trace/total; macro F1 over classes present in the true labels.
MetricsReport macro_metrics(const ConfusionMatrix& cm);

/// {"acc", "per_class": {name: {...}}, "macro_f1", "counts": {...}}
nlohmann::json to_json(const MetricsReport& report, const std::vector<std::string>& class_names);

}  // namespace trajmode
