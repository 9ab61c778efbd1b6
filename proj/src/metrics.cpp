#include "trajmode/metrics.hpp"

#include "trajmode/error.hpp"

namespace trajmode {

using nlohmann::json;

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred, int num_classes) {
  if (truth.size() != pred.size())
    throw Error(ErrorKind::Precondition, "label length mismatch: " + std::to_string(truth.size()) + " true vs " +
                                             std::to_string(pred.size()) + " predicted");
  if (num_classes < 1) throw Error(ErrorKind::Precondition, "confusion matrix needs at least one class");
  ConfusionMatrix cm = ConfusionMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes)
      throw Error(ErrorKind::Precondition, "label out of range at sample " + std::to_string(i));
    ++cm(truth[i], pred[i]);
  }
  return cm;
}

BinaryCounts binary_counts(const ConfusionMatrix& cm, int c) {
  BinaryCounts b;
  b.tp = cm(c, c);
  b.fp = cm.col(c).sum() - b.tp;
  b.fn = cm.row(c).sum() - b.tp;
  b.tn = cm.sum() - b.tp - b.fp - b.fn;
  return b;
}

BinaryMetrics binary_metrics(const BinaryCounts& b) {
  BinaryMetrics m;
  const std::int64_t total = b.tp + b.fp + b.fn + b.tn;
  if (total > 0) m.acc = static_cast<double>(b.tp + b.tn) / static_cast<double>(total);
  if (b.tp + b.fp > 0) m.precision = static_cast<double>(b.tp) / static_cast<double>(b.tp + b.fp);
  if (b.tp + b.fn > 0) m.recall = static_cast<double>(b.tp) / static_cast<double>(b.tp + b.fn);
  if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

BinaryMetrics binary_metrics(const ConfusionMatrix& cm, int c) { return binary_metrics(binary_counts(cm, c)); }

MetricsReport macro_metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.counts = cm;
  const std::int64_t total = cm.sum();
  if (total > 0) r.acc = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double f1_sum = 0;
  int present = 0;
  for (int c = 0; c < cm.rows(); ++c) {
    r.per_class.push_back(binary_metrics(cm, c));
    r.support.push_back(cm.row(c).sum());
    if (r.support.back() > 0) {
      f1_sum += r.per_class.back().f1;
      ++present;
    }
  }
  if (present > 0) r.macro_f1 = f1_sum / present;
  return r;
}

json to_json(const MetricsReport& report, const std::vector<std::string>& class_names) {
  if (class_names.size() != report.per_class.size())
    throw Error(ErrorKind::Internal, "class name count does not match report");
  json per_class = json::object();
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& m = report.per_class[c];
    per_class[class_names[c]] = {{"precision", m.precision},
                                 {"recall", m.recall},
                                 {"f1", m.f1},
                                 {"acc", m.acc},
                                 {"support", report.support[c]}};
  }
  json matrix = json::array();
  for (Eigen::Index t = 0; t < report.counts.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index p = 0; p < report.counts.cols(); ++p) row.push_back(report.counts(t, p));
    matrix.push_back(std::move(row));
  }
  return json{{"acc", report.acc},
              {"per_class", std::move(per_class)},
              {"macro_f1", report.macro_f1},
              {"counts", {{"total", report.counts.sum()}, {"confusion", std::move(matrix)}}}};
}

}  // namespace trajmode
