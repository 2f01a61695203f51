#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace riunet {

// Confusion-matrix accumulator. Rows index ground truth, columns predictions.
struct SegMetrics {
  int num_classes = 0;
  std::vector<int64_t> confusion;  // num_classes * num_classes, row-major

  explicit SegMetrics(int classes);

  int64_t& at(int truth, int pred);
  int64_t at(int truth, int pred) const;

  // Adds one prediction/label pair per element where mask is nonzero.
  // Out-of-range labels or predictions are an error, not a skip.
  void accumulate(const std::vector<int32_t>& truth, const std::vector<int32_t>& pred,
                  const std::vector<uint8_t>& mask);
  void merge(const SegMetrics& other);

  int64_t total() const;
};

struct ClassIoU {
  double iou = 0;
  bool vacuous = false;  // no TP, FP or FN anywhere: reported as 1 by convention
};

std::vector<ClassIoU> iou_per_class(const SegMetrics& m);

// Mean IoU over foreground classes (class 0 excluded). Vacuous classes are
// left out of the mean; if every foreground class is vacuous the mean is 1.
double mean_iou_foreground(const SegMetrics& m);

double pixel_accuracy(const SegMetrics& m);

// Human-readable table with one row per class plus summary lines.
std::string format_metrics_table(const SegMetrics& m, const std::vector<std::string>& class_names);

// Stable machine-readable lines: "iou.<class> <value>" etc.
std::string format_metrics_report(const SegMetrics& m, const std::vector<std::string>& class_names);

}  // namespace riunet
