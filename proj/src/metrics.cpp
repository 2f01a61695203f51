#include "riunet/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace riunet {

SegMetrics::SegMetrics(int classes) : num_classes(classes) {
  if (classes < 2) throw std::invalid_argument("SegMetrics: need at least 2 classes");
  confusion.assign(static_cast<size_t>(classes) * classes, 0);
}

int64_t& SegMetrics::at(int truth, int pred) {
  return confusion[static_cast<size_t>(truth) * num_classes + pred];
}

int64_t SegMetrics::at(int truth, int pred) const {
  return confusion[static_cast<size_t>(truth) * num_classes + pred];
}

void SegMetrics::accumulate(const std::vector<int32_t>& truth, const std::vector<int32_t>& pred,
                            const std::vector<uint8_t>& mask) {
  if (truth.size() != pred.size() || truth.size() != mask.size())
    throw std::invalid_argument("SegMetrics::accumulate: length mismatch");
  for (size_t i = 0; i < truth.size(); ++i) {
    if (!mask[i]) continue;
    const int32_t t = truth[i];
    const int32_t p = pred[i];
    if (t < 0 || t >= num_classes) throw std::out_of_range("SegMetrics: label out of range");
    if (p < 0 || p >= num_classes) throw std::out_of_range("SegMetrics: prediction out of range");
    ++at(t, p);
  }
}

void SegMetrics::merge(const SegMetrics& other) {
  if (other.num_classes != num_classes) throw std::invalid_argument("SegMetrics::merge: class count mismatch");
  for (size_t i = 0; i < confusion.size(); ++i) confusion[i] += other.confusion[i];
}

int64_t SegMetrics::total() const {
  int64_t n = 0;
  for (int64_t v : confusion) n += v;
  return n;
}

std::vector<ClassIoU> iou_per_class(const SegMetrics& m) {
  std::vector<ClassIoU> out(m.num_classes);
  for (int k = 0; k < m.num_classes; ++k) {
    const int64_t tp = m.at(k, k);
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < m.num_classes; ++j) {
      if (j == k) continue;
      fp += m.at(j, k);
      fn += m.at(k, j);
    }
    const int64_t denom = tp + fp + fn;
    if (denom == 0) {
      out[k] = {1.0, true};
    } else {
      out[k] = {static_cast<double>(tp) / static_cast<double>(denom), false};
    }
  }
  return out;
}

double mean_iou_foreground(const SegMetrics& m) {
  const auto per = iou_per_class(m);
  double sum = 0;
  int n = 0;
  for (int k = 1; k < m.num_classes; ++k) {
    if (per[k].vacuous) continue;
    sum += per[k].iou;
    ++n;
  }
  return n == 0 ? 1.0 : sum / n;
}

double pixel_accuracy(const SegMetrics& m) {
  const int64_t n = m.total();
  if (n == 0) return 1.0;
  int64_t correct = 0;
  for (int k = 0; k < m.num_classes; ++k) correct += m.at(k, k);
  return static_cast<double>(correct) / static_cast<double>(n);
}

static std::string class_name(const std::vector<std::string>& names, int k) {
  if (k < static_cast<int>(names.size())) return names[k];
  return "class" + std::to_string(k);
}

std::string format_metrics_table(const SegMetrics& m, const std::vector<std::string>& class_names) {
  const auto per = iou_per_class(m);
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %10s %12s %12s\n", "class", "iou", "gt_pixels", "pred_pixels");
  out += line;
  for (int k = 0; k < m.num_classes; ++k) {
    int64_t gt = 0, pr = 0;
    for (int j = 0; j < m.num_classes; ++j) {
      gt += m.at(k, j);
      pr += m.at(j, k);
    }
    std::snprintf(line, sizeof line, "%-14s %10.4f %12lld %12lld%s\n", class_name(class_names, k).c_str(),
                  per[k].iou, static_cast<long long>(gt), static_cast<long long>(pr),
                  per[k].vacuous ? "  (absent)" : "");
    out += line;
  }
  std::snprintf(line, sizeof line, "%-14s %10.4f\n", "fg_mean_iou", mean_iou_foreground(m));
  out += line;
  std::snprintf(line, sizeof line, "%-14s %10.4f\n", "accuracy", pixel_accuracy(m));
  out += line;
  return out;
}

std::string format_metrics_report(const SegMetrics& m, const std::vector<std::string>& class_names) {
  const auto per = iou_per_class(m);
  std::string out;
  char line[160];
  for (int k = 0; k < m.num_classes; ++k) {
    std::snprintf(line, sizeof line, "iou.%s %.6f\n", class_name(class_names, k).c_str(), per[k].iou);
    out += line;
    std::snprintf(line, sizeof line, "vacuous.%s %d\n", class_name(class_names, k).c_str(),
                  per[k].vacuous ? 1 : 0);
    out += line;
  }
  std::snprintf(line, sizeof line, "fg_mean_iou %.6f\n", mean_iou_foreground(m));
  out += line;
  std::snprintf(line, sizeof line, "accuracy %.6f\n", pixel_accuracy(m));
  out += line;
  std::snprintf(line, sizeof line, "valid_pixels %lld\n", static_cast<long long>(m.total()));
  out += line;
  return out;
}

}  // namespace riunet
