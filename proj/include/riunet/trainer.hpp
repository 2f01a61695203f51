#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "riunet/io.hpp"
#include "riunet/loss.hpp"
#include "riunet/metrics.hpp"
#include "riunet/unet.hpp"

namespace riunet {

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 8;
  int epochs = 10;
  uint64_t seed = 0;
  int checkpoint_interval = 0;  // epochs between interval checkpoints; 0 = final only
  bool deterministic = true;    // reserved switch; the implementation is deterministic throughout
  std::string out_dir = ".";

  void validate() const {
    detail::check(lr > 0, "TrainConfig: lr must be positive");
    detail::check(batch_size > 0, "TrainConfig: batch_size must be positive");
    detail::check(epochs >= 0, "TrainConfig: epochs must be non-negative");
    detail::check(checkpoint_interval >= 0, "TrainConfig: checkpoint_interval must be non-negative");
  }
};

struct TrainReport {
  std::vector<double> epoch_mean_loss;  // entry per epoch run in this call
  int64_t global_step = 0;
  std::string final_checkpoint;
};

namespace detail {

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Scalar>
Batch<Scalar> load_batch(const DatasetManifest& manifest, const std::vector<int>& indices,
                         const ChannelStats& stats) {
  std::vector<RangeImage> images;
  std::vector<std::string> ids;
  images.reserve(indices.size());
  for (int idx : indices) {
    images.push_back(read_range_image(manifest.sample_path(idx)));
    ids.push_back(manifest.ids[size_t(idx)]);
  }
  std::vector<const RangeImage*> ptrs;
  for (const RangeImage& img : images) ptrs.push_back(&img);
  return assemble_batch<Scalar>(ptrs, stats, std::move(ids));
}

template <class Scalar>
std::string describe_logits(const Tensor<Scalar>& logits) {
  const auto& a = logits.data();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0;
  int64_t bad = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double v = double(a[i]);
    if (!std::isfinite(v)) {
      ++bad;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "logits min=%.6g max=%.6g mean=%.6g nonfinite=%lld/%lld", lo, hi,
                sum / double(std::max<int64_t>(a.size() - bad, 1)), static_cast<long long>(bad),
                static_cast<long long>(a.size()));
  return buf;
}

inline std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const std::string& id : ids) {
    if (!out.empty()) out += ",";
    out += id;
  }
  return out;
}

}  // namespace detail

// Eval-mode confusion over valid pixels of the given samples, one forward per
// sample. Leaves the model in eval mode.
template <class Scalar>
SegMetrics evaluate(UNetModel<Scalar>& model, const DatasetManifest& manifest,
                    const std::vector<int>& indices) {
  detail::check(!indices.empty(), "evaluate: empty split");
  NoGradGuard no_grad;
  model.set_training(false);
  SegMetrics metrics(model.config.num_classes);
  for (int idx : indices) {
    Batch<Scalar> batch = detail::load_batch<Scalar>(manifest, {idx}, model.stats);
    Tensor<Scalar> logits = model.forward(batch.input);
    const Index hw = Index(batch.height) * batch.width;
    const Index k = logits.extent(1);
    std::vector<int32_t> pred(static_cast<size_t>(hw));
    const Scalar* y = logits.data().data();
    for (Index i = 0; i < hw; ++i) {
      int best = 0;
      Scalar best_v = y[i];
      for (Index c = 1; c < k; ++c)
        if (y[c * hw + i] > best_v) {
          best_v = y[c * hw + i];
          best = int(c);
        }
      pred[size_t(i)] = best;
    }
    metrics.accumulate(batch.labels, pred, batch.mask);
  }
  return metrics;
}

// Same confusion on back-projected 3D points. Source clouds are read from
// cloud_dir/<id>.bin with <id>.label sidecars; every point counts (points
// outside the image keep the background label).
template <class Scalar>
SegMetrics evaluate_points(UNetModel<Scalar>& model, const DatasetManifest& manifest,
                           const std::vector<int>& indices, const std::string& cloud_dir) {
  detail::check(!indices.empty(), "evaluate_points: empty split");
  NoGradGuard no_grad;
  model.set_training(false);
  SegMetrics metrics(model.config.num_classes);
  namespace fs = std::filesystem;
  for (int idx : indices) {
    const std::string& id = manifest.ids[size_t(idx)];
    PointCloud cloud = read_point_cloud((fs::path(cloud_dir) / (id + ".bin")).string());
    cloud.labels = read_labels((fs::path(cloud_dir) / (id + ".label")).string());
    detail::check(cloud.labels.size() == cloud.size(), "evaluate_points: label count mismatch for " + id);
    RangeImage image = project(cloud, manifest.projection);
    Tensor<Scalar> input_one = normalize_channels<Scalar>(image, model.stats);
    Tensor<Scalar> input = Tensor<Scalar>::from_array({1, 2, image.height, image.width},
                                                      ArrayX<Scalar>(input_one.data()));
    Tensor<Scalar> logits = model.forward(input);
    const Index hw = Index(image.pixel_count());
    const Index k = logits.extent(1);
    const Scalar* y = logits.data().data();
    RangeImage predicted = image;
    predicted.has_labels = true;
    predicted.labels.assign(size_t(hw), 0);
    for (Index i = 0; i < hw; ++i) {
      int best = 0;
      Scalar best_v = y[i];
      for (Index c = 1; c < k; ++c)
        if (y[c * hw + i] > best_v) {
          best_v = y[c * hw + i];
          best = int(c);
        }
      if (predicted.mask[size_t(i)]) predicted.labels[size_t(i)] = uint8_t(best);
    }
    const std::vector<uint8_t> point_pred = backproject_labels(predicted, cloud);
    std::vector<int32_t> truth(cloud.size()), pred32(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
      truth[i] = cloud.labels[i];
      pred32[i] = point_pred[i];
    }
    metrics.accumulate(truth, pred32, std::vector<uint8_t>(cloud.size(), 1));
  }
  return metrics;
}

// The training loop: shuffled batches, forward in train mode, masked weighted
// cross-entropy, backward, Adam. Logs line-oriented records and writes
// interval plus final checkpoints. start_epoch > 0 resumes a checkpointed run
// and reproduces the uninterrupted batch order because the order depends only
// on (seed, epoch).
template <class Scalar>
TrainReport train_model(UNetModel<Scalar>& model, const DatasetManifest& manifest,
                        const TrainConfig& cfg, std::ostream& log, int start_epoch = 0,
                        int64_t start_step = 0) {
  cfg.validate();
  detail::check(start_epoch >= 0 && start_epoch <= cfg.epochs, "train_model: bad start_epoch");
  const std::vector<int> train_idx = manifest.train_indices();
  const std::vector<int> val_idx = manifest.val_indices();
  detail::check(!train_idx.empty(), "train_model: manifest train split is empty");
  model.stats = manifest.stats;

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Parameter<Scalar>*> params = model.parameters();
  AdamConfig adam;
  adam.lr = cfg.lr;

  auto save = [&](const std::string& name, int epochs_done, int64_t step) {
    std::vector<NamedArray> extra;
    extra.push_back(NamedArray{"__trainer.epoch", {1}, {float(epochs_done)}});
    extra.push_back(NamedArray{"__trainer.global_step", {1}, {float(step)}});
    const std::string path = (fs::path(cfg.out_dir) / name).string();
    save_model(path, model, std::move(extra));
    log << "checkpoint " << path << "\n";
    return path;
  };

  TrainReport report;
  report.global_step = start_step;
  char line[192];
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    model.set_training(true);
    const auto batches = epoch_batches(train_idx, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0;
    for (const std::vector<int>& batch_idx : batches) {
      Batch<Scalar> batch = detail::load_batch<Scalar>(manifest, batch_idx, model.stats);
      Tensor<Scalar> logits = model.forward(batch.input);
      LossValue<Scalar> loss =
          masked_weighted_cross_entropy(logits, batch.labels, batch.mask, batch.weights);
      const double loss_v = double(loss.value.data()[0]);
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                                 std::to_string(report.global_step + 1) + ", batch [" +
                                 detail::join_ids(batch.ids) + "]; " + detail::describe_logits(logits));
      }
      loss.value.backward();
      adam_step(params, adam);
      ++report.global_step;
      loss_sum += loss_v;
      std::snprintf(line, sizeof line, "batch %d %lld %.9g %.3f\n", epoch + 1,
                    static_cast<long long>(report.global_step), loss_v, detail::elapsed_s(t0));
      log << line;
    }
    const double mean_loss = loss_sum / double(batches.size());
    report.epoch_mean_loss.push_back(mean_loss);
    std::snprintf(line, sizeof line, "epoch %d %.9g %.3f\n", epoch + 1, mean_loss, detail::elapsed_s(t0));
    log << line;
    if (!val_idx.empty()) {
      SegMetrics val = evaluate(model, manifest, val_idx);
      std::snprintf(line, sizeof line, "val %d accuracy %.6f fg_mean_iou %.6f\n", epoch + 1,
                    pixel_accuracy(val), mean_iou_foreground(val));
      log << line;
    }
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
        epoch + 1 < cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_e%04d.riuw", epoch + 1);
      save(name, epoch + 1, report.global_step);
    }
  }
  report.final_checkpoint = save("model.riuw", cfg.epochs, report.global_step);
  return report;
}

struct BenchReport {
  int frames = 0;
  double seconds = 0;
  double fps = 0;
};

// Wall-clock eval-mode forward throughput on one synthetic input frame.
template <class Scalar>
BenchReport benchmark_inference(UNetModel<Scalar>& model, int n_frames, uint64_t seed = 0) {
  detail::check(n_frames >= 0, "benchmark_inference: n_frames must be non-negative");
  NoGradGuard no_grad;
  model.set_training(false);
  BenchReport report;
  report.frames = n_frames;
  if (n_frames == 0) return report;
  Rng rng(mix_seed(seed, 0xbe7c4ull));
  ArrayX<Scalar> frame(Index(model.config.in_channels) * model.config.height * model.config.width);
  for (Index i = 0; i < frame.size(); ++i) frame[i] = Scalar(rng.uniform(-1.0, 1.0));
  Tensor<Scalar> input = Tensor<Scalar>::from_array(
      {1, model.config.in_channels, model.config.height, model.config.width}, std::move(frame));
  const auto t0 = std::chrono::steady_clock::now();
  double sink = 0;
  for (int i = 0; i < n_frames; ++i) {
    Tensor<Scalar> logits = model.forward(input);
    sink += double(logits.data()[0]);
  }
  report.seconds = detail::elapsed_s(t0);
  report.fps = report.seconds > 0 ? n_frames / report.seconds : 0;
  (void)sink;
  return report;
}

}  // namespace riunet
