#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "riunet/loss.hpp"
#include "riunet/projection.hpp"
#include "riunet/tensor.hpp"

namespace riunet {

// --- point cloud files ---------------------------------------------------
// Flat little-endian f32 records of (x, y, z, intensity), KITTI-style.

PointCloud read_point_cloud(const std::string& path);
void write_point_cloud(const std::string& path, const PointCloud& cloud);

// Label sidecar: one little-endian u32 per point.
std::vector<uint8_t> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<uint8_t>& labels);

// --- range-image files ----------------------------------------------------
// Magic "RIMG", then little-endian u32 version, H, W, C; C channel planes of
// little-endian f32 (depth, elevation); mask plane of 0/1 bytes; one presence
// byte + optional label plane (bytes); one presence byte + optional weight
// plane (f32). The reader re-validates the mask/fill invariants.

inline constexpr uint32_t kRangeImageVersion = 1;

void write_range_image(const std::string& path, const RangeImage& image);
RangeImage read_range_image(const std::string& path);

// --- dataset manifest -----------------------------------------------------

struct DatasetManifest {
  std::string root;  // directory holding the sample files; set from the manifest path on read
  std::vector<std::string> ids;
  std::vector<uint8_t> is_val;  // parallel to ids, 0 = train, 1 = val
  ProjectionConfig projection;
  int num_classes = 4;
  std::vector<std::string> class_names;
  ChannelStats stats;                     // train-split depth/elevation mean and std
  std::vector<int64_t> train_class_pixels;
  std::vector<float> class_weights;       // balancing term w_c per class

  std::vector<int> train_indices() const;
  std::vector<int> val_indices() const;
  std::string sample_path(int index) const;
};

// Line-oriented "key value" text with a versioned header line. Floats are
// printed shortest-round-trip so read/write round trips byte-identically.
void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

// --- dataset build ----------------------------------------------------------

struct DatasetBuildConfig {
  ProjectionConfig projection;
  int num_classes = 4;
  std::vector<std::string> class_names;  // defaults to background/car/pedestrian/cyclist
  double val_fraction = 0.2;
  uint64_t seed = 0;
  WeightMapParams weight_params;
};

// Projects every labeled cloud, assigns a seeded train/val split, computes
// normalization stats and class weights on the train split only, attaches a
// precomputed loss weight map to every sample, and writes <id>.rimg files
// plus manifest.txt under out_dir. Duplicate ids are rejected. Deterministic:
// same inputs and seed give byte-identical outputs.
DatasetManifest build_dataset(const std::vector<std::string>& ids,
                              const std::vector<PointCloud>& clouds,
                              const DatasetBuildConfig& cfg, const std::string& out_dir);

// --- batching ----------------------------------------------------------------

// Splits a deterministic (seed, epoch)-shuffled copy of `indices` into
// consecutive batches; the final partial batch is kept.
std::vector<std::vector<int>> epoch_batches(const std::vector<int>& indices, int batch_size,
                                            uint64_t seed, int64_t epoch);

template <class Scalar>
struct Batch {
  Tensor<Scalar> input;  // [N, 2, H, W], normalized, invalid pixels zero
  std::vector<int32_t> labels;
  std::vector<uint8_t> mask;
  ArrayX<Scalar> weights;
  int height = 0, width = 0;
  std::vector<std::string> ids;
};

template <class Scalar>
Batch<Scalar> assemble_batch(const std::vector<const RangeImage*>& images, const ChannelStats& stats,
                             std::vector<std::string> ids = {}) {
  detail::check(!images.empty(), "assemble_batch: empty batch");
  const int h = images[0]->height;
  const int w = images[0]->width;
  const Index hw = Index(h) * w;
  const Index n = Index(images.size());
  Batch<Scalar> batch;
  batch.height = h;
  batch.width = w;
  batch.ids = std::move(ids);
  batch.labels.resize(size_t(n * hw));
  batch.mask.resize(size_t(n * hw));
  batch.weights = ArrayX<Scalar>::Zero(n * hw);
  ArrayX<Scalar> input = ArrayX<Scalar>::Zero(n * 2 * hw);
  for (Index s = 0; s < n; ++s) {
    const RangeImage& img = *images[size_t(s)];
    detail::check(img.height == h && img.width == w, "assemble_batch: mixed image sizes");
    detail::check(img.has_labels && img.has_weights, "assemble_batch: sample lacks labels or weights");
    Tensor<Scalar> one = normalize_channels<Scalar>(img, stats);
    input.segment(s * 2 * hw, 2 * hw) = one.data();
    for (Index i = 0; i < hw; ++i) {
      batch.labels[size_t(s * hw + i)] = img.labels[size_t(i)];
      batch.mask[size_t(s * hw + i)] = img.mask[size_t(i)];
      batch.weights[s * hw + i] = Scalar(img.weights[size_t(i)]);
    }
  }
  batch.input = Tensor<Scalar>::from_array({n, 2, h, w}, std::move(input));
  return batch;
}

}  // namespace riunet
