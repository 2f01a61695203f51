#pragma once

#include <cstdint>
#include <vector>

#include "riunet/tensor.hpp"

namespace riunet {

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

struct Point3 {
  float x = 0, y = 0, z = 0;
};

// Sensor-centered Cartesian cloud with optional parallel intensity/label arrays.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<float> intensity;  // empty or one entry per point
  std::vector<uint8_t> labels;   // empty or one entry per point

  size_t size() const { return points.size(); }
  bool has_labels() const { return !labels.empty(); }
};

struct SphericalCoords {
  double theta = 0;  // azimuth, [-pi, pi)
  double phi = 0;    // elevation angle, [-pi/2, pi/2]
  double range = 0;  // meters
};

// theta = atan2(y, x), phi = asin(z / d), d = |p|. Rejects the zero point.
SphericalCoords cartesian_to_spherical(double x, double y, double z);

struct ProjectionConfig {
  int width = 512;
  int height = 64;
  double theta_min = deg_to_rad(-45.0);
  double theta_max = deg_to_rad(45.0);
  double phi_min = deg_to_rad(-24.9);
  double phi_max = deg_to_rad(2.0);

  double delta_theta() const { return (theta_max - theta_min) / width; }
  double delta_phi() const { return (phi_max - phi_min) / height; }
  void validate() const;
};

constexpr int32_t kUnmappedPoint = -1;
constexpr uint8_t kBackgroundClass = 0;

// Two-channel range image: depth towards the sensor and the point's height z,
// plus the validity mask. Row 0 holds the highest elevation; empty pixels
// carry the 0 fill value and the background label.
struct RangeImage {
  int height = 0;
  int width = 0;
  std::vector<float> depth;      // h*w, row-major
  std::vector<float> elevation;  // h*w
  std::vector<uint8_t> mask;     // h*w, 0/1
  std::vector<uint8_t> labels;   // h*w when has_labels
  bool has_labels = false;
  std::vector<float> weights;  // h*w when has_weights (per-pixel loss weights)
  bool has_weights = false;
  std::vector<int32_t> index_map;  // per input point: flat pixel index or kUnmappedPoint

  size_t pixel_count() const { return size_t(height) * width; }
  int32_t flat(int row, int col) const { return int32_t(row * width + col); }
};

// Bin points into the image; columns advance with azimuth from theta_min,
// rows descend from phi_max. Bin edges are inclusive-left, exclusive-right.
// On collisions the nearest point wins every channel and the label.
RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg);

// Pixel labels back onto the points that produced the image; unmapped points
// receive the background class.
std::vector<uint8_t> backproject_labels(const RangeImage& image, const PointCloud& cloud);

// Enforces the mask/fill coupling; throws on violations.
void validate_range_image(const RangeImage& image);

struct ChannelStats {
  float mean[2] = {0.0f, 0.0f};
  float stdev[2] = {1.0f, 1.0f};
};

// Standardized [2,H,W] network input; invalid pixels are zeroed after
// standardization.
template <class Scalar>
Tensor<Scalar> normalize_channels(const RangeImage& image, const ChannelStats& stats) {
  detail::check(stats.stdev[0] > 0 && stats.stdev[1] > 0,
                "normalize_channels: channel std must be positive");
  const Index hw = Index(image.pixel_count());
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(2 * hw);
  for (Index i = 0; i < hw; ++i) {
    if (!image.mask[size_t(i)]) continue;
    out[i] = Scalar((image.depth[size_t(i)] - stats.mean[0]) / stats.stdev[0]);
    out[hw + i] = Scalar((image.elevation[size_t(i)] - stats.mean[1]) / stats.stdev[1]);
  }
  return Tensor<Scalar>::from_array({2, image.height, image.width}, std::move(out));
}

}  // namespace riunet
