#include "riunet/projection.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace riunet {

SphericalCoords cartesian_to_spherical(double x, double y, double z) {
  detail::check(std::isfinite(x) && std::isfinite(y) && std::isfinite(z),
                "cartesian_to_spherical: coordinates must be finite");
  const double d = std::sqrt(x * x + y * y + z * z);
  detail::check(d > 0.0, "cartesian_to_spherical: zero-length point has undefined angles");
  SphericalCoords s;
  s.range = d;
  s.theta = std::atan2(y, x);
  if (s.theta == kPi) s.theta = -kPi;  // keep theta in [-pi, pi)
  s.phi = std::asin(std::clamp(z / d, -1.0, 1.0));
  return s;
}

void ProjectionConfig::validate() const {
  detail::check(width >= 1 && height >= 1, "projection config: width and height must be >= 1");
  detail::check(theta_max > theta_min, "projection config: theta_max must exceed theta_min");
  detail::check(phi_max > phi_min, "projection config: phi_max must exceed phi_min");
}

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg) {
  cfg.validate();
  detail::check(cloud.intensity.empty() || cloud.intensity.size() == cloud.size(),
                "project: intensity array length does not match point count");
  detail::check(cloud.labels.empty() || cloud.labels.size() == cloud.size(),
                "project: label array length does not match point count");

  RangeImage img;
  img.height = cfg.height;
  img.width = cfg.width;
  const size_t npix = img.pixel_count();
  img.depth.assign(npix, 0.0f);
  img.elevation.assign(npix, 0.0f);
  img.mask.assign(npix, 0);
  img.has_labels = cloud.has_labels();
  if (img.has_labels) img.labels.assign(npix, kBackgroundClass);
  img.index_map.assign(cloud.size(), kUnmappedPoint);

  std::vector<double> best(npix, std::numeric_limits<double>::infinity());
  const double dt = cfg.delta_theta();
  const double dp = cfg.delta_phi();

  for (size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    const SphericalCoords s = cartesian_to_spherical(p.x, p.y, p.z);
    const int col = int(std::floor((s.theta - cfg.theta_min) / dt));
    const int row = int(std::floor((cfg.phi_max - s.phi) / dp));
    if (col < 0 || col >= cfg.width || row < 0 || row >= cfg.height) continue;
    const int32_t flat = img.flat(row, col);
    img.index_map[i] = flat;
    if (s.range < best[size_t(flat)]) {
      best[size_t(flat)] = s.range;
      img.depth[size_t(flat)] = float(s.range);
      img.elevation[size_t(flat)] = p.z;
      img.mask[size_t(flat)] = 1;
      if (img.has_labels) img.labels[size_t(flat)] = cloud.labels[i];
    }
  }
  return img;
}

std::vector<uint8_t> backproject_labels(const RangeImage& image, const PointCloud& cloud) {
  detail::check(image.has_labels, "backproject_labels: image carries no labels");
  detail::check(image.index_map.size() == cloud.size(),
                "backproject_labels: index map covers " + std::to_string(image.index_map.size()) +
                    " points but the cloud has " + std::to_string(cloud.size()));
  std::vector<uint8_t> labels(cloud.size(), kBackgroundClass);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const int32_t flat = image.index_map[i];
    if (flat != kUnmappedPoint) labels[i] = image.labels[size_t(flat)];
  }
  return labels;
}

void validate_range_image(const RangeImage& image) {
  const size_t npix = image.pixel_count();
  detail::check(image.depth.size() == npix && image.elevation.size() == npix &&
                    image.mask.size() == npix,
                "range image: channel and mask extents do not match height*width");
  detail::check(!image.has_labels || image.labels.size() == npix,
                "range image: label plane extent does not match height*width");
  detail::check(!image.has_weights || image.weights.size() == npix,
                "range image: weight plane extent does not match height*width");
  for (size_t i = 0; i < npix; ++i) {
    detail::check(image.mask[i] == 0 || image.mask[i] == 1,
                  "range image: mask must be 0/1 at pixel " + std::to_string(i));
    if (image.mask[i]) {
      detail::check(std::isfinite(image.depth[i]) && image.depth[i] > 0.0f,
                    "range image: valid pixel " + std::to_string(i) +
                        " must have positive finite depth");
    } else {
      detail::check(image.depth[i] == 0.0f && image.elevation[i] == 0.0f,
                    "range image: empty pixel " + std::to_string(i) +
                        " must carry the 0 fill value");
      detail::check(!image.has_labels || image.labels[i] == kBackgroundClass,
                    "range image: empty pixel " + std::to_string(i) +
                        " must carry the background label");
    }
  }
  for (size_t i = 0; i < image.index_map.size(); ++i) {
    const int32_t flat = image.index_map[i];
    if (flat == kUnmappedPoint) continue;
    detail::check(flat >= 0 && size_t(flat) < npix && image.mask[size_t(flat)] == 1,
                  "range image: index map entry " + std::to_string(i) +
                      " addresses an empty or out-of-range pixel");
  }
}

}  // namespace riunet
