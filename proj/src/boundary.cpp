#include "riunet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace riunet {

namespace {

constexpr double kFar = 1e20;

// 1-D squared distance transform (lower envelope of parabolas), Felzenszwalb
// and Huttenlocher. f is the sampled function, d the output, v/z scratch.
void dt1d(const double* f, double* d, int* v, double* z, int n) {
  int k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

// Exact squared Euclidean distance to the nearest seed (grid[i] == 0).
void edt2d(std::vector<double>& grid, int height, int width) {
  std::vector<double> f(std::max(height, width)), d(std::max(height, width));
  std::vector<int> v(std::max(height, width));
  std::vector<double> z(std::max(height, width) + 1);

  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = grid[size_t(y) * width + x];
    dt1d(f.data(), d.data(), v.data(), z.data(), height);
    for (int y = 0; y < height; ++y) grid[size_t(y) * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) f[x] = grid[size_t(y) * width + x];
    dt1d(f.data(), d.data(), v.data(), z.data(), width);
    for (int x = 0; x < width; ++x) grid[size_t(y) * width + x] = d[x];
  }
}

}  // namespace

std::vector<double> class_balance_weights(const std::vector<int64_t>& class_pixel_counts,
                                          double clamp_lo, double clamp_hi) {
  const size_t k = class_pixel_counts.size();
  int64_t total = 0;
  for (int64_t c : class_pixel_counts) total += c;
  std::vector<double> w(k, 1.0);
  if (total == 0) return w;

  for (size_t i = 0; i < k; ++i) {
    const double raw =
        class_pixel_counts[i] > 0 ? double(total) / double(class_pixel_counts[i]) : clamp_hi;
    w[i] = std::clamp(raw, clamp_lo, clamp_hi);
  }
  // Rescale so the pixel-weighted mean over the counted set is 1.
  double mean = 0.0;
  for (size_t i = 0; i < k; ++i) mean += double(class_pixel_counts[i]) / double(total) * w[i];
  for (size_t i = 0; i < k; ++i) w[i] /= mean;
  return w;
}

std::pair<std::vector<float>, std::vector<float>> label_distance_fields(
    const std::vector<uint8_t>& labels, const std::vector<uint8_t>& mask, int height, int width) {
  const size_t npix = size_t(height) * width;
  const float inf = std::numeric_limits<float>::infinity();
  std::vector<float> d1(npix, inf), d2(npix, inf);

  std::set<uint8_t> present;
  for (size_t i = 0; i < npix; ++i)
    if (mask[i]) present.insert(labels[i]);

  std::vector<double> grid(npix);
  for (uint8_t label : present) {
    for (size_t i = 0; i < npix; ++i)
      grid[i] = (mask[i] && labels[i] == label) ? 0.0 : kFar;
    edt2d(grid, height, width);
    for (size_t i = 0; i < npix; ++i) {
      const float dist = grid[i] >= kFar * 0.5 ? inf : float(std::sqrt(grid[i]));
      if (dist < d1[i]) {
        d2[i] = d1[i];
        d1[i] = dist;
      } else if (dist < d2[i]) {
        d2[i] = dist;
      }
    }
  }
  return {std::move(d1), std::move(d2)};
}

std::vector<float> boundary_weight_map(const std::vector<uint8_t>& labels,
                                       const std::vector<uint8_t>& mask, int height, int width,
                                       const WeightMapParams& params,
                                       const std::vector<double>& class_weights) {
  const size_t npix = size_t(height) * width;
  auto [d1, d2] = label_distance_fields(labels, mask, height, width);
  std::vector<float> w(npix, 0.0f);
  const double inv_two_sigma_sq = 1.0 / (2.0 * params.sigma * params.sigma);
  for (size_t i = 0; i < npix; ++i) {
    if (!mask[i]) continue;
    const double wc = class_weights.empty() ? 1.0 : class_weights[labels[i]];
    const double dsum = double(d1[i]) + double(d2[i]);
    const double boundary =
        std::isfinite(dsum) ? params.w0 * std::exp(-dsum * dsum * inv_two_sigma_sq) : 0.0;
    w[i] = float(wc + boundary);
  }
  return w;
}

}  // namespace riunet
