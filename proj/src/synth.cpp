#include "riunet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "riunet/rng.hpp"

namespace riunet {
namespace {

double sample(Rng& rng, const Range& r) { return rng.uniform(r.lo, r.hi); }

struct Hit {
  double t = 0;
  uint8_t label = kClassBackground;
  bool valid = false;
};

void consider(Hit* best, double t, uint8_t label) {
  if (t <= 0) return;
  if (!best->valid || t < best->t) {
    best->t = t;
    best->label = label;
    best->valid = true;
  }
}

}  // namespace

void SceneSpec::validate() const {
  beams.validate();
  if (num_cars < 0 || num_pedestrians < 0 || num_cyclists < 0)
    throw std::invalid_argument("SceneSpec: negative object count");
  if (!(min_range > 0) || !(max_range > min_range))
    throw std::invalid_argument("SceneSpec: need 0 < min_range < max_range");
  if (!(ground_z < 0)) throw std::invalid_argument("SceneSpec: ground plane must sit below the sensor");
}

bool intersect_ray_aabb(const double dir[3], const Aabb& box, double* t_hit) {
  const double lo[3] = {box.cx - box.half_x, box.cy - box.half_y, box.z0};
  const double hi[3] = {box.cx + box.half_x, box.cy + box.half_y, box.z1};
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (0.0 < lo[a] || 0.0 > hi[a]) return false;
      continue;
    }
    double t0 = lo[a] / dir[a];
    double t1 = hi[a] / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  if (t_far <= 0) return false;
  *t_hit = t_near > 0 ? t_near : t_far;
  return true;
}

bool intersect_ray_cylinder(const double dir[3], const VerticalCylinder& cyl, double* t_hit) {
  // Infinite cylinder |o + t d - c|_xy = r with the origin at o = 0, then
  // clip to the z slab; also test the end caps.
  const double a = dir[0] * dir[0] + dir[1] * dir[1];
  const double b = -2.0 * (dir[0] * cyl.cx + dir[1] * cyl.cy);
  const double c = cyl.cx * cyl.cx + cyl.cy * cyl.cy - cyl.radius * cyl.radius;
  double best = std::numeric_limits<double>::infinity();
  if (a > 0) {
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= 0) continue;
        const double z = t * dir[2];
        if (z >= cyl.z0 && z <= cyl.z1 && t < best) best = t;
      }
    }
  }
  if (dir[2] != 0.0) {
    for (double zc : {cyl.z0, cyl.z1}) {
      const double t = zc / dir[2];
      if (t <= 0 || t >= best) continue;
      const double dx = t * dir[0] - cyl.cx;
      const double dy = t * dir[1] - cyl.cy;
      if (dx * dx + dy * dy <= cyl.radius * cyl.radius) best = t;
    }
  }
  if (!std::isfinite(best)) return false;
  *t_hit = best;
  return true;
}

PointCloud generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5ce9e5ull));

  const double theta_span = spec.beams.theta_max - spec.beams.theta_min;

  std::vector<SceneObject> objects;
  auto place_footprint = [&](double dist_lo, double dist_hi, double* cx, double* cy) {
    const double dist = rng.uniform(dist_lo, dist_hi);
    // Keep the azimuth away from the FOV edges so objects are not clipped.
    const double theta = spec.beams.theta_min + theta_span * rng.uniform(0.12, 0.88);
    *cx = dist * std::cos(theta);
    *cy = dist * std::sin(theta);
  };

  for (int i = 0; i < spec.num_cars; ++i) {
    SceneObject obj;
    obj.label = kClassCar;
    Aabb box;
    place_footprint(spec.car_distance.lo, spec.car_distance.hi, &box.cx, &box.cy);
    box.half_x = sample(rng, spec.car_length) / 2;
    box.half_y = sample(rng, spec.car_width) / 2;
    box.z0 = spec.ground_z;
    box.z1 = spec.ground_z + sample(rng, spec.car_height);
    obj.boxes.push_back(box);
    objects.push_back(std::move(obj));
  }
  for (int i = 0; i < spec.num_pedestrians; ++i) {
    SceneObject obj;
    obj.label = kClassPedestrian;
    VerticalCylinder cyl;
    place_footprint(spec.pedestrian_distance.lo, spec.pedestrian_distance.hi, &cyl.cx, &cyl.cy);
    cyl.radius = sample(rng, spec.pedestrian_radius);
    cyl.z0 = spec.ground_z;
    cyl.z1 = spec.ground_z + sample(rng, spec.pedestrian_height);
    obj.cylinders.push_back(cyl);
    objects.push_back(std::move(obj));
  }
  for (int i = 0; i < spec.num_cyclists; ++i) {
    SceneObject obj;
    obj.label = kClassCyclist;
    double cx, cy;
    place_footprint(spec.cyclist_distance.lo, spec.cyclist_distance.hi, &cx, &cy);
    Aabb frame;  // bike silhouette
    frame.cx = cx;
    frame.cy = cy;
    frame.half_x = rng.uniform(0.80, 1.00);
    frame.half_y = rng.uniform(0.34, 0.44);
    frame.z0 = spec.ground_z;
    frame.z1 = spec.ground_z + rng.uniform(0.9, 1.1);
    obj.boxes.push_back(frame);
    VerticalCylinder rider;
    rider.cx = cx;
    rider.cy = cy;
    rider.radius = rng.uniform(0.34, 0.44);
    rider.z0 = frame.z1 - 0.2;
    rider.z1 = spec.ground_z + rng.uniform(1.6, 1.85);
    obj.cylinders.push_back(rider);
    objects.push_back(std::move(obj));
  }

  const double dtheta = spec.beams.delta_theta();
  const double dphi = spec.beams.delta_phi();

  PointCloud cloud;
  cloud.points.reserve(static_cast<size_t>(spec.beams.width) * spec.beams.height);
  cloud.intensity.reserve(cloud.points.capacity());
  cloud.labels.reserve(cloud.points.capacity());

  // One ray through the center of each beam cell, row-major. Pixel-center
  // directions land each returned point back in its own cell on projection.
  for (int r = 0; r < spec.beams.height; ++r) {
    const double phi = spec.beams.phi_max - (r + 0.5) * dphi;
    for (int c = 0; c < spec.beams.width; ++c) {
      const double theta = spec.beams.theta_min + (c + 0.5) * dtheta;
      const double cp = std::cos(phi);
      const double dir[3] = {cp * std::cos(theta), cp * std::sin(theta), std::sin(phi)};

      Hit best;
      if (dir[2] < 0) consider(&best, spec.ground_z / dir[2], kClassBackground);
      for (const SceneObject& obj : objects) {
        double t;
        for (const Aabb& box : obj.boxes)
          if (intersect_ray_aabb(dir, box, &t)) consider(&best, t, obj.label);
        for (const VerticalCylinder& cyl : obj.cylinders)
          if (intersect_ray_cylinder(dir, cyl, &t)) consider(&best, t, obj.label);
      }
      if (!best.valid || best.t < spec.min_range || best.t > spec.max_range) continue;

      Point3 p{float(best.t * dir[0]), float(best.t * dir[1]), float(best.t * dir[2])};
      cloud.points.push_back(p);
      // Toy reflectance: class-dependent base with a little jitter.
      const double base = best.label == kClassBackground ? 0.2 : 0.4 + 0.15 * best.label;
      cloud.intensity.push_back(static_cast<float>(std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0)));
      cloud.labels.push_back(best.label);
    }
  }
  return cloud;
}

}  // namespace riunet
