#pragma once

#include <cstdint>
#include <vector>

#include "riunet/projection.hpp"

namespace riunet {

// Class ids used throughout: 0 background, 1 car, 2 pedestrian, 3 cyclist.
enum ClassId : uint8_t {
  kClassBackground = 0,
  kClassCar = 1,
  kClassPedestrian = 2,
  kClassCyclist = 3,
};

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"background", "car", "pedestrian", "cyclist"};
  return names;
}

struct Aabb {
  double cx = 0, cy = 0;          // footprint center
  double half_x = 0, half_y = 0;  // footprint half extents
  double z0 = 0, z1 = 0;          // vertical span
};

struct VerticalCylinder {
  double cx = 0, cy = 0;
  double radius = 0;
  double z0 = 0, z1 = 0;
};

struct SceneObject {
  uint8_t label = kClassBackground;
  std::vector<Aabb> boxes;
  std::vector<VerticalCylinder> cylinders;
};

struct Range {
  double lo = 0, hi = 0;
};

// Procedural scene recipe: boxes stand in for cars, thin vertical cylinders
// for pedestrians, a narrow box plus a cylinder for cyclists. Objects are
// placed on the ground plane inside the sensor field of view.
struct SceneSpec {
  uint64_t seed = 0;
  int num_cars = 3;
  int num_pedestrians = 2;
  int num_cyclists = 2;
  // Disjoint per-class distance bands keep every object large enough to
  // resolve cleanly at the default 512x64 beam pattern and give each class a
  // distinctive depth signature.
  Range car_distance{14.0, 20.0};
  Range car_length{3.5, 4.8};
  Range car_width{1.6, 2.0};
  Range car_height{1.4, 1.7};
  Range pedestrian_distance{4.0, 8.0};
  Range pedestrian_radius{0.35, 0.50};
  Range pedestrian_height{1.55, 1.90};
  Range cyclist_distance{9.0, 13.0};
  double ground_z = -1.73;
  double min_range = 2.0;
  double max_range = 70.0;
  ProjectionConfig beams;

  void validate() const;
};

// Casts one ray per beam of the configured pattern and keeps the nearest
// analytic intersection among ground plane, boxes and cylinders. Beams that
// hit nothing inside [min_range, max_range] produce no point. Point order is
// row-major over the beam grid and fully determined by the seed.
PointCloud generate_scene(const SceneSpec& spec);

// Nearest-hit ray parameter against one primitive; returns false on miss.
// Rays start at the origin with unit direction.
bool intersect_ray_aabb(const double dir[3], const Aabb& box, double* t_hit);
bool intersect_ray_cylinder(const double dir[3], const VerticalCylinder& cyl, double* t_hit);

}  // namespace riunet
