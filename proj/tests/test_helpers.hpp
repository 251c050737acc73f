#ifndef SPARSEFUSE_TESTS_HELPERS_HPP
#define SPARSEFUSE_TESTS_HELPERS_HPP

#include <cmath>

#include "sparsefuse/common.hpp"
#include "sparsefuse/geometry.hpp"
#include "sparsefuse/nn/tensor.hpp"

namespace helpers {

using sparsefuse::Rng;
using sparsefuse::geom::Box3DLidar;
using sparsefuse::geom::CameraModel;
using sparsefuse::geom::Mat3;
using sparsefuse::geom::Vec3;

// Arbitrary proper rotation from three Gaussian draws (Gram-Schmidt).
inline Mat3 random_rotation(Rng& rng) {
  Vec3 a{rng.gaussian(), rng.gaussian(), rng.gaussian()};
  Vec3 b{rng.gaussian(), rng.gaussian(), rng.gaussian()};
  double na = a.norm();
  a = a * (1.0 / na);
  double dot = a.x * b.x + a.y * b.y + a.z * b.z;
  b = b - a * dot;
  b = b * (1.0 / b.norm());
  Vec3 c{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
  Mat3 r;
  r.m = {a.x, b.x, c.x, a.y, b.y, c.y, a.z, b.z, c.z};
  return r;
}

// Gravity-aligned rig: camera Y antiparallel to world Z. The box transforms
// are exact for this family.
inline CameraModel random_level_camera(Rng& rng) {
  CameraModel cam;
  cam.view_id = 0;
  cam.image_width = 64;
  cam.image_height = 40;
  double f = rng.uniform(20, 60);
  cam.intrinsics.m = {f, 0, rng.uniform(20, 44), 0, f, rng.uniform(10, 30), 0, 0, 1};
  Mat3 axis;
  axis.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.rotation = axis * Mat3::rot_z(rng.uniform(-M_PI, M_PI));
  cam.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3)};
  return cam;
}

inline CameraModel random_camera(Rng& rng) {
  CameraModel cam = random_level_camera(rng);
  cam.rotation = random_rotation(rng);
  return cam;
}

inline Box3DLidar random_box(Rng& rng) {
  Box3DLidar b;
  b.center = {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(0, 3)};
  b.size = {rng.uniform(0.4, 8), rng.uniform(0.4, 3), rng.uniform(0.4, 3)};
  b.yaw = rng.uniform(-M_PI, M_PI);
  b.velocity = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
  return b;
}

inline sparsefuse::nn::TensorPtr random_tensor(Rng& rng, std::vector<int> shape, double lo = -1,
                                               double hi = 1) {
  auto t = sparsefuse::nn::make_tensor(std::move(shape));
  for (auto& v : t->values) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace helpers

#endif  // SPARSEFUSE_TESTS_HELPERS_HPP
