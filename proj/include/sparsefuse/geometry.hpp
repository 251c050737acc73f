#ifndef SPARSEFUSE_GEOMETRY_HPP
#define SPARSEFUSE_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "sparsefuse/common.hpp"

namespace sparsefuse::geom {

struct Vec2 {
  double x = 0, y = 0;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  Vec3 transposed_mul(const Vec3& v) const {  // R^T v without materializing
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }

  static Mat3 rot_z(double a) {
    double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }
};

// Pinhole camera. Convention: p_cam = rotation * p_lidar + translation.
// LiDAR frame: +X forward, +Y left, +Z up.
// Camera frame: +X right, +Y down, +Z forward.
struct CameraModel {
  int view_id = 0;
  Mat3 intrinsics;   // K, pixels; upper-triangular, positive focals
  Mat3 rotation;     // R, orthonormal, det +1
  Vec3 translation;  // t, meters
  int image_width = 0, image_height = 0;
};

// 3D box in the LiDAR frame. Yaw about +Z, zero yaw = heading +X.
// size = (length along heading, width, height).
struct Box3DLidar {
  Vec3 center;
  Vec3 size;
  double yaw = 0;
  Vec2 velocity;  // vx, vy (m/s)
};

// 3D box in a camera frame. Yaw about +Y, zero yaw = heading +Z.
// size keeps the (length, width, height) meaning of the LiDAR box.
struct Box3DCam {
  Vec3 center;
  Vec3 size;
  double yaw = 0;
  Vec2 velocity;  // along camera X and Z (m/s)
};

struct BevGrid {
  double x_min = -24, x_max = 24;
  double y_min = -24, y_max = 24;
  double resolution = 2.0;  // meters/cell
  int width = 24, height = 24;

  static BevGrid make(double x_min, double x_max, double y_min, double y_max, double res) {
    BevGrid g;
    g.x_min = x_min;
    g.x_max = x_max;
    g.y_min = y_min;
    g.y_max = y_max;
    g.resolution = res;
    double w = (x_max - x_min) / res, h = (y_max - y_min) / res;
    g.width = static_cast<int>(std::llround(w));
    g.height = static_cast<int>(std::llround(h));
    if (std::abs(w - g.width) > 1e-9 || std::abs(h - g.height) > 1e-9)
      throw ConfigError("BEV range is not an integer multiple of the resolution");
    return g;
  }

  Vec2 cell_center(int col, int row) const {
    return {x_min + (col + 0.5) * resolution, y_min + (row + 0.5) * resolution};
  }
  bool contains(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
};

struct ImagePoint {
  double u = 0, v = 0;  // pixels
  double depth = 0;     // camera-frame z, meters
};

inline constexpr double kMinProjectionDepth = 1e-6;

// Perspective projection of a LiDAR-frame point. Returns nullopt for points
// at or behind the camera plane; never clamps.
inline std::optional<ImagePoint> project_lidar_to_image(const Vec3& p, const CameraModel& cam) {
  Vec3 pc = cam.rotation * p + cam.translation;
  if (pc.z <= kMinProjectionDepth) return std::nullopt;
  Vec3 uvw = cam.intrinsics * pc;
  return ImagePoint{uvw.x / uvw.z, uvw.y / uvw.z, pc.z};
}

inline bool in_image(const ImagePoint& ip, const CameraModel& cam) {
  return ip.u >= 0 && ip.u < cam.image_width && ip.v >= 0 && ip.v < cam.image_height;
}

inline double normalize_angle(double a) {  // to (-pi, pi]
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

// Yaw transfer goes through the heading unit vector, not Euler composition.
// Exact for gravity-aligned rigs (camera Y parallel to world -Z), which is
// the only rig family the box transforms are specified for.
inline Box3DCam box_lidar_to_cam(const Box3DLidar& b, const CameraModel& cam) {
  Box3DCam out;
  out.center = cam.rotation * b.center + cam.translation;
  out.size = b.size;
  Vec3 heading{std::cos(b.yaw), std::sin(b.yaw), 0.0};
  Vec3 hc = cam.rotation * heading;
  out.yaw = std::atan2(hc.x, hc.z);
  Vec3 vel{b.velocity.x, b.velocity.y, 0.0};
  Vec3 vc = cam.rotation * vel;
  out.velocity = {vc.x, vc.z};
  return out;
}

inline Box3DLidar box_cam_to_lidar(const Box3DCam& b, const CameraModel& cam) {
  Box3DLidar out;
  out.center = cam.rotation.transposed_mul(b.center - cam.translation);
  out.size = b.size;
  Vec3 heading{std::sin(b.yaw), 0.0, std::cos(b.yaw)};
  Vec3 hl = cam.rotation.transposed_mul(heading);
  out.yaw = std::atan2(hl.y, hl.x);
  Vec3 vel{b.velocity.x, 0.0, b.velocity.y};
  Vec3 vl = cam.rotation.transposed_mul(vel);
  out.velocity = {vl.x, vl.y};
  return out;
}

struct BevCell {
  int col = 0, row = 0;
};

inline std::optional<BevCell> bev_cell_of(const Vec2& xy, const BevGrid& grid) {
  if (!grid.contains(xy.x, xy.y)) return std::nullopt;
  int col = static_cast<int>(std::floor((xy.x - grid.x_min) / grid.resolution));
  int row = static_cast<int>(std::floor((xy.y - grid.y_min) / grid.resolution));
  col = std::min(col, grid.width - 1);  // guard the x == x_max - eps edge
  row = std::min(row, grid.height - 1);
  return BevCell{col, row};
}

// Eight corners of a LiDAR box, ordered by (+-l/2, +-w/2, +-h/2) sign bits.
inline std::array<Vec3, 8> box_corners(const Box3DLidar& b) {
  Mat3 r = Mat3::rot_z(b.yaw);
  std::array<Vec3, 8> out;
  int i = 0;
  for (double sx : {0.5, -0.5})
    for (double sy : {0.5, -0.5})
      for (double sz : {0.5, -0.5})
        out[i++] = b.center + r * Vec3{sx * b.size.x, sy * b.size.y, sz * b.size.z};
  return out;
}

}  // namespace sparsefuse::geom

#endif  // SPARSEFUSE_GEOMETRY_HPP
