#ifndef SPARSEFUSE_TESTS_ORACLES_HPP
#define SPARSEFUSE_TESTS_ORACLES_HPP

// Independent reference implementations used only by tests. Each oracle takes
// a route disjoint from the library code it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "sparsefuse/geometry.hpp"
#include "sparsefuse/scene.hpp"

namespace oracles {

using sparsefuse::geom::Box3DCam;
using sparsefuse::geom::Box3DLidar;
using sparsefuse::geom::CameraModel;
using sparsefuse::geom::Vec3;

// 3x4 homogeneous projection matrix P = K [R | t], applied to (p, 1).
inline std::optional<std::array<double, 3>> project_homogeneous(const Vec3& p,
                                                                const CameraModel& cam) {
  double P[3][4];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += cam.intrinsics(r, k) * cam.rotation(k, c);
      P[r][c] = s;
    }
    double s = 0;
    for (int k = 0; k < 3; ++k)
      s += cam.intrinsics(r, k) * (k == 0 ? cam.translation.x
                                   : k == 1 ? cam.translation.y
                                            : cam.translation.z);
    P[r][3] = s;
  }
  double x[3];
  for (int r = 0; r < 3; ++r)
    x[r] = P[r][0] * p.x + P[r][1] * p.y + P[r][2] * p.z + P[r][3];
  if (x[2] <= 1e-6) return std::nullopt;
  return std::array<double, 3>{x[0] / x[2], x[1] / x[2], x[2]};
}

// Re-fit a LiDAR box from its 8 transformed corners plus the transformed
// heading; valid for gravity-aligned rigs.
inline Box3DLidar refit_box_from_corners(const std::array<Vec3, 8>& corners,
                                         const Vec3& heading_dir) {
  Box3DLidar out;
  Vec3 centroid{0, 0, 0};
  for (const auto& c : corners) centroid = centroid + c;
  out.center = centroid * (1.0 / 8.0);
  out.yaw = std::atan2(heading_dir.y, heading_dir.x);
  // Express corners in the heading frame to recover extents.
  double cy = std::cos(out.yaw), sy = std::sin(out.yaw);
  double max_l = 0, max_w = 0, max_h = 0;
  for (const auto& c : corners) {
    Vec3 d = c - out.center;
    double lx = d.x * cy + d.y * sy;
    double wx = -d.x * sy + d.y * cy;
    max_l = std::max(max_l, std::abs(lx));
    max_w = std::max(max_w, std::abs(wx));
    max_h = std::max(max_h, std::abs(d.z));
  }
  out.size = {2 * max_l, 2 * max_w, 2 * max_h};
  return out;
}

// Brute-force assignment minimum over all permutations (n, m <= ~8).
inline double brute_force_assignment(const std::vector<double>& cost, int n, int m) {
  int small = std::min(n, m), large = std::max(n, m);
  std::vector<int> idx(static_cast<size_t>(large));
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::sort(idx.begin(), idx.end());
  do {
    double total = 0;
    for (int i = 0; i < small; ++i)
      total += n <= m ? cost[static_cast<size_t>(i) * m + idx[static_cast<size_t>(i)]]
                      : cost[static_cast<size_t>(idx[static_cast<size_t>(i)]) * m + i];
    best = std::min(best, total);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

// Exact 2x2 transport LP: the feasible set is the segment parameterized by
// the top-left mass; the optimum sits at a vertex.
inline double lp_transport_cost_2x2(const std::array<double, 4>& cost, double p0, double p1,
                                    double q0, double q1) {
  double lo = std::max(0.0, p0 - q1);
  double hi = std::min(p0, q0);
  auto total = [&](double a) {
    double b = p0 - a, c = q0 - a, d = p1 - (q0 - a);
    return a * cost[0] + b * cost[1] + c * cost[2] + d * cost[3];
  };
  return std::min(total(lo), total(hi));
}

inline std::array<double, 4> lp_transport_plan_2x2(const std::array<double, 4>& cost, double p0,
                                                   double p1, double q0, double q1) {
  double lo = std::max(0.0, p0 - q1);
  double hi = std::min(p0, q0);
  auto total = [&](double a) {
    return a * cost[0] + (p0 - a) * cost[1] + (q0 - a) * cost[2] + (p1 - q0 + a) * cost[3];
  };
  double a = total(lo) <= total(hi) ? lo : hi;
  return {a, p0 - a, q0 - a, p1 - (q0 - a)};
}

// Greedy matcher reference: exhaustive check that the greedy TP flags agree
// with a direct simulation (used on small instances).
struct SimplePred {
  int category;
  double score, x, y;
};
struct SimpleGt {
  int category;
  double x, y;
};

inline std::vector<bool> greedy_reference(std::vector<SimplePred> preds,
                                          const std::vector<SimpleGt>& gts, double thr) {
  // preds assumed sorted by descending score
  std::vector<bool> used(gts.size(), false), tp(preds.size(), false);
  for (size_t i = 0; i < preds.size(); ++i) {
    int best = -1;
    double best_d = thr;
    for (size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].category != preds[i].category) continue;
      double d = std::hypot(preds[i].x - gts[j].x, preds[i].y - gts[j].y);
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      used[static_cast<size_t>(best)] = true;
      tp[i] = true;
    }
  }
  return tp;
}

}  // namespace oracles

#endif  // SPARSEFUSE_TESTS_ORACLES_HPP
