#ifndef SPARSEFUSE_EVALMETRICS_HPP
#define SPARSEFUSE_EVALMETRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sparsefuse/detector.hpp"
#include "sparsefuse/jsonio.hpp"

namespace sparsefuse::eval {

using det::Detection;
using scene::ObjectSpec;

inline const std::vector<double>& ap_thresholds() {
  static const std::vector<double> t = {0.5, 1.0, 2.0, 4.0};
  return t;
}

struct ScenePredictions {
  int scene_id = 0;
  std::vector<Detection> detections;
};

struct SceneGts {
  int scene_id = 0;
  std::vector<ObjectSpec> objects;
};

inline double bev_center_distance(const geom::Box3DLidar& a, const geom::Box3DLidar& b) {
  return std::hypot(a.center.x - b.center.x, a.center.y - b.center.y);
}

// Score-descending greedy matching: each GT matches at most once; a match
// needs the same class and BEV center distance <= threshold. `preds` must
// already be sorted by descending score. Returns per-prediction TP flags.
inline std::vector<bool> match_greedy(const std::vector<Detection>& preds,
                                      const std::vector<ObjectSpec>& gts, double threshold) {
  std::vector<bool> tp(preds.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (size_t i = 0; i < preds.size(); ++i) {
    double best = threshold;
    int best_j = -1;
    for (size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].category != preds[i].category) continue;
      double d = bev_center_distance(preds[i].box, gts[j].box);
      if (d <= best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      taken[static_cast<size_t>(best_j)] = true;
      tp[i] = true;
    }
  }
  return tp;
}

// All-points average precision: sum of precision-at-each-TP over GT count.
inline double average_precision(const std::vector<bool>& tp_flags, int n_gt) {
  if (n_gt <= 0) return 0.0;
  double ap = 0;
  int tp = 0;
  for (size_t i = 0; i < tp_flags.size(); ++i) {
    if (tp_flags[i]) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(i + 1);
    }
  }
  return ap / n_gt;
}

// ---------------------------------------------------------------------------
// Report: per class, per threshold AP for each branch, plus the mAP means.

struct BranchMetrics {
  // ap[class][threshold index]; classes with zero GT are excluded from means.
  std::vector<std::vector<double>> ap;
  std::vector<int> gt_counts;
  double map = 0;        // mean over present classes and all thresholds
  double map_at_2m = 0;  // mean over present classes at the 2 m threshold
};

inline BranchMetrics evaluate_branch(const std::vector<ScenePredictions>& preds,
                                     const std::vector<SceneGts>& gts, int num_categories) {
  BranchMetrics out;
  out.ap.assign(static_cast<size_t>(num_categories),
                std::vector<double>(ap_thresholds().size(), 0.0));
  out.gt_counts.assign(static_cast<size_t>(num_categories), 0);

  // Pool predictions across scenes per class, with per-scene matching.
  for (int cls = 0; cls < num_categories; ++cls) {
    int n_gt = 0;
    for (const auto& g : gts)
      for (const auto& o : g.objects)
        if (o.category == cls) ++n_gt;
    out.gt_counts[static_cast<size_t>(cls)] = n_gt;
    if (n_gt == 0) continue;

    for (size_t ti = 0; ti < ap_thresholds().size(); ++ti) {
      double thr = ap_thresholds()[ti];
      // (score, tp) pairs pooled over scenes, then ranked globally.
      std::vector<std::pair<double, bool>> ranked;
      for (size_t s = 0; s < preds.size(); ++s) {
        std::vector<Detection> cls_preds;
        for (const auto& d : preds[s].detections)
          if (d.category == cls) cls_preds.push_back(d);
        std::sort(cls_preds.begin(), cls_preds.end(),
                  [](const Detection& a, const Detection& b) { return a.score > b.score; });
        std::vector<ObjectSpec> cls_gts;
        for (const auto& o : gts[s].objects)
          if (o.category == cls) cls_gts.push_back(o);
        auto tp = match_greedy(cls_preds, cls_gts, thr);
        for (size_t i = 0; i < cls_preds.size(); ++i)
          ranked.emplace_back(cls_preds[i].score, tp[i]);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<bool> flags;
      flags.reserve(ranked.size());
      for (const auto& r : ranked) flags.push_back(r.second);
      out.ap[static_cast<size_t>(cls)][ti] = average_precision(flags, n_gt);
    }
  }

  int present = 0;
  double sum = 0, sum2m = 0;
  size_t idx2m = 2;  // thresholds {0.5, 1, 2, 4}
  for (int cls = 0; cls < num_categories; ++cls) {
    if (out.gt_counts[static_cast<size_t>(cls)] == 0) continue;
    ++present;
    for (size_t ti = 0; ti < ap_thresholds().size(); ++ti)
      sum += out.ap[static_cast<size_t>(cls)][ti];
    sum2m += out.ap[static_cast<size_t>(cls)][idx2m];
  }
  if (present > 0) {
    out.map = sum / (present * static_cast<double>(ap_thresholds().size()));
    out.map_at_2m = sum2m / present;
  }
  return out;
}

struct MetricReport {
  int num_categories = 0;
  int num_scenes = 0;
  BranchMetrics lidar, camera_before_vt, camera_after_vt, fused;
};

inline bool report_has_nan(const MetricReport& r) {
  auto branch_nan = [](const BranchMetrics& b) {
    if (std::isnan(b.map) || std::isnan(b.map_at_2m)) return true;
    for (const auto& row : b.ap)
      for (double v : row)
        if (std::isnan(v)) return true;
    return false;
  };
  return branch_nan(r.lidar) || branch_nan(r.camera_before_vt) ||
         branch_nan(r.camera_after_vt) || branch_nan(r.fused);
}

inline void write_branch(JsonWriter& w, const std::string& name, const BranchMetrics& b) {
  w.key(name);
  w.begin_object();
  w.kv("map", b.map);
  w.kv("map_at_2m", b.map_at_2m);
  w.key("ap_per_class");
  w.begin_array();
  for (const auto& row : b.ap) {
    w.begin_array();
    for (double v : row) w.value(v);
    w.end_array();
  }
  w.end_array();
  w.array("gt_counts", b.gt_counts);
  w.end_object();
}

inline std::string serialize_report(const MetricReport& r) {
  JsonWriter w;
  w.begin_object();
  w.kv("num_categories", r.num_categories);
  w.kv("num_scenes", r.num_scenes);
  w.array("thresholds_m", ap_thresholds());
  write_branch(w, "lidar", r.lidar);
  write_branch(w, "camera_before_vt", r.camera_before_vt);
  write_branch(w, "camera_after_vt", r.camera_after_vt);
  write_branch(w, "fused", r.fused);
  w.end_object();
  return w.str();
}

// ---------------------------------------------------------------------------
// Modality-exclusive recall (the per-modality analysis instrument). A GT is
// recalled by a branch when some prediction of the correct class lies within
// the radius (2 m); scores are ignored here. Counts are binned by class and
// by range ring, and always partition the GT count.

inline constexpr double kRecallRadius = 2.0;

inline const std::vector<double>& range_ring_edges() {
  static const std::vector<double> e = {0.0, 10.0, 20.0, 40.0};
  return e;
}

struct RecallBreakdown {
  // [class][ring] -> counts
  std::vector<std::vector<int>> lidar_only, camera_only, both, neither;
  int num_categories = 0;

  int gt_total(int cls, int ring) const {
    return lidar_only[static_cast<size_t>(cls)][static_cast<size_t>(ring)] +
           camera_only[static_cast<size_t>(cls)][static_cast<size_t>(ring)] +
           both[static_cast<size_t>(cls)][static_cast<size_t>(ring)] +
           neither[static_cast<size_t>(cls)][static_cast<size_t>(ring)];
  }
  int sum(const std::vector<std::vector<int>>& m) const {
    int s = 0;
    for (const auto& row : m)
      for (int v : row) s += v;
    return s;
  }
};

inline bool recalled_by(const std::vector<Detection>& dets, const ObjectSpec& gt, double radius) {
  for (const auto& d : dets) {
    if (d.category != gt.category) continue;
    if (bev_center_distance(d.box, gt.box) <= radius) return true;
  }
  return false;
}

inline RecallBreakdown modality_recall(const std::vector<ScenePredictions>& lidar_dets,
                                       const std::vector<ScenePredictions>& camera_dets,
                                       const std::vector<SceneGts>& gts, int num_categories,
                                       double radius = kRecallRadius) {
  RecallBreakdown out;
  out.num_categories = num_categories;
  int rings = static_cast<int>(range_ring_edges().size()) - 1;
  auto zeros = std::vector<std::vector<int>>(static_cast<size_t>(num_categories),
                                             std::vector<int>(static_cast<size_t>(rings), 0));
  out.lidar_only = out.camera_only = out.both = out.neither = zeros;

  for (size_t s = 0; s < gts.size(); ++s) {
    for (const auto& gt : gts[s].objects) {
      double r = std::hypot(gt.box.center.x, gt.box.center.y);
      int ring = rings - 1;
      for (int k = 0; k < rings; ++k)
        if (r >= range_ring_edges()[static_cast<size_t>(k)] &&
            r < range_ring_edges()[static_cast<size_t>(k) + 1]) {
          ring = k;
          break;
        }
      bool by_l = recalled_by(lidar_dets[s].detections, gt, radius);
      bool by_c = recalled_by(camera_dets[s].detections, gt, radius);
      auto& cell = by_l && by_c ? out.both
                   : by_l      ? out.lidar_only
                   : by_c      ? out.camera_only
                               : out.neither;
      ++cell[static_cast<size_t>(gt.category)][static_cast<size_t>(ring)];
    }
  }
  return out;
}

inline std::string serialize_recall(const RecallBreakdown& r) {
  JsonWriter w;
  w.begin_object();
  w.kv("num_categories", r.num_categories);
  w.array("ring_edges_m", range_ring_edges());
  auto emit = [&](const char* name, const std::vector<std::vector<int>>& m) {
    w.key(name);
    w.begin_array();
    for (const auto& row : m) {
      w.begin_array();
      for (int v : row) w.value(v);
      w.end_array();
    }
    w.end_array();
  };
  emit("lidar_only", r.lidar_only);
  emit("camera_only", r.camera_only);
  emit("both", r.both);
  emit("neither", r.neither);
  w.end_object();
  return w.str();
}

}  // namespace sparsefuse::eval

#endif  // SPARSEFUSE_EVALMETRICS_HPP
