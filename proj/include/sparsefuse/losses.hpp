#ifndef SPARSEFUSE_LOSSES_HPP
#define SPARSEFUSE_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sparsefuse/nn/ops.hpp"

namespace sparsefuse::loss {

using nn::Tensor;
using nn::TensorPtr;

// ---------------------------------------------------------------------------
// Hungarian assignment (shortest augmenting path, O(n^2 m)). Matches
// min(n, m) pairs at minimum total cost.

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (row, col)
  std::vector<int> unmatched_rows;
  double total_cost = 0;
};

namespace detail {

// Requires rows <= cols. Returns col assignment per row.
inline std::vector<int> assign_rows(const std::vector<double>& cost, int n, int m) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(m) + 1, 0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = p[static_cast<size_t>(j0)], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = cost[static_cast<size_t>(i0 - 1) * m + (j - 1)] -
                     u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

// cost is row-major n x m; finite entries required.
inline MatchResult hungarian_match(const std::vector<double>& cost, int n, int m) {
  MatchResult res;
  if (n == 0 || m == 0) {
    for (int i = 0; i < n; ++i) res.unmatched_rows.push_back(i);
    return res;
  }
  for (double c : cost)
    if (!std::isfinite(c)) throw ConfigError("hungarian_match: non-finite cost");

  std::vector<int> row_to_col;
  if (n <= m) {
    row_to_col = detail::assign_rows(cost, n, m);
  } else {
    std::vector<double> t(cost.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) t[static_cast<size_t>(j) * n + i] = cost[static_cast<size_t>(i) * m + j];
    auto col_to_row = detail::assign_rows(t, m, n);
    row_to_col.assign(static_cast<size_t>(n), -1);
    for (int j = 0; j < m; ++j)
      if (col_to_row[static_cast<size_t>(j)] >= 0)
        row_to_col[static_cast<size_t>(col_to_row[static_cast<size_t>(j)])] = j;
  }
  for (int i = 0; i < n; ++i) {
    int j = row_to_col[static_cast<size_t>(i)];
    if (j >= 0) {
      res.pairs.emplace_back(i, j);
      res.total_cost += cost[static_cast<size_t>(i) * m + j];
    } else {
      res.unmatched_rows.push_back(i);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Penalty-reduced center-heatmap focal loss. `pred` holds probabilities in
// (0,1) (post-sigmoid); they are clamped to [1e-4, 1-1e-4] inside. Positives
// are cells where gt == 1 exactly; the loss is normalized by their count
// (floor 1).

inline TensorPtr gaussian_focal_loss(const TensorPtr& pred, const std::vector<double>& gt) {
  if (pred->values.size() != gt.size())
    throw ConfigError("gaussian_focal_loss: shape mismatch pred " + nn::shape_str(pred->shape));
  constexpr double lo = 1e-4, hi = 1.0 - 1e-4;
  int n_pos = 0;
  for (double g : gt)
    if (g == 1.0) ++n_pos;
  double norm = 1.0 / std::max(1, n_pos);

  auto out = nn::make_op({1}, {pred}, [pred, gt, norm](Tensor& self) {
    double seed = self.grad[0];
    for (size_t i = 0; i < gt.size(); ++i) {
      double p = pred->values[i];
      if (p <= lo || p >= hi) continue;  // clamp region: zero gradient
      double dcontrib;  // derivative of the (pre-negation) log-likelihood term
      if (gt[i] == 1.0) {
        double om = 1.0 - p;
        dcontrib = om * om / p - 2.0 * om * std::log(p);
      } else {
        double w = std::pow(1.0 - gt[i], 4.0);
        dcontrib = w * (2.0 * p * std::log(1.0 - p) - p * p / (1.0 - p));
      }
      pred->grad[i] += seed * (-dcontrib) * norm;
    }
  });

  double total = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    double p = std::clamp(pred->values[i], lo, hi);
    if (gt[i] == 1.0) {
      total += (1.0 - p) * (1.0 - p) * std::log(p);
    } else {
      total += std::pow(1.0 - gt[i], 4.0) * p * p * std::log(1.0 - p);
    }
  }
  out->values[0] = -total * norm;
  return out;
}

// ---------------------------------------------------------------------------
// Sigmoid focal classification loss for set prediction. target_class[i] is
// the matched category or -1 for background (all-zero target vector).
// Normalized by the number of matched queries (floor 1).

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

inline TensorPtr focal_classification_loss(const TensorPtr& logits,
                                           const std::vector<int>& target_class) {
  int n = logits->dim(0), k = logits->dim(1);
  if (static_cast<int>(target_class.size()) != n)
    throw ConfigError("focal_classification_loss: target count mismatch");
  int n_matched = 0;
  for (int t : target_class)
    if (t >= 0) ++n_matched;
  double norm = 1.0 / std::max(1, n_matched);

  auto out = nn::make_op({1}, {logits}, [logits, target_class, n, k, norm](Tensor& self) {
    double seed = self.grad[0];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        size_t idx = static_cast<size_t>(i) * k + j;
        double p = 1.0 / (1.0 + std::exp(-logits->values[idx]));
        p = std::clamp(p, 1e-6, 1.0 - 1e-6);
        bool pos = target_class[static_cast<size_t>(i)] == j;
        double dldp;
        if (pos) {
          dldp = kFocalAlpha *
                 (kFocalGamma * std::pow(1.0 - p, kFocalGamma - 1.0) * std::log(p) -
                  std::pow(1.0 - p, kFocalGamma) / p);
        } else {
          dldp = (1.0 - kFocalAlpha) *
                 (-kFocalGamma * std::pow(p, kFocalGamma - 1.0) * std::log(1.0 - p) +
                  std::pow(p, kFocalGamma) / (1.0 - p));
        }
        logits->grad[idx] += seed * dldp * p * (1.0 - p) * norm;
      }
  });

  double total = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      double p = 1.0 / (1.0 + std::exp(-logits->values[static_cast<size_t>(i) * k + j]));
      p = std::clamp(p, 1e-6, 1.0 - 1e-6);
      if (target_class[static_cast<size_t>(i)] == j)
        total += -kFocalAlpha * std::pow(1.0 - p, kFocalGamma) * std::log(p);
      else
        total += -(1.0 - kFocalAlpha) * std::pow(p, kFocalGamma) * std::log(1.0 - p);
    }
  out->values[0] = total * norm;
  return out;
}

// Plain focal value for one (logit row, class) pair; the matching cost uses
// pos_cost - neg_cost as in set-prediction matchers.
inline double focal_match_cost(const double* logit_row, int k, int cls) {
  double x = logit_row[cls];
  double p = std::clamp(1.0 / (1.0 + std::exp(-x)), 1e-6, 1.0 - 1e-6);
  double pos = -kFocalAlpha * std::pow(1.0 - p, kFocalGamma) * std::log(p);
  double neg = -(1.0 - kFocalAlpha) * std::pow(p, kFocalGamma) * std::log(1.0 - p);
  (void)k;
  return pos - neg;
}

// ---------------------------------------------------------------------------
// L1 loss over matched rows: sum |pred - gt| / max(1, n_rows).

inline TensorPtr l1_loss_rows(const TensorPtr& pred, const std::vector<int>& rows,
                              const std::vector<std::vector<double>>& targets) {
  int d = pred->dim(1);
  if (rows.size() != targets.size()) throw ConfigError("l1_loss_rows: row/target mismatch");
  double norm = 1.0 / std::max<size_t>(1, rows.size());

  auto out = nn::make_op({1}, {pred}, [pred, rows, targets, d, norm](Tensor& self) {
    double seed = self.grad[0];
    for (size_t r = 0; r < rows.size(); ++r)
      for (int j = 0; j < d; ++j) {
        size_t idx = static_cast<size_t>(rows[r]) * d + j;
        double diff = pred->values[idx] - targets[r][static_cast<size_t>(j)];
        double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        pred->grad[idx] += seed * s * norm;
      }
  });

  double total = 0;
  for (size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < d; ++j)
      total += std::abs(pred->values[static_cast<size_t>(rows[r]) * d + j] -
                        targets[r][static_cast<size_t>(j)]);
  out->values[0] = total * norm;
  return out;
}

// ---------------------------------------------------------------------------
// Set-prediction detection loss: Hungarian assignment on (focal class cost +
// L1 box cost), then focal classification with background targets for the
// unmatched queries plus L1 regression over the matched pairs.

struct DetectionLossResult {
  TensorPtr total;
  MatchResult match;  // rows = predictions, cols = ground truth
};

inline DetectionLossResult detection_loss(const TensorPtr& cls_logits, const TensorPtr& box_pred,
                                          const std::vector<int>& gt_class,
                                          const std::vector<std::vector<double>>& gt_box) {
  int n = cls_logits->dim(0), k = cls_logits->dim(1), d = box_pred->dim(1);
  int m = static_cast<int>(gt_class.size());
  if (box_pred->dim(0) != n) throw ConfigError("detection_loss: query count mismatch");

  std::vector<double> cost(static_cast<size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const double* lrow = cls_logits->values.data() + static_cast<size_t>(i) * k;
    const double* brow = box_pred->values.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < m; ++j) {
      double l1 = 0;
      for (int c = 0; c < d; ++c) l1 += std::abs(brow[c] - gt_box[static_cast<size_t>(j)][static_cast<size_t>(c)]);
      cost[static_cast<size_t>(i) * m + j] = focal_match_cost(lrow, k, gt_class[static_cast<size_t>(j)]) + l1;
    }
  }
  auto match = hungarian_match(cost, n, m);

  std::vector<int> targets(static_cast<size_t>(n), -1);
  std::vector<int> matched_rows;
  std::vector<std::vector<double>> matched_boxes;
  for (auto [i, j] : match.pairs) {
    targets[static_cast<size_t>(i)] = gt_class[static_cast<size_t>(j)];
    matched_rows.push_back(i);
    matched_boxes.push_back(gt_box[static_cast<size_t>(j)]);
  }

  DetectionLossResult res;
  res.match = std::move(match);
  auto cls = focal_classification_loss(cls_logits, targets);
  if (!matched_rows.empty()) {
    res.total = nn::add(cls, l1_loss_rows(box_pred, matched_rows, matched_boxes));
  } else {
    res.total = cls;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Full objective: total = alpha * l_init + beta * (gamma * l_cam + l_trans +
// l_lidar + l_fusion).

struct LossWeights {
  double alpha = 0.1, beta = 1.0, gamma = 1.0;
};

struct LossBreakdown {
  TensorPtr l_init;
  TensorPtr l_detect_camera, l_detect_trans, l_detect_lidar, l_detect_fusion;
  LossWeights weights;
  TensorPtr total;
};

inline TensorPtr zero_scalar() { return nn::make_tensor({1}); }

inline LossBreakdown total_loss(TensorPtr l_init, TensorPtr l_cam, TensorPtr l_trans,
                                TensorPtr l_lidar, TensorPtr l_fusion, LossWeights w) {
  LossBreakdown b;
  b.l_init = l_init ? l_init : zero_scalar();
  b.l_detect_camera = l_cam ? l_cam : zero_scalar();
  b.l_detect_trans = l_trans ? l_trans : zero_scalar();
  b.l_detect_lidar = l_lidar ? l_lidar : zero_scalar();
  b.l_detect_fusion = l_fusion ? l_fusion : zero_scalar();
  b.weights = w;
  auto detect = nn::add(nn::add(nn::scale(b.l_detect_camera, w.gamma), b.l_detect_trans),
                        nn::add(b.l_detect_lidar, b.l_detect_fusion));
  b.total = nn::add(nn::scale(b.l_init, w.alpha), nn::scale(detect, w.beta));
  return b;
}

}  // namespace sparsefuse::loss

#endif  // SPARSEFUSE_LOSSES_HPP
