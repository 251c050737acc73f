#ifndef SPARSEFUSE_FUSION_HPP
#define SPARSEFUSE_FUSION_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sparsefuse/detector.hpp"

namespace sparsefuse::fuse {

using det::DetSource;
using det::Detection;
using det::HeadOutput;
using det::HeadParams;
using det::QuerySet;
using det::QuerySpace;
using geom::Box3DCam;
using geom::Box3DLidar;
using geom::BevGrid;
using geom::CameraModel;
using nn::TensorPtr;

enum class Strategy { self_attention, mlp, cross_attention, optimal_transport };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::self_attention: return "self_attention";
    case Strategy::mlp: return "mlp";
    case Strategy::cross_attention: return "cross_attention";
    case Strategy::optimal_transport: return "optimal_transport";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "self_attention") return Strategy::self_attention;
  if (s == "mlp") return Strategy::mlp;
  if (s == "cross_attention") return Strategy::cross_attention;
  if (s == "optimal_transport") return Strategy::optimal_transport;
  throw ConfigError("unknown fusion strategy: " + s);
}

// ---------------------------------------------------------------------------
// View transformation (camera candidates into LiDAR space).
//
//   q^L = g(b^L) + h(q^P * m(R, t, K))
//
// g embeds the decoded-and-transformed box (treated as data: the regression
// heads already receive direct box supervision), m embeds the flattened
// 21-dim camera parameters and gates the instance feature elementwise, h
// re-encodes the gated feature. A self-attention + FFN pass aggregates the
// multi-view set; its positional input is the 4-vector (image center,
// BEV center), both normalized.

struct ViewTransformParams {
  nn::MlpModule g;     // 10 -> C
  nn::MlpModule m;     // 21 -> C
  nn::MlpModule h;     // C -> C
  nn::MlpModule pos4;  // 4 -> C
  nn::AttentionParams attn;
  nn::NormModule ln;
  nn::FfnModule ffn;
  HeadParams head;  // LiDAR-view head for the transformed candidates
};

inline ViewTransformParams add_view_transform(nn::ParamStore& s, const std::string& p, int c,
                                              int heads, int num_categories, Rng& rng) {
  ViewTransformParams v;
  v.g = nn::add_mlp(s, p + ".g", 10, c, c, rng);
  v.m = nn::add_mlp(s, p + ".m", 21, c, c, rng);
  v.h = nn::add_mlp(s, p + ".h", c, c, c, rng);
  v.pos4 = nn::add_mlp(s, p + ".pos4", 4, c, c, rng);
  v.attn = nn::add_attention(s, p + ".attn", c, heads, rng);
  v.ln = nn::add_norm(s, p + ".ln", c, rng);
  v.ffn = nn::add_ffn(s, p + ".ffn", c, 2, rng);
  v.head = det::add_head(s, p + ".head", c, num_categories, rng);
  return v;
}

struct ViewTransformResult {
  QuerySet queries;                  // Q_C in BEV space
  std::vector<Box3DCam> cam_boxes;   // decoded b^P per query
  std::vector<Box3DLidar> lidar_boxes;  // b^L per query
  std::vector<bool> depth_clamped;
};

inline ViewTransformResult view_transform(const QuerySet& q_cp, const HeadOutput& persp_head,
                                          const std::vector<CameraModel>& cams,
                                          const BevGrid& grid, const ViewTransformParams& p) {
  int n = q_cp.count();
  ViewTransformResult res;

  std::vector<double> g_in(static_cast<size_t>(n) * 10);
  std::vector<double> m_in(static_cast<size_t>(n) * 21);
  std::vector<double> pos_in(static_cast<size_t>(n) * 4);
  for (int i = 0; i < n; ++i) {
    const auto& cam = cams[static_cast<size_t>(q_cp.view_ids[static_cast<size_t>(i)])];
    auto dec = det::decode_cam_box_row(
        persp_head.box_vec->values.data() + static_cast<size_t>(i) * 10, cam);
    Box3DLidar bl = geom::box_cam_to_lidar(dec.box, cam);
    res.cam_boxes.push_back(dec.box);
    res.lidar_boxes.push_back(bl);
    res.depth_clamped.push_back(dec.depth_clamped);

    auto enc = det::encode_gt_lidar(bl);
    std::copy(enc.begin(), enc.end(), g_in.begin() + static_cast<size_t>(i) * 10);
    for (int j = 0; j < 9; ++j) {
      m_in[static_cast<size_t>(i) * 21 + j] = cam.rotation.m[static_cast<size_t>(j)];
      m_in[static_cast<size_t>(i) * 21 + 12 + j] = cam.intrinsics.m[static_cast<size_t>(j)] /
                                                   std::max(1, cam.image_width);
    }
    m_in[static_cast<size_t>(i) * 21 + 9] = cam.translation.x / 10.0;
    m_in[static_cast<size_t>(i) * 21 + 10] = cam.translation.y / 10.0;
    m_in[static_cast<size_t>(i) * 21 + 11] = cam.translation.z / 10.0;

    pos_in[static_cast<size_t>(i) * 4] =
        persp_head.box_vec->values[static_cast<size_t>(i) * 10] / cam.image_width;
    pos_in[static_cast<size_t>(i) * 4 + 1] =
        persp_head.box_vec->values[static_cast<size_t>(i) * 10 + 1] / cam.image_height;
    pos_in[static_cast<size_t>(i) * 4 + 2] = (bl.center.x - grid.x_min) / (grid.x_max - grid.x_min);
    pos_in[static_cast<size_t>(i) * 4 + 3] = (bl.center.y - grid.y_min) / (grid.y_max - grid.y_min);
  }

  auto g_emb = p.g(nn::make_tensor({n, 10}, std::move(g_in)));
  auto m_emb = p.m(nn::make_tensor({n, 21}, std::move(m_in)));
  auto q_l = nn::add(g_emb, p.h(nn::mul(q_cp.features, m_emb)));

  auto pos = p.pos4(nn::make_tensor({n, 4}, std::move(pos_in)));
  auto sa = nn::self_attention(p.ln.rows(q_l), pos, p.attn);
  auto x = p.ffn(nn::add(q_l, sa.out));

  res.queries.features = x;
  res.queries.space = QuerySpace::bev;
  res.queries.categories = q_cp.categories;
  res.queries.view_ids = q_cp.view_ids;
  res.queries.scores = q_cp.scores;
  res.queries.ref_points.reserve(static_cast<size_t>(n));
  for (const auto& b : res.lidar_boxes)
    res.queries.ref_points.push_back({b.center.x, b.center.y});
  return res;
}

// ---------------------------------------------------------------------------
// Candidate projectors f_L, f_C: fully-connected layer + layer norm.

struct ProjectorParams {
  nn::LinearModule fc;
  nn::NormModule ln;
  TensorPtr operator()(const TensorPtr& x) const { return ln.rows(fc(x)); }
};

inline ProjectorParams add_projector(nn::ParamStore& s, const std::string& p, int c, Rng& rng) {
  return {nn::add_linear(s, p + ".fc", c, c, rng), nn::add_norm(s, p + ".ln", c, rng)};
}

struct FusionResult {
  std::vector<Detection> detections;
  HeadOutput head;                 // for the fusion loss
  std::vector<geom::Vec2> refs;    // BEV reference points of the fused set
  std::vector<double> attention;   // head-averaged weights, |dets| x n_src
  int n_sources = 0;
};

// ---------------------------------------------------------------------------
// Self-attention fusion (the method's default): project, concatenate to
// N_L + N_C, one self-attention + FFN pass, LiDAR-view head.

struct SelfAttentionFusionParams {
  ProjectorParams f_l, f_c;
  nn::MlpModule pos_mlp;  // grid-normalized BEV XY -> C
  nn::AttentionParams attn;
  nn::NormModule ln;
  nn::FfnModule ffn;
  HeadParams head;
};

inline SelfAttentionFusionParams add_self_attention_fusion(nn::ParamStore& s,
                                                           const std::string& p, int c, int heads,
                                                           int num_categories, Rng& rng) {
  SelfAttentionFusionParams f;
  f.f_l = add_projector(s, p + ".fl", c, rng);
  f.f_c = add_projector(s, p + ".fc", c, rng);
  f.pos_mlp = nn::add_mlp(s, p + ".pos", 2, c, c, rng);
  f.attn = nn::add_attention(s, p + ".attn", c, heads, rng);
  f.ln = nn::add_norm(s, p + ".ln", c, rng);
  f.ffn = nn::add_ffn(s, p + ".ffn", c, 2, rng);
  f.head = det::add_head(s, p + ".head", c, num_categories, rng);
  return f;
}

inline FusionResult fuse_self_attention(const QuerySet& q_l, const QuerySet& q_c,
                                        const BevGrid& grid,
                                        const SelfAttentionFusionParams& p) {
  int n_l = q_l.count(), n_c = q_c.count();
  auto x = nn::concat_rows({p.f_l(q_l.features), p.f_c(q_c.features)});

  QuerySet fused;
  fused.features = x;
  fused.space = QuerySpace::bev;
  fused.ref_points = q_l.ref_points;
  fused.ref_points.insert(fused.ref_points.end(), q_c.ref_points.begin(), q_c.ref_points.end());

  auto pos = p.pos_mlp(det::bev_normalized_points(fused.ref_points, grid));
  auto sa = nn::self_attention(p.ln.rows(x), pos, p.attn);
  fused.features = p.ffn(nn::add(x, sa.out));

  FusionResult res;
  res.head = det::head_lidar_view(fused, p.head);
  res.refs = fused.ref_points;
  res.detections = det::decode_lidar_detections(res.head, DetSource::fused);
  for (int i = 0; i < n_l + n_c; ++i)
    res.detections[static_cast<size_t>(i)].source = i < n_l ? DetSource::lidar : DetSource::camera;

  int n = n_l + n_c;
  res.n_sources = n;
  res.attention.assign(static_cast<size_t>(n) * n, 0.0);
  for (const auto& wt : sa.weights)
    for (size_t i = 0; i < wt->values.size(); ++i)
      res.attention[i] += wt->values[i] / static_cast<double>(sa.weights.size());
  return res;
}

// ---------------------------------------------------------------------------
// MLP fusion: per-candidate feed-forward, no cross-instance aggregation.

struct MlpFusionParams {
  ProjectorParams f_l, f_c;
  nn::MlpModule mlp;
  HeadParams head;
};

inline MlpFusionParams add_mlp_fusion(nn::ParamStore& s, const std::string& p, int c,
                                      int num_categories, Rng& rng) {
  return {add_projector(s, p + ".fl", c, rng), add_projector(s, p + ".fc", c, rng),
          nn::add_mlp(s, p + ".mlp", c, 2 * c, c, rng),
          det::add_head(s, p + ".head", c, num_categories, rng)};
}

inline FusionResult fuse_mlp(const QuerySet& q_l, const QuerySet& q_c,
                             const MlpFusionParams& p) {
  int n_l = q_l.count(), n_c = q_c.count();
  auto x = nn::concat_rows({p.f_l(q_l.features), p.f_c(q_c.features)});
  QuerySet fused;
  fused.features = p.mlp(x);
  fused.space = QuerySpace::bev;
  fused.ref_points = q_l.ref_points;
  fused.ref_points.insert(fused.ref_points.end(), q_c.ref_points.begin(), q_c.ref_points.end());

  FusionResult res;
  res.head = det::head_lidar_view(fused, p.head);
  res.refs = fused.ref_points;
  res.detections = det::decode_lidar_detections(res.head, DetSource::fused);
  for (int i = 0; i < n_l + n_c; ++i)
    res.detections[static_cast<size_t>(i)].source = i < n_l ? DetSource::lidar : DetSource::camera;
  return res;
}

// ---------------------------------------------------------------------------
// Cross-attention fusion: LiDAR candidates query the camera candidates.

struct CrossAttentionFusionParams {
  ProjectorParams f_l, f_c;
  nn::MlpModule pos_mlp;
  nn::AttentionParams attn;
  nn::NormModule ln;
  nn::FfnModule ffn;
  HeadParams head;
};

inline CrossAttentionFusionParams add_cross_attention_fusion(nn::ParamStore& s,
                                                             const std::string& p, int c,
                                                             int heads, int num_categories,
                                                             Rng& rng) {
  CrossAttentionFusionParams f;
  f.f_l = add_projector(s, p + ".fl", c, rng);
  f.f_c = add_projector(s, p + ".fc", c, rng);
  f.pos_mlp = nn::add_mlp(s, p + ".pos", 2, c, c, rng);
  f.attn = nn::add_attention(s, p + ".attn", c, heads, rng);
  f.ln = nn::add_norm(s, p + ".ln", c, rng);
  f.ffn = nn::add_ffn(s, p + ".ffn", c, 2, rng);
  f.head = det::add_head(s, p + ".head", c, num_categories, rng);
  return f;
}

inline FusionResult fuse_cross_attention(const QuerySet& q_l, const QuerySet& q_c,
                                         const BevGrid& grid,
                                         const CrossAttentionFusionParams& p) {
  auto ql = p.f_l(q_l.features);
  auto qc = p.f_c(q_c.features);
  auto pos_q = p.pos_mlp(det::bev_normalized_points(q_l.ref_points, grid));
  auto pos_kv = p.pos_mlp(det::bev_normalized_points(q_c.ref_points, grid));
  auto ca = nn::multi_head_attention(p.ln.rows(ql), qc, pos_q, pos_kv, p.attn);
  QuerySet fused;
  fused.features = p.ffn(nn::add(ql, ca.out));
  fused.space = QuerySpace::bev;
  fused.ref_points = q_l.ref_points;

  FusionResult res;
  res.head = det::head_lidar_view(fused, p.head);
  res.refs = fused.ref_points;
  res.detections = det::decode_lidar_detections(res.head, DetSource::fused);
  res.n_sources = q_c.count();
  res.attention.assign(static_cast<size_t>(q_l.count()) * q_c.count(), 0.0);
  for (const auto& wt : ca.weights)
    for (size_t i = 0; i < wt->values.size(); ++i)
      res.attention[i] += wt->values[i] / static_cast<double>(ca.weights.size());
  return res;
}

// ---------------------------------------------------------------------------
// IPOT optimal transport. Proximal-point iterations on the exact transport
// objective; each outer step multiplies the running plan by exp(-C/beta) and
// rebalances with Sinkhorn sweeps until the inner row residual drops below
// 1e-7 (the single-sweep variant stalls far above the required marginal
// accuracy; see the solver tests). Costs are max-normalized internally, which
// leaves the optimal plan unchanged.

struct TransportPlan {
  int n_l = 0, n_c = 0;
  std::vector<double> plan;       // T*, row-major n_l x n_c
  std::vector<double> row_normalized;  // T-hat, rows sum to 1
  std::vector<double> p_l, p_c;   // marginals
  std::vector<double> cost;       // as given (meters)

  double marginal_l1_error() const {
    double err = 0;
    for (int i = 0; i < n_l; ++i) {
      double s = 0;
      for (int j = 0; j < n_c; ++j) s += plan[static_cast<size_t>(i) * n_c + j];
      err += std::abs(s - p_l[static_cast<size_t>(i)]);
    }
    for (int j = 0; j < n_c; ++j) {
      double s = 0;
      for (int i = 0; i < n_l; ++i) s += plan[static_cast<size_t>(i) * n_c + j];
      err += std::abs(s - p_c[static_cast<size_t>(j)]);
    }
    return err;
  }

  double transport_cost() const {
    double s = 0;
    for (size_t i = 0; i < plan.size(); ++i) s += plan[i] * cost[i];
    return s;
  }
};

inline constexpr int kIpotDefaultIters = 50;

inline TransportPlan ipot_solve(const std::vector<double>& cost, const std::vector<double>& p_l,
                                const std::vector<double>& p_c, int iters = kIpotDefaultIters) {
  int n = static_cast<int>(p_l.size()), m = static_cast<int>(p_c.size());
  if (cost.size() != static_cast<size_t>(n) * m) throw ConfigError("ipot: cost shape mismatch");
  auto check_simplex = [](const std::vector<double>& v, const char* name) {
    double s = 0;
    for (double x : v) {
      if (x < -1e-12 || !std::isfinite(x))
        throw ConfigError(std::string("ipot: ") + name + " has negative or non-finite mass");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-8)
      throw ConfigError(std::string("ipot: ") + name + " is not on the simplex (sum " +
                        std::to_string(s) + ")");
  };
  check_simplex(p_l, "p_L");
  check_simplex(p_c, "p_C");
  for (double c : cost)
    if (!std::isfinite(c) || c < 0) throw ConfigError("ipot: cost must be finite nonnegative");

  double cmax = 0;
  for (double c : cost) cmax = std::max(cmax, c);
  double inv_cmax = cmax > 0 ? 1.0 / cmax : 1.0;

  std::vector<double> G(cost.size());
  for (size_t i = 0; i < cost.size(); ++i) G[i] = std::exp(-cost[i] * inv_cmax);

  std::vector<double> T(cost.size(), 1.0 / (static_cast<double>(n) * m));
  std::vector<double> a(static_cast<size_t>(n), 1.0), b(static_cast<size_t>(m), 1.0);
  std::vector<double> Q(cost.size()), qb(static_cast<size_t>(n)), qta(static_cast<size_t>(m));

  constexpr int kMaxInnerSweeps = 200;
  constexpr double kInnerTol = 1e-7;
  for (int it = 0; it < iters; ++it) {
    for (size_t i = 0; i < Q.size(); ++i) Q[i] = G[i] * T[i];
    std::fill(b.begin(), b.end(), 1.0);
    for (int sweep = 0; sweep < kMaxInnerSweeps; ++sweep) {
      for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < m; ++j) s += Q[static_cast<size_t>(i) * m + j] * b[static_cast<size_t>(j)];
        a[static_cast<size_t>(i)] = p_l[static_cast<size_t>(i)] / std::max(s, 1e-300);
      }
      for (int j = 0; j < m; ++j) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += Q[static_cast<size_t>(i) * m + j] * a[static_cast<size_t>(i)];
        qta[static_cast<size_t>(j)] = s;
        b[static_cast<size_t>(j)] = p_c[static_cast<size_t>(j)] / std::max(s, 1e-300);
      }
      double resid = 0;
      for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < m; ++j) s += Q[static_cast<size_t>(i) * m + j] * b[static_cast<size_t>(j)];
        resid += std::abs(a[static_cast<size_t>(i)] * s - p_l[static_cast<size_t>(i)]);
      }
      if (resid < kInnerTol) break;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        T[static_cast<size_t>(i) * m + j] =
            a[static_cast<size_t>(i)] * Q[static_cast<size_t>(i) * m + j] * b[static_cast<size_t>(j)];
  }

  TransportPlan plan;
  plan.n_l = n;
  plan.n_c = m;
  plan.plan = T;
  plan.p_l = p_l;
  plan.p_c = p_c;
  plan.cost = cost;
  plan.row_normalized.assign(T.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < m; ++j) s += T[static_cast<size_t>(i) * m + j];
    double inv = s > 0 ? 1.0 / s : 0.0;
    for (int j = 0; j < m; ++j)
      plan.row_normalized[static_cast<size_t>(i) * m + j] = T[static_cast<size_t>(i) * m + j] * inv;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Optimal-transport fusion: marginals from branch confidences, cost from BEV
// center distances, then channel-wise concat [Q_L | T-hat Q_C] -> FFN -> head.

struct OtFusionParams {
  nn::MlpModule mix;  // 2C -> 2C -> C
  HeadParams head;
};

inline OtFusionParams add_ot_fusion(nn::ParamStore& s, const std::string& p, int c,
                                    int num_categories, Rng& rng) {
  return {nn::add_mlp(s, p + ".mix", 2 * c, 2 * c, c, rng),
          det::add_head(s, p + ".head", c, num_categories, rng)};
}

struct OtFusionResult {
  FusionResult fusion;
  TransportPlan plan;
};

inline OtFusionResult fuse_optimal_transport(const QuerySet& q_l, const QuerySet& q_c,
                                             const std::vector<double>& scores_l,
                                             const std::vector<double>& scores_c,
                                             const OtFusionParams& p) {
  int n_l = q_l.count(), n_c = q_c.count();
  auto normalize = [](std::vector<double> v) {
    double s = 0;
    for (double& x : v) {
      x = std::max(x, 1e-9);
      s += x;
    }
    for (double& x : v) x /= s;
    return v;
  };
  auto p_l = normalize(scores_l);
  auto p_c = normalize(scores_c);

  std::vector<double> cost(static_cast<size_t>(n_l) * n_c);
  for (int i = 0; i < n_l; ++i)
    for (int j = 0; j < n_c; ++j) {
      double dx = q_l.ref_points[static_cast<size_t>(i)].x - q_c.ref_points[static_cast<size_t>(j)].x;
      double dy = q_l.ref_points[static_cast<size_t>(i)].y - q_c.ref_points[static_cast<size_t>(j)].y;
      cost[static_cast<size_t>(i) * n_c + j] = std::sqrt(dx * dx + dy * dy);
    }

  OtFusionResult res;
  res.plan = ipot_solve(cost, p_l, p_c);

  auto t_hat = nn::make_tensor({n_l, n_c}, res.plan.row_normalized);
  auto weighted = nn::matmul(t_hat, q_c.features);  // plan treated as weights
  QuerySet fused;
  fused.features = p.mix(nn::concat_cols(q_l.features, weighted));
  fused.space = QuerySpace::bev;
  fused.ref_points = q_l.ref_points;

  res.fusion.head = det::head_lidar_view(fused, p.head);
  res.fusion.refs = fused.ref_points;
  res.fusion.detections = det::decode_lidar_detections(res.fusion.head, DetSource::fused);
  res.fusion.n_sources = n_c;
  res.fusion.attention = res.plan.row_normalized;
  return res;
}

// ---------------------------------------------------------------------------
// Sequential-pipeline ablation: the camera stage runs after the LiDAR
// detector and consumes its 3D positions; `inherit_feat` also passes the
// LiDAR instance features through, `reinit_feat` refetches image features at
// the projected centers instead. One decoder layer against pooled image
// tokens, then a LiDAR-view head.

enum class SequentialMode { inherit_feat, reinit_feat };

struct SequentialParams {
  nn::LinearModule feat_proj;  // C -> C (inherit path)
  nn::LinearModule img_proj;   // C_pyr -> C (token + reinit path)
  nn::MlpModule pos3;          // normalized (x, y, z) -> C
  nn::MlpModule img_pos;       // normalized image XY -> C
  nn::AttentionParams self_attn, cross_attn;
  nn::NormModule ln1, ln2;
  nn::FfnModule ffn;
  HeadParams head;
  int token_level = 1;  // pyramid level used as cross-attention tokens
};

inline SequentialParams add_sequential(nn::ParamStore& s, const std::string& p, int c, int c_pyr,
                                       int heads, int num_categories, Rng& rng) {
  SequentialParams q;
  q.feat_proj = nn::add_linear(s, p + ".feat", c, c, rng);
  q.img_proj = nn::add_linear(s, p + ".img", c_pyr, c, rng);
  q.pos3 = nn::add_mlp(s, p + ".pos3", 3, c, c, rng);
  q.img_pos = nn::add_mlp(s, p + ".imgpos", 2, c, c, rng);
  q.self_attn = nn::add_attention(s, p + ".self", c, heads, rng);
  q.cross_attn = nn::add_attention(s, p + ".cross", c, heads, rng);
  q.ln1 = nn::add_norm(s, p + ".ln1", c, rng);
  q.ln2 = nn::add_norm(s, p + ".ln2", c, rng);
  q.ffn = nn::add_ffn(s, p + ".ffn", c, 2, rng);
  q.head = det::add_head(s, p + ".head", c, num_categories, rng);
  return q;
}

struct SequentialResult {
  FusionResult fusion;
  std::vector<geom::Vec3> positions;  // the 3D positions handed to the stage
};

inline SequentialResult sequential_variant(const QuerySet& q_l,
                                           const std::vector<Box3DLidar>& lidar_boxes,
                                           const std::vector<transfer::FeaturePyramid>& pyramids,
                                           const std::vector<CameraModel>& cams,
                                           const BevGrid& grid, SequentialMode mode,
                                           const SequentialParams& p) {
  int n = q_l.count();
  SequentialResult res;

  std::vector<double> pos_in(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    const auto& b = lidar_boxes[static_cast<size_t>(i)];
    res.positions.push_back(b.center);
    pos_in[static_cast<size_t>(i) * 3] = (b.center.x - grid.x_min) / (grid.x_max - grid.x_min);
    pos_in[static_cast<size_t>(i) * 3 + 1] = (b.center.y - grid.y_min) / (grid.y_max - grid.y_min);
    pos_in[static_cast<size_t>(i) * 3 + 2] = b.center.z / 3.0;
  }
  auto pos = p.pos3(nn::make_tensor({n, 3}, std::move(pos_in)));

  TensorPtr feat;
  if (mode == SequentialMode::inherit_feat) {
    feat = p.feat_proj(q_l.features);
  } else {
    // Refetch from the image: bilinear sample at the projected center of the
    // first view that sees it; zeros elsewhere.
    std::vector<TensorPtr> rows;
    int lvl_idx = p.token_level;
    for (int i = 0; i < n; ++i) {
      TensorPtr row;
      for (size_t v = 0; v < cams.size(); ++v) {
        auto ip = geom::project_lidar_to_image(res.positions[static_cast<size_t>(i)], cams[v]);
        if (!ip || !geom::in_image(*ip, cams[v])) continue;
        auto coord = nn::make_tensor({1, 2}, {ip->u / cams[v].image_width,
                                              ip->v / cams[v].image_height});
        row = nn::bilinear_sample(pyramids[v].levels[static_cast<size_t>(lvl_idx)], coord);
        break;
      }
      if (!row) row = nn::make_tensor({1, pyramids[0].levels[static_cast<size_t>(lvl_idx)]->dim(0)});
      rows.push_back(row);
    }
    feat = p.img_proj(nn::concat_rows(rows));
  }

  // Image tokens: one pooled level across all views.
  std::vector<TensorPtr> token_parts;
  std::vector<double> token_pos;
  for (size_t v = 0; v < pyramids.size(); ++v) {
    const auto& lvl = pyramids[v].levels[static_cast<size_t>(p.token_level)];
    token_parts.push_back(nn::chw_to_rows(lvl));
    int h = lvl->dim(1), w = lvl->dim(2);
    for (int row = 0; row < h; ++row)
      for (int col = 0; col < w; ++col) {
        token_pos.push_back((col + 0.5) / w);
        token_pos.push_back((row + 0.5) / h);
      }
  }
  auto tokens = p.img_proj(nn::concat_rows(token_parts));
  auto tok_pos = p.img_pos(
      nn::make_tensor({tokens->dim(0), 2}, std::move(token_pos)));

  auto sa = nn::self_attention(p.ln1.rows(feat), pos, p.self_attn);
  auto x = nn::add(feat, sa.out);
  auto ca = nn::multi_head_attention(p.ln2.rows(x), tokens, pos, tok_pos, p.cross_attn);
  x = p.ffn(nn::add(x, ca.out));

  QuerySet out;
  out.features = x;
  out.space = QuerySpace::bev;
  for (const auto& b : lidar_boxes) out.ref_points.push_back({b.center.x, b.center.y});

  res.fusion.head = det::head_lidar_view(out, p.head);
  res.fusion.refs = out.ref_points;
  res.fusion.detections = det::decode_lidar_detections(res.fusion.head, DetSource::fused);
  return res;
}

}  // namespace sparsefuse::fuse

#endif  // SPARSEFUSE_FUSION_HPP
