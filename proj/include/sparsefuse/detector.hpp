#ifndef SPARSEFUSE_DETECTOR_HPP
#define SPARSEFUSE_DETECTOR_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sparsefuse/backbones.hpp"
#include "sparsefuse/losses.hpp"
#include "sparsefuse/transfer.hpp"

namespace sparsefuse::det {

using geom::Box3DCam;
using geom::Box3DLidar;
using geom::BevGrid;
using geom::CameraModel;
using geom::Vec2;
using geom::Vec3;
using nn::TensorPtr;
using scene::ObjectSpec;
using transfer::BevFeatureMap;
using transfer::FeaturePyramid;

enum class QuerySpace { bev, perspective };

// Instance-level candidates: one feature row, reference point, and category
// per hypothesized object. BEV sets use meters, perspective sets normalized
// image coordinates plus a view id.
struct QuerySet {
  TensorPtr features;  // N x C
  std::vector<Vec2> ref_points;
  std::vector<int> categories;
  std::vector<int> view_ids;
  std::vector<double> scores;  // heatmap confidence at selection
  QuerySpace space = QuerySpace::bev;

  int count() const { return features ? features->dim(0) : 0; }
};

enum class DetSource { lidar, camera, fused };

struct Detection {
  int category = 0;
  double score = 0;
  Box3DLidar box;
  DetSource source = DetSource::fused;
};

// ---------------------------------------------------------------------------
// Ground-truth heatmaps. Gaussians are evaluated on integer cell offsets from
// the integer center cell, so the center cell holds exactly 1. Per-object
// maps combine with an elementwise max. sigma = max(l, w) / (6 * cell_size),
// floored at one cell.

inline double heatmap_sigma_cells(double max_side_m, double cell_size) {
  return std::max(1.0, max_side_m / (6.0 * cell_size));
}

inline void splat_gaussian(std::vector<double>& map, int h, int w, int k, int cx, int cy,
                           double sigma) {
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = std::max(0, cy - radius); y <= std::min(h - 1, cy + radius); ++y)
    for (int x = std::max(0, cx - radius); x <= std::min(w - 1, cx + radius); ++x) {
      double d2 = static_cast<double>(x - cx) * (x - cx) + static_cast<double>(y - cy) * (y - cy);
      double v = std::exp(-d2 * inv);
      size_t idx = (static_cast<size_t>(k) * h + y) * w + x;
      map[idx] = std::max(map[idx], v);
    }
}

// K x H x W category-wise BEV center heatmap.
inline std::vector<double> splat_gt_heatmap(const std::vector<ObjectSpec>& objects,
                                            const BevGrid& grid, int num_categories) {
  std::vector<double> map(static_cast<size_t>(num_categories) * grid.height * grid.width, 0.0);
  for (const auto& obj : objects) {
    auto cell = geom::bev_cell_of({obj.box.center.x, obj.box.center.y}, grid);
    if (!cell) continue;
    double sigma = heatmap_sigma_cells(std::max(obj.box.size.x, obj.box.size.y), grid.resolution);
    splat_gaussian(map, grid.height, grid.width, obj.category, cell->col, cell->row, sigma);
  }
  return map;
}

// FCOS-style level assignment: thresholds t0 < t1 < ... (implicit +inf tail);
// an object whose projected max side lies in [t_i, t_{i+1}) goes to level i.
inline int fcos_level(double max_side_px, const std::vector<double>& thresholds) {
  int level = static_cast<int>(thresholds.size()) - 1;
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (max_side_px < thresholds[i]) {
      level = static_cast<int>(i) - 1;
      break;
    }
  return level;
}

struct ImageGtHeatmaps {
  // per view, per level: K x H_l x W_l
  std::vector<std::vector<std::vector<double>>> maps;
};

struct ImageObjectAssignment {
  int view = 0, level = 0;
  double center_u = 0, center_v = 0;  // full-res pixels
  double max_side_px = 0;
};

inline std::vector<ImageObjectAssignment> assign_objects_to_images(
    const std::vector<ObjectSpec>& objects, const std::vector<CameraModel>& cams,
    const std::vector<double>& thresholds, int obj_index) {
  std::vector<ImageObjectAssignment> out;
  const auto& obj = objects[static_cast<size_t>(obj_index)];
  for (size_t v = 0; v < cams.size(); ++v) {
    auto center = geom::project_lidar_to_image(obj.box.center, cams[v]);
    if (!center || !geom::in_image(*center, cams[v])) continue;
    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    for (const auto& c : geom::box_corners(obj.box)) {
      auto cp = geom::project_lidar_to_image(c, cams[v]);
      if (!cp) continue;
      umin = std::min(umin, cp->u);
      umax = std::max(umax, cp->u);
      vmin = std::min(vmin, cp->v);
      vmax = std::max(vmax, cp->v);
    }
    if (umax < umin) continue;
    ImageObjectAssignment a;
    a.view = static_cast<int>(v);
    a.max_side_px = std::max(umax - umin, vmax - vmin);
    a.level = fcos_level(a.max_side_px, thresholds);
    a.center_u = center->u;
    a.center_v = center->v;
    out.push_back(a);
  }
  return out;
}

// GT heatmaps live only at each object's assigned level.
inline ImageGtHeatmaps splat_image_gt_heatmaps(const std::vector<ObjectSpec>& objects,
                                               const std::vector<CameraModel>& cams,
                                               const std::vector<FeaturePyramid>& pyramids,
                                               const std::vector<double>& thresholds,
                                               int num_categories) {
  ImageGtHeatmaps gt;
  gt.maps.resize(cams.size());
  for (size_t v = 0; v < cams.size(); ++v) {
    gt.maps[v].resize(pyramids[v].levels.size());
    for (size_t l = 0; l < pyramids[v].levels.size(); ++l) {
      const auto& lvl = pyramids[v].levels[l];
      gt.maps[v][l].assign(static_cast<size_t>(num_categories) * lvl->dim(1) * lvl->dim(2), 0.0);
    }
  }
  for (size_t i = 0; i < objects.size(); ++i) {
    for (const auto& a : assign_objects_to_images(objects, cams, thresholds,
                                                  static_cast<int>(i))) {
      const auto& lvl = pyramids[static_cast<size_t>(a.view)].levels[static_cast<size_t>(a.level)];
      int h = lvl->dim(1), w = lvl->dim(2);
      double stride = static_cast<double>(cams[static_cast<size_t>(a.view)].image_width) / w;
      int cx = std::min(w - 1, static_cast<int>(a.center_u / stride));
      int cy = std::min(h - 1, static_cast<int>(a.center_v / stride));
      double sigma = std::max(1.0, a.max_side_px / stride / 6.0);
      splat_gaussian(gt.maps[static_cast<size_t>(a.view)][static_cast<size_t>(a.level)], h, w,
                     objects[i].category, cx, cy, sigma);
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Dense heatmap heads: two 3x3 convolutions.

struct HeatmapHeadParams {
  nn::ConvModule c1, c2, c3;
};

// Output biases start at the focal prior (p ~ 0.12) so the first epochs are
// not spent pushing the dense background down from p = 0.5.
inline constexpr double kFocalPriorBias = -2.0;

inline HeatmapHeadParams add_heatmap_head(nn::ParamStore& s, const std::string& p, int cin,
                                          int num_categories, Rng& rng) {
  HeatmapHeadParams h{nn::add_conv3x3(s, p + ".c1", cin, 24, rng),
                      nn::add_conv3x3(s, p + ".c2", 24, 24, rng),
                      nn::add_conv3x3(s, p + ".c3", 24, num_categories, rng)};
  for (auto& v : h.c3.b->values) v = kFocalPriorBias;
  return h;
}

inline TensorPtr heatmap_head_forward(const TensorPtr& fmap, const HeatmapHeadParams& p) {
  auto x = nn::relu(nn::conv3x3(fmap, p.c1.w, p.c1.b, 1));
  x = nn::relu(nn::conv3x3(x, p.c2.w, p.c2.b, 1));
  return nn::conv3x3(x, p.c3.w, p.c3.b, 1);
}

// ---------------------------------------------------------------------------
// Top-N selection with deterministic tie-breaking on the flattened index.

struct HeatmapPeak {
  double conf = 0;
  int cat = 0;
  int order = 0;  // flattened (view, level, row, col) enumeration index
  int view = 0, level = 0, row = 0, col = 0;
};

inline void select_top_n(std::vector<HeatmapPeak>& peaks, int n) {
  std::sort(peaks.begin(), peaks.end(), [](const HeatmapPeak& a, const HeatmapPeak& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    return a.order < b.order;
  });
  peaks.resize(static_cast<size_t>(n));
}

struct LidarInitResult {
  QuerySet queries;       // Q_L^0
  TensorPtr heatmap_probs;  // sigmoid logits, K x H x W (graph-connected)
};

// Queries come from the semantic-aware heatmap; features are the projected
// 3x3 local patch of the raw BEV map plus the category embedding.
inline LidarInitResult init_queries_lidar(const BevFeatureMap& f_sem, const BevFeatureMap& f_raw,
                                          const HeatmapHeadParams& head,
                                          const nn::LinearModule& local_proj,
                                          const TensorPtr& category_embedding, int n_queries) {
  const auto& grid = f_sem.grid;
  int h = grid.height, w = grid.width;
  if (n_queries > h * w)
    throw ConfigError("init_queries_lidar: N_L exceeds BEV cell count");
  auto probs = nn::sigmoid(heatmap_head_forward(f_sem.map, head));
  int k = probs->dim(0);

  std::vector<HeatmapPeak> peaks;
  peaks.reserve(static_cast<size_t>(h) * w);
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      HeatmapPeak pk;
      pk.order = row * w + col;
      pk.row = row;
      pk.col = col;
      for (int c = 0; c < k; ++c) {
        double v = probs->values[(static_cast<size_t>(c) * h + row) * w + col];
        if (v > pk.conf) {
          pk.conf = v;
          pk.cat = c;
        }
      }
      peaks.push_back(pk);
    }
  select_top_n(peaks, n_queries);

  std::vector<int> cats;
  LidarInitResult res;
  auto raw_rows = nn::chw_to_rows(f_raw.map);
  TensorPtr patch;  // [N, 9C]: 3x3 neighborhood, border-clamped
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      std::vector<int> flat;
      for (const auto& pk : peaks) {
        int col = std::clamp(pk.col + dx, 0, w - 1);
        int row = std::clamp(pk.row + dy, 0, h - 1);
        flat.push_back(row * w + col);
      }
      auto cells = nn::gather_rows(raw_rows, flat);
      patch = patch ? nn::concat_cols(patch, cells) : cells;
    }
  for (const auto& pk : peaks) {
    cats.push_back(pk.cat);
    res.queries.ref_points.push_back(grid.cell_center(pk.col, pk.row));
    res.queries.categories.push_back(pk.cat);
    res.queries.scores.push_back(pk.conf);
  }
  res.queries.features = nn::add(local_proj(patch), nn::gather_rows(category_embedding, cats));
  res.queries.space = QuerySpace::bev;
  res.heatmap_probs = probs;
  return res;
}

struct CameraInitResult {
  QuerySet queries;  // Q_C^0, perspective space
  std::vector<std::vector<TensorPtr>> heatmap_probs;  // [view][level]
};

// Joint top-N over all views, levels, and cells of the per-level heads. The
// fetched pyramid features pass through `feat_proj` to reach the model width
// before the category embedding is added.
inline CameraInitResult init_queries_camera(const std::vector<FeaturePyramid>& pyramids,
                                            const std::vector<HeatmapHeadParams>& level_heads,
                                            const nn::LinearModule& feat_proj,
                                            const TensorPtr& category_embedding, int n_queries,
                                            int image_width, int image_height) {
  CameraInitResult res;
  int total_cells = 0;
  std::vector<HeatmapPeak> peaks;
  int order = 0;
  for (size_t v = 0; v < pyramids.size(); ++v) {
    res.heatmap_probs.emplace_back();
    for (size_t l = 0; l < pyramids[v].levels.size(); ++l) {
      auto probs = nn::sigmoid(
          heatmap_head_forward(pyramids[v].levels[l], level_heads[l]));
      res.heatmap_probs.back().push_back(probs);
      int k = probs->dim(0), h = probs->dim(1), w = probs->dim(2);
      total_cells += h * w;
      for (int row = 0; row < h; ++row)
        for (int col = 0; col < w; ++col) {
          HeatmapPeak pk;
          pk.order = order++;
          pk.view = static_cast<int>(v);
          pk.level = static_cast<int>(l);
          pk.row = row;
          pk.col = col;
          for (int c = 0; c < k; ++c) {
            double val = probs->values[(static_cast<size_t>(c) * h + row) * w + col];
            if (val > pk.conf) {
              pk.conf = val;
              pk.cat = c;
            }
          }
          peaks.push_back(pk);
        }
    }
  }
  if (n_queries > total_cells)
    throw ConfigError("init_queries_camera: N_C exceeds total heatmap cells");
  select_top_n(peaks, n_queries);

  std::vector<TensorPtr> rows;
  std::vector<int> cats;
  for (const auto& pk : peaks) {
    const auto& lvl = pyramids[static_cast<size_t>(pk.view)].levels[static_cast<size_t>(pk.level)];
    int h = lvl->dim(1), w = lvl->dim(2);
    rows.push_back(nn::gather_rows(nn::chw_to_rows(lvl), {pk.row * w + pk.col}));
    cats.push_back(pk.cat);
    res.queries.ref_points.push_back({(pk.col + 0.5) / w, (pk.row + 0.5) / h});
    res.queries.categories.push_back(pk.cat);
    res.queries.view_ids.push_back(pk.view);
    res.queries.scores.push_back(pk.conf);
  }
  res.queries.features =
      nn::add(feat_proj(nn::concat_rows(rows)), nn::gather_rows(category_embedding, cats));
  res.queries.space = QuerySpace::perspective;
  (void)image_width;
  (void)image_height;
  return res;
}

// ---------------------------------------------------------------------------
// Decoders (one layer each).

struct LidarDecoderParams {
  nn::AttentionParams self_attn, cross_attn;
  nn::MlpModule pos_mlp;  // BEV XY (grid-normalized) -> C
  nn::NormModule ln1, ln2;
  nn::FfnModule ffn;
};

inline LidarDecoderParams add_lidar_decoder(nn::ParamStore& s, const std::string& p, int c,
                                            int heads, Rng& rng) {
  return {nn::add_attention(s, p + ".self", c, heads, rng),
          nn::add_attention(s, p + ".cross", c, heads, rng),
          nn::add_mlp(s, p + ".pos", 2, c, c, rng),
          nn::add_norm(s, p + ".ln1", c, rng),
          nn::add_norm(s, p + ".ln2", c, rng),
          nn::add_ffn(s, p + ".ffn", c, 2, rng)};
}

inline TensorPtr bev_normalized_points(const std::vector<Vec2>& pts, const BevGrid& grid) {
  auto t = nn::make_tensor({static_cast<int>(pts.size()), 2});
  for (size_t i = 0; i < pts.size(); ++i) {
    t->values[i * 2] = (pts[i].x - grid.x_min) / (grid.x_max - grid.x_min);
    t->values[i * 2 + 1] = (pts[i].y - grid.y_min) / (grid.y_max - grid.y_min);
  }
  return t;
}

struct DecoderResult {
  QuerySet queries;
  std::vector<TensorPtr> cross_weights;  // per head (cross/deformable stage)
};

// Self-attention, cross-attention against the flattened BEV map, FFN.
// Positional embeddings are MLP encodings of grid-normalized XY, added to
// queries, keys, and values before projection.
inline DecoderResult lidar_decoder(const QuerySet& q0, const BevFeatureMap& f_bev,
                                   const LidarDecoderParams& p) {
  const auto& grid = f_bev.grid;
  auto pos_q = p.pos_mlp(bev_normalized_points(q0.ref_points, grid));

  std::vector<Vec2> cell_pts;
  cell_pts.reserve(static_cast<size_t>(grid.height) * grid.width);
  for (int row = 0; row < grid.height; ++row)
    for (int col = 0; col < grid.width; ++col) cell_pts.push_back(grid.cell_center(col, row));
  auto pos_kv = p.pos_mlp(bev_normalized_points(cell_pts, grid));
  auto keys = nn::chw_to_rows(f_bev.map);

  auto sa = nn::self_attention(p.ln1.rows(q0.features), pos_q, p.self_attn);
  auto x = nn::add(q0.features, sa.out);
  auto ca = nn::multi_head_attention(p.ln2.rows(x), keys, pos_q, pos_kv, p.cross_attn);
  x = nn::add(x, ca.out);
  x = p.ffn(x);

  DecoderResult res;
  res.queries = q0;
  res.queries.features = x;
  res.cross_weights = ca.weights;
  return res;
}

struct CameraDecoderParams {
  nn::AttentionParams self_attn;
  nn::MlpModule pos_mlp;  // normalized image XY -> C
  nn::DeformableParams deform;
  nn::NormModule ln1, ln2;
  nn::FfnModule ffn;
};

inline CameraDecoderParams add_camera_decoder(nn::ParamStore& s, const std::string& p, int c,
                                              int c_pyr, int heads, int levels, int points,
                                              Rng& rng) {
  return {nn::add_attention(s, p + ".self", c, heads, rng),
          nn::add_mlp(s, p + ".pos", 2, c, c, rng),
          nn::add_deformable(s, p + ".deform", c, c_pyr, heads, levels, points, rng),
          nn::add_norm(s, p + ".ln1", c, rng),
          nn::add_norm(s, p + ".ln2", c, rng),
          nn::add_ffn(s, p + ".ffn", c, 2, rng)};
}

// Self-attention over all queries jointly; deformable attention restricted to
// each query's own view; FFN.
inline DecoderResult camera_decoder(const QuerySet& q0,
                                    const std::vector<FeaturePyramid>& pyramids,
                                    const CameraDecoderParams& p) {
  int n = q0.count();
  auto ref = nn::make_tensor({n, 2});
  for (int i = 0; i < n; ++i) {
    ref->values[static_cast<size_t>(i) * 2] = q0.ref_points[static_cast<size_t>(i)].x;
    ref->values[static_cast<size_t>(i) * 2 + 1] = q0.ref_points[static_cast<size_t>(i)].y;
  }
  auto pos_q = p.pos_mlp(ref);

  auto sa = nn::self_attention(p.ln1.rows(q0.features), pos_q, p.self_attn);
  auto x = nn::add(q0.features, sa.out);

  auto normed = p.ln2.rows(x);
  TensorPtr updated = x;
  for (size_t v = 0; v < pyramids.size(); ++v) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (q0.view_ids[static_cast<size_t>(i)] == static_cast<int>(v)) idx.push_back(i);
    if (idx.empty()) continue;
    auto qv = nn::gather_rows(normed, idx);
    auto coords = nn::gather_rows(ref, idx);
    auto posv = nn::gather_rows(pos_q, idx);
    auto dv = nn::deformable_attention(nn::add(qv, posv), coords, pyramids[v].levels, p.deform);
    updated = nn::scatter_rows(updated, idx, nn::add(nn::gather_rows(x, idx), dv));
  }
  x = p.ffn(updated);

  DecoderResult res;
  res.queries = q0;
  res.queries.features = x;
  return res;
}

// ---------------------------------------------------------------------------
// Prediction heads: six independent MLPs. The LiDAR-view head regresses BEV
// offsets/height, the perspective head image offsets/depth. The 10-dim box
// vector layout is (center 2, height|depth 1, log-size 3, sin/cos 2, vel 2).

struct HeadParams {
  nn::MlpModule cls, offset, elevation, size, yaw, vel;
};

inline HeadParams add_head(nn::ParamStore& s, const std::string& p, int c, int num_categories,
                           Rng& rng) {
  HeadParams h{nn::add_mlp(s, p + ".cls", c, c, num_categories, rng),
               nn::add_mlp(s, p + ".off", c, c, 2, rng),
               nn::add_mlp(s, p + ".elev", c, c, 1, rng),
               nn::add_mlp(s, p + ".size", c, c, 3, rng),
               nn::add_mlp(s, p + ".yaw", c, c, 2, rng),
               nn::add_mlp(s, p + ".vel", c, c, 2, rng)};
  for (auto& v : h.cls.b2->values) v = kFocalPriorBias;
  return h;
}

struct HeadOutput {
  TensorPtr cls_logits;  // N x K
  TensorPtr box_vec;     // N x 10 in head parameter space
};

// LiDAR view: center = ref (meters) + offset, plus regressed height.
inline HeadOutput head_lidar_view(const QuerySet& q, const HeadParams& p) {
  int n = q.count();
  auto ref = nn::make_tensor({n, 2});
  for (int i = 0; i < n; ++i) {
    ref->values[static_cast<size_t>(i) * 2] = q.ref_points[static_cast<size_t>(i)].x;
    ref->values[static_cast<size_t>(i) * 2 + 1] = q.ref_points[static_cast<size_t>(i)].y;
  }
  HeadOutput out;
  out.cls_logits = p.cls(q.features);
  auto center = nn::add(ref, p.offset(q.features));
  out.box_vec = nn::concat_cols(
      nn::concat_cols(center, p.elevation(q.features)),
      nn::concat_cols(p.size(q.features), nn::concat_cols(p.yaw(q.features), p.vel(q.features))));
  return out;
}

// Perspective view: center = ref (pixels) + offset, plus regressed depth.
inline HeadOutput head_perspective(const QuerySet& q, const HeadParams& p, int image_width,
                                   int image_height) {
  int n = q.count();
  auto ref_px = nn::make_tensor({n, 2});
  for (int i = 0; i < n; ++i) {
    ref_px->values[static_cast<size_t>(i) * 2] = q.ref_points[static_cast<size_t>(i)].x * image_width;
    ref_px->values[static_cast<size_t>(i) * 2 + 1] =
        q.ref_points[static_cast<size_t>(i)].y * image_height;
  }
  HeadOutput out;
  out.cls_logits = p.cls(q.features);
  auto center = nn::add(ref_px, p.offset(q.features));
  out.box_vec = nn::concat_cols(
      nn::concat_cols(center, p.elevation(q.features)),
      nn::concat_cols(p.size(q.features), nn::concat_cols(p.yaw(q.features), p.vel(q.features))));
  return out;
}

inline double decode_score(const double* logit_row, int k, int* best_cat = nullptr) {
  double best = -1e30;
  int cat = 0;
  for (int c = 0; c < k; ++c)
    if (logit_row[c] > best) {
      best = logit_row[c];
      cat = c;
    }
  if (best_cat) *best_cat = cat;
  return 1.0 / (1.0 + std::exp(-best));
}

inline double decode_yaw(double s, double c) { return std::atan2(s, c); }

inline double safe_exp_size(double log_size) { return std::exp(std::clamp(log_size, -4.0, 4.0)); }

struct DecodedCamBox {
  Box3DCam box;
  bool depth_clamped = false;
};

inline constexpr double kMinDecodedDepth = 1e-3;

// Back-projects a perspective head row through the camera intrinsics.
inline DecodedCamBox decode_cam_box_row(const double* row, const CameraModel& cam) {
  DecodedCamBox out;
  double u = row[0], v = row[1], depth = row[2];
  if (depth < kMinDecodedDepth) {
    depth = kMinDecodedDepth;
    out.depth_clamped = true;
  }
  // Upper-triangular K back-substitution: K * p = depth * (u, v, 1).
  const auto& K = cam.intrinsics;
  double z = depth;
  double y = (v * depth - K(1, 2) * z) / K(1, 1);
  double x = (u * depth - K(0, 1) * y - K(0, 2) * z) / K(0, 0);
  out.box.center = {x, y, z};
  out.box.size = {safe_exp_size(row[3]), safe_exp_size(row[4]), safe_exp_size(row[5])};
  out.box.yaw = decode_yaw(row[6], row[7]);
  out.box.velocity = {row[8], row[9]};
  return out;
}

inline Box3DLidar decode_lidar_box_row(const double* row) {
  Box3DLidar b;
  b.center = {row[0], row[1], row[2]};
  b.size = {safe_exp_size(row[3]), safe_exp_size(row[4]), safe_exp_size(row[5])};
  b.yaw = decode_yaw(row[6], row[7]);
  b.velocity = {row[8], row[9]};
  return b;
}

inline std::vector<Detection> decode_lidar_detections(const HeadOutput& h, DetSource source) {
  int n = h.cls_logits->dim(0), k = h.cls_logits->dim(1);
  std::vector<Detection> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Detection d;
    d.score = decode_score(h.cls_logits->values.data() + static_cast<size_t>(i) * k, k, &d.category);
    d.box = decode_lidar_box_row(h.box_vec->values.data() + static_cast<size_t>(i) * 10);
    d.source = source;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GT encodings matching the head parameter spaces.

inline std::vector<double> encode_gt_lidar(const Box3DLidar& b) {
  return {b.center.x,            b.center.y,          b.center.z,
          std::log(b.size.x),    std::log(b.size.y),  std::log(b.size.z),
          std::sin(b.yaw),       std::cos(b.yaw),     b.velocity.x,
          b.velocity.y};
}

inline std::vector<double> encode_gt_cam(const Box3DCam& b, const CameraModel& cam) {
  const auto& K = cam.intrinsics;
  double u = (K(0, 0) * b.center.x + K(0, 1) * b.center.y + K(0, 2) * b.center.z) / b.center.z;
  double v = (K(1, 1) * b.center.y + K(1, 2) * b.center.z) / b.center.z;
  return {u,
          v,
          b.center.z,
          std::log(b.size.x),
          std::log(b.size.y),
          std::log(b.size.z),
          std::sin(b.yaw),
          std::cos(b.yaw),
          b.velocity.x,
          b.velocity.y};
}

}  // namespace sparsefuse::det

#endif  // SPARSEFUSE_DETECTOR_HPP
