#ifndef SPARSEFUSE_TRANSFER_HPP
#define SPARSEFUSE_TRANSFER_HPP

#include <algorithm>
#include <optional>
#include <vector>

#include "sparsefuse/geometry.hpp"
#include "sparsefuse/nn/modules.hpp"
#include "sparsefuse/scene.hpp"

namespace sparsefuse::transfer {

using geom::BevGrid;
using geom::CameraModel;
using nn::TensorPtr;

// Sparse depth map at 1/4 image resolution; 0 marks empty cells.
struct DepthMap {
  int view_id = 0;
  int width = 0, height = 0;  // image_size / 4
  std::vector<double> grid;   // row-major H x W, meters
};

inline constexpr int kDepthDownscale = 4;

// Multi-scale per-view image features; level strides (4, 8, 16, 32).
struct FeaturePyramid {
  int view_id = 0;
  std::vector<TensorPtr> levels;  // each [C_l, H_l, W_l]
};

struct BevFeatureMap {
  TensorPtr map;  // [C, H, W]
  BevGrid grid;
  std::vector<uint8_t> occupied;  // H*W, true iff >= 1 LiDAR point in pillar
};

// One occupied BEV pillar: cell indices, exact median point height, count.
struct PillarSample {
  int col = 0, row = 0;
  double median_z = 0;
  int count = 0;
};

// ---------------------------------------------------------------------------

inline DepthMap render_sparse_depth(const std::vector<scene::LidarPoint>& points,
                                    const CameraModel& cam) {
  DepthMap d;
  d.view_id = cam.view_id;
  d.width = cam.image_width / kDepthDownscale;
  d.height = cam.image_height / kDepthDownscale;
  d.grid.assign(static_cast<size_t>(d.width) * d.height, 0.0);
  for (const auto& p : points) {
    auto ip = geom::project_lidar_to_image({p.x, p.y, p.z}, cam);
    if (!ip || !geom::in_image(*ip, cam)) continue;
    int u = static_cast<int>(ip->u) / kDepthDownscale;
    int v = static_cast<int>(ip->v) / kDepthDownscale;
    if (u < 0 || u >= d.width || v < 0 || v >= d.height) continue;
    size_t idx = static_cast<size_t>(v) * d.width + u;
    if (d.grid[idx] == 0.0 || ip->depth < d.grid[idx]) d.grid[idx] = ip->depth;
  }
  return d;
}

inline std::vector<PillarSample> compute_pillars(const std::vector<scene::LidarPoint>& points,
                                                 const BevGrid& grid) {
  std::vector<std::vector<double>> heights(static_cast<size_t>(grid.width) * grid.height);
  for (const auto& p : points) {
    auto cell = geom::bev_cell_of({p.x, p.y}, grid);
    if (!cell) continue;
    heights[static_cast<size_t>(cell->row) * grid.width + cell->col].push_back(p.z);
  }
  std::vector<PillarSample> out;
  for (int row = 0; row < grid.height; ++row)
    for (int col = 0; col < grid.width; ++col) {
      auto& h = heights[static_cast<size_t>(row) * grid.width + col];
      if (h.empty()) continue;
      std::sort(h.begin(), h.end());
      size_t n = h.size();
      double med = n % 2 ? h[n / 2] : 0.5 * (h[n / 2 - 1] + h[n / 2]);
      out.push_back({col, row, med, static_cast<int>(n)});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Geometric transfer: sparse depth in, depth-aware pyramid out. The stem runs
// at the depth map's stride-4 resolution and the first block keeps it, so
// level 1 aligns; blocks 2..L downsample by 2 to track the pyramid.

struct GeometricTransferParams {
  nn::ConvModule stem;
  nn::NormModule stem_norm;
  std::vector<nn::ResidualBlockParams> blocks;  // L entries
  std::vector<nn::ConvModule> fuse;             // L entries, restore C_l
  int depth_channels = 8;
  double depth_scale = 30.0;  // meters mapped to ~1.0
};

inline GeometricTransferParams add_geometric_transfer(nn::ParamStore& s, const std::string& p,
                                                      int levels, int c_pyr, Rng& rng) {
  GeometricTransferParams g;
  int cd = g.depth_channels;
  g.stem = nn::add_conv3x3(s, p + ".stem", 1, cd, rng);
  g.stem_norm = nn::add_norm(s, p + ".stem_ln", cd, rng);
  for (int l = 0; l < levels; ++l) {
    int cin = l == 0 ? cd : c_pyr;
    int cout = l == 0 ? cd : c_pyr;
    g.blocks.push_back(
        nn::add_residual_block(s, p + ".block" + std::to_string(l + 1), cin, cout, l > 0, rng));
    g.fuse.push_back(
        nn::add_conv3x3(s, p + ".fuse" + std::to_string(l + 1), cout + c_pyr, c_pyr, rng));
  }
  return g;
}

inline FeaturePyramid geometric_transfer(const FeaturePyramid& pyr, const DepthMap& depth,
                                         const GeometricTransferParams& p) {
  int L = static_cast<int>(pyr.levels.size());
  if (static_cast<int>(p.blocks.size()) != L)
    throw ConfigError("geometric_transfer: level count mismatch");

  std::vector<double> scaled(depth.grid.size());
  for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = depth.grid[i] / p.depth_scale;
  TensorPtr fd = nn::make_tensor({1, depth.height, depth.width}, std::move(scaled));
  fd = nn::relu(p.stem_norm.chw(nn::conv3x3(fd, p.stem.w, p.stem.b, 1)));

  FeaturePyramid out;
  out.view_id = pyr.view_id;
  for (int l = 0; l < L; ++l) {
    fd = nn::residual_block(fd, p.blocks[static_cast<size_t>(l)], l == 0 ? 1 : 2);
    const auto& lvl = pyr.levels[static_cast<size_t>(l)];
    if (fd->dim(1) != lvl->dim(1) || fd->dim(2) != lvl->dim(2))
      throw ConfigError("geometric_transfer: level " + std::to_string(l + 1) +
                        " misaligned: depth path " + nn::shape_str(fd->shape) + " vs pyramid " +
                        nn::shape_str(lvl->shape));
    fd = nn::conv3x3(nn::concat_chw(fd, lvl), p.fuse[static_cast<size_t>(l)].w,
                     p.fuse[static_cast<size_t>(l)].b, 1);
    out.levels.push_back(fd);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic transfer: image semantics pushed into occupied BEV pillars. Each
// occupied pillar (x_j, y_j, median z_j) is projected into every view; where
// visible, multi-scale features are fetched (bilinear, max-pooled over
// levels), added to the pillar feature, refined by one deformable-attention +
// FFN step against that view's pyramid, max-pooled over views, and written
// back. Unoccupied cells are untouched; pillars visible nowhere stay as-is.

struct SemanticTransferParams {
  nn::LinearModule fetch_proj;  // C_pyr -> C
  nn::MlpModule pos_mlp;        // 2 -> C -> C
  nn::DeformableParams deform;
  nn::NormModule attn_norm;
  nn::FfnModule ffn;
};

inline SemanticTransferParams add_semantic_transfer(nn::ParamStore& s, const std::string& p,
                                                    int c, int c_pyr, int heads, int levels,
                                                    int points, Rng& rng) {
  SemanticTransferParams t;
  t.fetch_proj = nn::add_linear(s, p + ".fetch", c_pyr, c, rng);
  t.pos_mlp = nn::add_mlp(s, p + ".pos", 2, c, c, rng);
  t.deform = nn::add_deformable(s, p + ".deform", c, c_pyr, heads, levels, points, rng);
  t.attn_norm = nn::add_norm(s, p + ".attn_ln", c, rng);
  t.ffn = nn::add_ffn(s, p + ".ffn", c, 2, rng);
  return t;
}

inline BevFeatureMap semantic_transfer(const BevFeatureMap& bev,
                                       const std::vector<PillarSample>& pillars,
                                       const std::vector<FeaturePyramid>& pyramids,
                                       const std::vector<CameraModel>& cams,
                                       const SemanticTransferParams& p) {
  if (pillars.empty()) return bev;
  int c = bev.map->dim(0);
  int w = bev.map->dim(2);
  int m = static_cast<int>(pillars.size());

  std::vector<int> flat(static_cast<size_t>(m));
  for (int j = 0; j < m; ++j)
    flat[static_cast<size_t>(j)] = pillars[static_cast<size_t>(j)].row * w +
                                   pillars[static_cast<size_t>(j)].col;
  auto rows = nn::chw_to_rows(bev.map);          // [HW, C]
  auto q_base = nn::gather_rows(rows, flat);     // [M, C]

  // Per view: visible subset, fetch + refine.
  TensorPtr best;  // [M, C] running max over views, -inf where unseen
  std::vector<char> seen(static_cast<size_t>(m), 0);
  auto neg_base = nn::make_tensor({m, c});
  for (auto& v : neg_base->values) v = -1e30;

  for (size_t vi = 0; vi < pyramids.size(); ++vi) {
    const auto& cam = cams[vi];
    std::vector<int> local;
    std::vector<double> coords;
    for (int j = 0; j < m; ++j) {
      const auto& pl = pillars[static_cast<size_t>(j)];
      geom::Vec2 xy = bev.grid.cell_center(pl.col, pl.row);
      auto ip = geom::project_lidar_to_image({xy.x, xy.y, pl.median_z}, cam);
      if (!ip || !geom::in_image(*ip, cam)) continue;
      local.push_back(j);
      coords.push_back(ip->u / cam.image_width);
      coords.push_back(ip->v / cam.image_height);
      seen[static_cast<size_t>(j)] = 1;
    }
    if (local.empty()) continue;
    int mv = static_cast<int>(local.size());
    auto coord_t = nn::make_tensor({mv, 2}, std::move(coords));

    // Multi-scale fetch, max-pooled over levels, projected to C.
    TensorPtr fetched;
    for (const auto& lvl : pyramids[vi].levels) {
      auto sampled = nn::bilinear_sample(lvl, coord_t);
      fetched = fetched ? nn::max_elem(fetched, sampled) : sampled;
    }
    auto q_v = nn::add(nn::gather_rows(q_base, local), p.fetch_proj(fetched));

    auto pos = p.pos_mlp(coord_t);
    auto attn = nn::deformable_attention(nn::add(p.attn_norm.rows(q_v), pos), coord_t,
                                         pyramids[vi].levels, p.deform);
    auto refined = p.ffn(nn::add(q_v, attn));

    auto spread = nn::scatter_rows(neg_base, local, refined);  // [M, C]
    best = best ? nn::max_elem(best, spread) : spread;
  }

  std::vector<int> touched_local, touched_flat;
  for (int j = 0; j < m; ++j)
    if (seen[static_cast<size_t>(j)]) {
      touched_local.push_back(j);
      touched_flat.push_back(flat[static_cast<size_t>(j)]);
    }
  if (touched_local.empty()) return bev;

  auto updates = nn::gather_rows(best, touched_local);
  auto new_rows = nn::scatter_rows(rows, touched_flat, updates);
  BevFeatureMap out;
  out.map = nn::rows_to_chw(new_rows, bev.map->dim(1), bev.map->dim(2));
  out.grid = bev.grid;
  out.occupied = bev.occupied;
  return out;
}

}  // namespace sparsefuse::transfer

#endif  // SPARSEFUSE_TRANSFER_HPP
