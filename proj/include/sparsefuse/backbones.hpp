#ifndef SPARSEFUSE_BACKBONES_HPP
#define SPARSEFUSE_BACKBONES_HPP

#include <vector>

#include "sparsefuse/transfer.hpp"

namespace sparsefuse::backbones {

using nn::TensorPtr;
using transfer::BevFeatureMap;
using transfer::FeaturePyramid;

// ---------------------------------------------------------------------------
// Image backbone: strided conv stem to stride 4, then stride-2 residual
// blocks for the remaining levels. All pyramid levels carry c_pyr channels.

struct CameraBackboneParams {
  nn::ConvModule stem1, stem2;
  nn::NormModule stem1_norm, stem2_norm;
  std::vector<nn::ResidualBlockParams> blocks;  // levels 2..L
  int c_pyr = 16;
  int levels = 4;
};

inline CameraBackboneParams add_camera_backbone(nn::ParamStore& s, const std::string& p,
                                                int c_pyr, int levels, Rng& rng) {
  CameraBackboneParams b;
  b.c_pyr = c_pyr;
  b.levels = levels;
  b.stem1 = nn::add_conv3x3(s, p + ".stem1", 3, 8, rng);
  b.stem1_norm = nn::add_norm(s, p + ".stem1_ln", 8, rng);
  b.stem2 = nn::add_conv3x3(s, p + ".stem2", 8, c_pyr, rng);
  b.stem2_norm = nn::add_norm(s, p + ".stem2_ln", c_pyr, rng);
  for (int l = 2; l <= levels; ++l)
    b.blocks.push_back(
        nn::add_residual_block(s, p + ".level" + std::to_string(l), c_pyr, c_pyr, true, rng));
  return b;
}

// raster: H x W x 3 channel-last values in [0,1].
inline FeaturePyramid camera_backbone_forward(const std::vector<double>& raster, int width,
                                              int height, int view_id,
                                              const CameraBackboneParams& p) {
  auto img = nn::make_tensor({3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img->values[(static_cast<size_t>(ch) * height + y) * width + x] =
            raster[(static_cast<size_t>(y) * width + x) * 3 + ch] - 0.5;

  auto x1 = nn::relu(p.stem1_norm.chw(nn::conv3x3(img, p.stem1.w, p.stem1.b, 2)));
  auto x2 = nn::relu(p.stem2_norm.chw(nn::conv3x3(x1, p.stem2.w, p.stem2.b, 2)));

  FeaturePyramid pyr;
  pyr.view_id = view_id;
  pyr.levels.push_back(x2);
  TensorPtr x = x2;
  for (const auto& blk : p.blocks) {
    x = nn::residual_block(x, blk, 2);
    pyr.levels.push_back(x);
  }
  return pyr;
}

// ---------------------------------------------------------------------------
// LiDAR BEV backbone: hand-rolled pillar statistics scattered onto the grid,
// a small conv stack, and a 1x1 projection to the model width.

inline constexpr int kPillarFeatureDim = 11;

struct LidarBackboneParams {
  nn::ConvModule stem;
  nn::NormModule stem_norm;
  nn::ResidualBlockParams block1, block2, block3;
  nn::ConvModule out_proj;  // 1x1 to model C
  int c_bev = 16;
};

inline LidarBackboneParams add_lidar_backbone(nn::ParamStore& s, const std::string& p, int c_bev,
                                              int c_out, Rng& rng) {
  LidarBackboneParams b;
  b.c_bev = c_bev;
  b.stem = nn::add_conv3x3(s, p + ".stem", kPillarFeatureDim, c_bev, rng);
  b.stem_norm = nn::add_norm(s, p + ".stem_ln", c_bev, rng);
  b.block1 = nn::add_residual_block(s, p + ".block1", c_bev, c_bev, false, rng);
  b.block2 = nn::add_residual_block(s, p + ".block2", c_bev, c_bev, false, rng);
  b.block3 = nn::add_residual_block(s, p + ".block3", c_bev, c_bev, false, rng);
  b.out_proj = {s.add(p + ".proj.w", {c_out, c_bev}, nn::Init::XavierUniform, rng),
                s.add(p + ".proj.b", {c_out}, nn::Init::Zeros, rng)};
  return b;
}

// Per-cell statistics: occupancy, log1p(count), mean offsets from the cell
// center, height stats (mean/max/min/extent), footprint spread, mean
// intensity, range. All scaled to O(1).
inline TensorPtr pillar_features(const std::vector<scene::LidarPoint>& points,
                                 const geom::BevGrid& grid) {
  int h = grid.height, w = grid.width;
  auto feat = nn::make_tensor({kPillarFeatureDim, h, w});
  struct Acc {
    int n = 0;
    double sx = 0, sy = 0, sxx = 0, syy = 0;
    double sz = 0, mz = -1e30, nz = 1e30, si = 0;
  };
  std::vector<Acc> acc(static_cast<size_t>(h) * w);
  for (const auto& pt : points) {
    auto cell = geom::bev_cell_of({pt.x, pt.y}, grid);
    if (!cell) continue;
    auto& a = acc[static_cast<size_t>(cell->row) * w + cell->col];
    geom::Vec2 cc = grid.cell_center(cell->col, cell->row);
    double dx = pt.x - cc.x, dy = pt.y - cc.y;
    ++a.n;
    a.sx += dx;
    a.sy += dy;
    a.sxx += dx * dx;
    a.syy += dy * dy;
    a.sz += pt.z;
    a.mz = std::max(a.mz, pt.z);
    a.nz = std::min(a.nz, pt.z);
    a.si += pt.intensity;
  }
  size_t hw = static_cast<size_t>(h) * w;
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      size_t p = static_cast<size_t>(row) * w + col;
      const auto& a = acc[p];
      if (a.n == 0) continue;
      geom::Vec2 cc = grid.cell_center(col, row);
      double inv = 1.0 / a.n;
      double mx = a.sx * inv, my = a.sy * inv;
      double var = std::max(0.0, a.sxx * inv - mx * mx) +
                   std::max(0.0, a.syy * inv - my * my);
      feat->values[0 * hw + p] = 1.0;
      feat->values[1 * hw + p] = std::log1p(static_cast<double>(a.n)) / 3.0;
      feat->values[2 * hw + p] = mx / grid.resolution;
      feat->values[3 * hw + p] = my / grid.resolution;
      feat->values[4 * hw + p] = a.sz * inv / 3.0;
      feat->values[5 * hw + p] = a.mz / 3.0;
      feat->values[6 * hw + p] = a.nz / 3.0;
      feat->values[7 * hw + p] = (a.mz - a.nz) / 3.0;
      feat->values[8 * hw + p] = std::sqrt(var) / grid.resolution;
      feat->values[9 * hw + p] = a.si * inv;
      feat->values[10 * hw + p] = std::hypot(cc.x, cc.y) / 30.0;
    }
  return feat;
}

inline BevFeatureMap lidar_backbone_forward(const std::vector<scene::LidarPoint>& points,
                                            const geom::BevGrid& grid,
                                            const LidarBackboneParams& p) {
  auto x = pillar_features(points, grid);
  BevFeatureMap out;
  out.grid = grid;
  out.occupied.assign(static_cast<size_t>(grid.height) * grid.width, 0);
  size_t hw = out.occupied.size();
  for (size_t i = 0; i < hw; ++i) out.occupied[i] = x->values[i] > 0 ? 1 : 0;

  auto y = nn::relu(p.stem_norm.chw(nn::conv3x3(x, p.stem.w, p.stem.b, 1)));
  y = nn::residual_block(y, p.block1, 1);
  y = nn::residual_block(y, p.block2, 1);
  y = nn::residual_block(y, p.block3, 1);
  out.map = nn::conv1x1(y, p.out_proj.w, p.out_proj.b);
  return out;
}

}  // namespace sparsefuse::backbones

#endif  // SPARSEFUSE_BACKBONES_HPP
