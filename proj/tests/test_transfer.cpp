#include <catch2/catch_amalgamated.hpp>

#include "sparsefuse/backbones.hpp"
#include "sparsefuse/transfer.hpp"
#include "test_helpers.hpp"

using namespace sparsefuse;
using namespace sparsefuse::transfer;
using helpers::random_tensor;

namespace {

scene::GeneratorConfig gen_cfg() { return scene::GeneratorConfig{}; }

std::vector<FeaturePyramid> random_pyramids(Rng& rng, int views, int c, int w0, int h0,
                                            int levels) {
  std::vector<FeaturePyramid> out(static_cast<size_t>(views));
  for (int v = 0; v < views; ++v) {
    out[static_cast<size_t>(v)].view_id = v;
    int h = h0, w = w0;
    for (int l = 0; l < levels; ++l) {
      out[static_cast<size_t>(v)].levels.push_back(random_tensor(rng, {c, h, w}));
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("empty point cloud renders an all-zero depth map", "[transfer]") {
  auto cam = scene::make_camera(gen_cfg(), 0);
  auto d = render_sparse_depth({}, cam);
  CHECK(d.width == cam.image_width / kDepthDownscale);
  CHECK(d.height == cam.image_height / kDepthDownscale);
  for (double v : d.grid) CHECK(v == 0.0);
}

TEST_CASE("one point on the optical axis writes its depth at the principal cell", "[transfer]") {
  auto cfg = gen_cfg();
  auto cam = scene::make_camera(cfg, 0);
  // camera 0 looks along +X from height camera_height
  std::vector<scene::LidarPoint> pts = {{5.0, 0.0, cfg.camera_height, 0.5}};
  auto d = render_sparse_depth(pts, cam);
  int nonzero = 0;
  size_t idx = 0;
  for (size_t i = 0; i < d.grid.size(); ++i)
    if (d.grid[i] != 0.0) {
      ++nonzero;
      idx = i;
    }
  REQUIRE(nonzero == 1);
  CHECK(d.grid[idx] == Catch::Approx(5.0).margin(1e-6));
  // principal point (32, 20) lands in down-scaled cell (8, 5)
  CHECK(idx == static_cast<size_t>(5) * d.width + 8);
}

TEST_CASE("colliding points keep the minimum depth", "[transfer]") {
  auto cfg = gen_cfg();
  auto cam = scene::make_camera(cfg, 0);
  std::vector<scene::LidarPoint> pts = {{7.0, 0.01, cfg.camera_height, 0.5},
                                        {4.0, 0.005, cfg.camera_height - 0.01, 0.5}};
  auto d = render_sparse_depth(pts, cam);
  // brute-force oracle over the same projection
  std::vector<double> want(d.grid.size(), 0.0);
  for (const auto& p : pts) {
    auto ip = geom::project_lidar_to_image({p.x, p.y, p.z}, cam);
    REQUIRE(ip.has_value());
    int u = static_cast<int>(ip->u) / kDepthDownscale;
    int v = static_cast<int>(ip->v) / kDepthDownscale;
    size_t idx = static_cast<size_t>(v) * d.width + u;
    if (want[idx] == 0.0 || ip->depth < want[idx]) want[idx] = ip->depth;
  }
  CHECK(d.grid == want);
  // both points fall into one cell; it must hold the nearer depth
  double min_nonzero = 1e30;
  int nonzero = 0;
  for (double v : d.grid)
    if (v != 0.0) {
      ++nonzero;
      min_nonzero = std::min(min_nonzero, v);
    }
  CHECK(nonzero == 1);
  CHECK(min_nonzero == Catch::Approx(4.0).margin(1e-6));
}

TEST_CASE("pillar median heights are exact medians", "[transfer]") {
  auto grid = geom::BevGrid::make(-8, 8, -8, 8, 2.0);
  std::vector<scene::LidarPoint> pts = {
      {1.0, 1.0, 0.4, 0}, {1.2, 1.1, 1.0, 0}, {0.9, 0.8, 0.1, 0},  // odd pillar: median 0.4
      {-3.0, -3.0, 1.0, 0}, {-3.2, -3.1, 2.0, 0},                  // even pillar: median 1.5
  };
  auto pillars = compute_pillars(pts, grid);
  REQUIRE(pillars.size() == 2);
  // deterministic row-major order: (-3,-3) cell first
  CHECK(pillars[0].count == 2);
  CHECK(pillars[0].median_z == Catch::Approx(1.5));
  CHECK(pillars[1].count == 3);
  CHECK(pillars[1].median_z == Catch::Approx(0.4));
}

TEST_CASE("geometric transfer preserves level shapes and stays finite", "[transfer]") {
  Rng rng(41);
  nn::ParamStore store;
  Rng init(7);
  auto p = add_geometric_transfer(store, "geo", 4, 16, init);
  auto pyr = random_pyramids(rng, 1, 16, 16, 10, 4)[0];
  DepthMap d;
  d.width = 16;
  d.height = 10;
  d.grid.assign(160, 0.0);  // all-empty depth map

  auto out = geometric_transfer(pyr, d, p);
  REQUIRE(out.levels.size() == pyr.levels.size());
  for (size_t l = 0; l < out.levels.size(); ++l) {
    CHECK(out.levels[l]->shape == pyr.levels[l]->shape);
    CHECK(nn::all_finite(*out.levels[l]));
  }
}

TEST_CASE("geometric transfer rejects misaligned depth maps", "[transfer]") {
  Rng rng(42);
  nn::ParamStore store;
  Rng init(7);
  auto p = add_geometric_transfer(store, "geo", 4, 16, init);
  auto pyr = random_pyramids(rng, 1, 16, 16, 10, 4)[0];
  DepthMap d;
  d.width = 12;  // wrong: level 1 is 16x10
  d.height = 10;
  d.grid.assign(120, 0.0);
  CHECK_THROWS_AS(geometric_transfer(pyr, d, p), ConfigError);
}

TEST_CASE("geometric transfer is deterministic at 0 ulp", "[transfer]") {
  Rng rng(43);
  nn::ParamStore store;
  Rng init(8);
  auto p = add_geometric_transfer(store, "geo", 3, 8, init);
  auto pyr = random_pyramids(rng, 1, 8, 16, 8, 3)[0];
  DepthMap d;
  d.width = 16;
  d.height = 8;
  d.grid.resize(128);
  for (auto& v : d.grid) v = rng.uniform(0, 25);

  auto a = geometric_transfer(pyr, d, p);
  auto b = geometric_transfer(pyr, d, p);
  for (size_t l = 0; l < a.levels.size(); ++l)
    CHECK(a.levels[l]->values == b.levels[l]->values);
}

TEST_CASE("semantic transfer with zero occupied pillars returns the input", "[transfer]") {
  Rng rng(44);
  nn::ParamStore store;
  Rng init(9);
  auto p = add_semantic_transfer(store, "st", 8, 4, 2, 2, 2, init);
  auto cfg = gen_cfg();
  std::vector<geom::CameraModel> cams = {scene::make_camera(cfg, 0)};
  BevFeatureMap bev;
  bev.grid = geom::BevGrid::make(-8, 8, -8, 8, 2.0);
  bev.map = random_tensor(rng, {8, 8, 8});
  bev.occupied.assign(64, 0);
  auto pyramids = random_pyramids(rng, 1, 4, 8, 6, 2);

  auto out = semantic_transfer(bev, {}, pyramids, cams, p);
  CHECK(out.map->values == bev.map->values);
}

TEST_CASE("semantic transfer touches exactly the visible occupied cells", "[transfer]") {
  Rng rng(45);
  nn::ParamStore store;
  Rng init(10);
  int c = 8;
  auto p = add_semantic_transfer(store, "st", c, 4, 2, 2, 2, init);
  auto cfg = gen_cfg();
  std::vector<geom::CameraModel> cams = {scene::make_camera(cfg, 0),
                                         scene::make_camera(cfg, 1)};
  auto grid = geom::BevGrid::make(-12, 12, -12, 12, 2.0);
  BevFeatureMap bev;
  bev.grid = grid;
  bev.map = random_tensor(rng, {c, grid.height, grid.width});
  bev.occupied.assign(static_cast<size_t>(grid.height) * grid.width, 0);

  std::vector<scene::LidarPoint> pts;
  for (int i = 0; i < 10; ++i)
    pts.push_back({rng.uniform(-11, 11), rng.uniform(-11, 11), rng.uniform(0.2, 1.5), 0.5});
  auto pillars = compute_pillars(pts, grid);
  REQUIRE_FALSE(pillars.empty());
  auto pyramids = random_pyramids(rng, 2, 4, 8, 6, 2);

  auto out = semantic_transfer(bev, pillars, pyramids, cams, p);

  // which pillars project into some view?
  std::vector<char> expect_touched(bev.occupied.size(), 0);
  for (const auto& pl : pillars) {
    auto cc = grid.cell_center(pl.col, pl.row);
    for (const auto& cam : cams) {
      auto ip = geom::project_lidar_to_image({cc.x, cc.y, pl.median_z}, cam);
      if (ip && geom::in_image(*ip, cam))
        expect_touched[static_cast<size_t>(pl.row) * grid.width + pl.col] = 1;
    }
  }
  int hw = grid.height * grid.width;
  int touched = 0;
  for (int cell = 0; cell < hw; ++cell) {
    bool changed = false;
    for (int ch = 0; ch < c; ++ch)
      if (out.map->values[static_cast<size_t>(ch) * hw + cell] !=
          bev.map->values[static_cast<size_t>(ch) * hw + cell])
        changed = true;
    if (expect_touched[static_cast<size_t>(cell)]) {
      ++touched;
    } else {
      // unoccupied or invisible cells are bit-for-bit unchanged
      CHECK_FALSE(changed);
    }
  }
  CHECK(touched > 0);
}

TEST_CASE("camera backbone produces the documented stride pyramid", "[transfer]") {
  Rng rng(46);
  nn::ParamStore store;
  Rng init(11);
  auto p = backbones::add_camera_backbone(store, "bb", 16, 4, init);
  std::vector<double> raster(static_cast<size_t>(64) * 40 * 3, 0.2);
  auto pyr = backbones::camera_backbone_forward(raster, 64, 40, 0, p);
  REQUIRE(pyr.levels.size() == 4);
  CHECK(pyr.levels[0]->shape == std::vector<int>{16, 10, 16});
  CHECK(pyr.levels[1]->shape == std::vector<int>{16, 5, 8});
  CHECK(pyr.levels[2]->shape == std::vector<int>{16, 3, 4});
  CHECK(pyr.levels[3]->shape == std::vector<int>{16, 2, 2});
}

TEST_CASE("lidar backbone occupancy mask marks exactly the point-bearing pillars", "[transfer]") {
  Rng rng(47);
  nn::ParamStore store;
  Rng init(12);
  auto p = backbones::add_lidar_backbone(store, "bb", 8, 16, init);
  auto grid = geom::BevGrid::make(-8, 8, -8, 8, 2.0);
  std::vector<scene::LidarPoint> pts = {{1.0, 1.0, 0.5, 0.4}, {-5.0, 3.0, 1.0, 0.4}};
  auto bev = backbones::lidar_backbone_forward(pts, grid, p);
  CHECK(bev.map->shape == std::vector<int>{16, 8, 8});
  int occupied = 0;
  for (auto v : bev.occupied) occupied += v;
  CHECK(occupied == 2);
  auto c1 = geom::bev_cell_of({1.0, 1.0}, grid);
  CHECK(bev.occupied[static_cast<size_t>(c1->row) * grid.width + c1->col] == 1);
}
