#include <catch2/catch_amalgamated.hpp>

#include "sparsefuse/detector.hpp"
#include "test_helpers.hpp"

using namespace sparsefuse;
using namespace sparsefuse::det;
using helpers::random_tensor;

namespace {

transfer::BevFeatureMap random_bev(Rng& rng, const geom::BevGrid& grid, int c) {
  transfer::BevFeatureMap bev;
  bev.grid = grid;
  bev.map = random_tensor(rng, {c, grid.height, grid.width});
  bev.occupied.assign(static_cast<size_t>(grid.height) * grid.width, 1);
  return bev;
}

}  // namespace

TEST_CASE("gt heatmap holds exactly 1 at every center cell", "[detector]") {
  auto grid = geom::BevGrid::make(-24, 24, -24, 24, 2.0);
  scene::GeneratorConfig gc;
  Rng rng(51);
  std::vector<scene::ObjectSpec> objects;
  for (int i = 0; i < 5; ++i) {
    scene::ObjectSpec o;
    o.category = i % 3;
    o.box = helpers::random_box(rng);
    objects.push_back(o);
  }
  auto hm = splat_gt_heatmap(objects, grid, 6);
  int h = grid.height, w = grid.width;
  for (const auto& o : objects) {
    auto cell = geom::bev_cell_of({o.box.center.x, o.box.center.y}, grid);
    if (!cell) continue;
    CHECK(hm[(static_cast<size_t>(o.category) * h + cell->row) * w + cell->col] == 1.0);
  }
  for (double v : hm) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("overlapping gaussians combine with the max rule", "[detector]") {
  std::vector<double> map(1 * 9 * 9, 0.0);
  splat_gaussian(map, 9, 9, 0, 2, 4, 2.0);
  splat_gaussian(map, 9, 9, 0, 6, 4, 2.0);
  // midpoint cell (4,4): both contribute exp(-4/8); max keeps that value
  double d2 = 4.0;
  CHECK(map[4 * 9 + 4] == Catch::Approx(std::exp(-d2 / 8.0)));
  // a cell with contributions 0.5 and 0.8 keeps 0.8
  std::vector<double> two(1 * 5 * 5, 0.0);
  two[2 * 5 + 2] = 0.5;
  splat_gaussian(two, 5, 5, 0, 2, 2, 1.0);  // writes 1.0 at center
  CHECK(two[2 * 5 + 2] == 1.0);
}

TEST_CASE("kernel value at two cells with sigma 2", "[detector]") {
  std::vector<double> map(1 * 11 * 11, 0.0);
  splat_gaussian(map, 11, 11, 0, 5, 5, 2.0);
  // distance 2 cells: exp(-4/8) = 0.6065
  CHECK(map[5 * 11 + 7] == Catch::Approx(0.60653).margin(1e-4));
  // monotone non-increasing along the +x ray
  double prev = map[5 * 11 + 5];
  for (int dx = 1; dx <= 5; ++dx) {
    double v = map[5 * 11 + 5 + dx];
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("sigma follows max(l,w)/(6 cell) with a one-cell floor", "[detector]") {
  CHECK(heatmap_sigma_cells(4.2, 2.0) == 1.0);          // 0.35 floored
  CHECK(heatmap_sigma_cells(30.0, 2.0) == Catch::Approx(2.5));
}

TEST_CASE("fcos level assignment follows the threshold bands", "[detector]") {
  std::vector<double> thr = {0, 4, 8, 16};
  CHECK(fcos_level(2.0, thr) == 0);
  CHECK(fcos_level(4.0, thr) == 1);
  CHECK(fcos_level(10.0, thr) == 2);  // in [8,16): third band
  CHECK(fcos_level(40.0, thr) == 3);  // above the last finite threshold
}

TEST_CASE("top-n selection equals a full-sort oracle", "[detector]") {
  Rng rng(52);
  for (int t = 0; t < 200; ++t) {
    int cells = rng.uniform_int(5, 60);
    int n = rng.uniform_int(1, std::min(10, cells));
    std::vector<HeatmapPeak> peaks(static_cast<size_t>(cells));
    for (int i = 0; i < cells; ++i) {
      peaks[static_cast<size_t>(i)].conf = rng.uniform(0, 1);
      peaks[static_cast<size_t>(i)].order = i;
    }
    auto copy = peaks;
    select_top_n(peaks, n);
    std::sort(copy.begin(), copy.end(), [](const HeatmapPeak& a, const HeatmapPeak& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      return a.order < b.order;
    });
    for (int i = 0; i < n; ++i) CHECK(peaks[static_cast<size_t>(i)].order == copy[static_cast<size_t>(i)].order);
  }
}

TEST_CASE("uniform heatmap selects the first flattened indices", "[detector]") {
  std::vector<HeatmapPeak> peaks(20);
  for (int i = 0; i < 20; ++i) {
    peaks[static_cast<size_t>(i)].conf = 0.5;
    peaks[static_cast<size_t>(i)].order = i;
  }
  select_top_n(peaks, 6);
  for (int i = 0; i < 6; ++i) CHECK(peaks[static_cast<size_t>(i)].order == i);
}

TEST_CASE("lidar query init selects hot cells and rejects oversized N", "[detector]") {
  Rng rng(53);
  nn::ParamStore store;
  Rng init(3);
  int c = 8, k = 3;
  auto grid = geom::BevGrid::make(-8, 8, -8, 8, 2.0);
  auto head = add_heatmap_head(store, "hm", c, k, init);
  auto emb = store.add("emb", {k, c}, nn::Init::XavierUniform, init);
  auto local_proj = nn::add_linear(store, "init_proj", 9 * c, c, init);
  auto f_sem = random_bev(rng, grid, c);
  auto f_raw = random_bev(rng, grid, c);

  auto res = init_queries_lidar(f_sem, f_raw, head, local_proj, emb, 5);
  CHECK(res.queries.count() == 5);
  CHECK(res.queries.space == QuerySpace::bev);
  CHECK(res.queries.ref_points.size() == 5);
  // selection equals the sort oracle over the produced heatmap
  const auto& hm = res.heatmap_probs;
  std::vector<std::pair<double, int>> oracle;
  for (int cell = 0; cell < 64; ++cell) {
    double best = -1;
    for (int ch = 0; ch < k; ++ch) best = std::max(best, hm->values[static_cast<size_t>(ch) * 64 + cell]);
    oracle.emplace_back(-best, cell);
  }
  std::sort(oracle.begin(), oracle.end());
  for (int i = 0; i < 5; ++i) {
    auto cell = geom::bev_cell_of(res.queries.ref_points[static_cast<size_t>(i)], grid);
    CHECK(cell->row * grid.width + cell->col == oracle[static_cast<size_t>(i)].second);
  }

  CHECK_THROWS_AS(init_queries_lidar(f_sem, f_raw, head, local_proj, emb, 65), ConfigError);
}

TEST_CASE("camera query init: joint top-n across views and levels", "[detector]") {
  Rng rng(54);
  nn::ParamStore store;
  Rng init(4);
  int c = 8, c_pyr = 4, k = 3;
  std::vector<HeatmapHeadParams> heads = {add_heatmap_head(store, "h1", c_pyr, k, init),
                                          add_heatmap_head(store, "h2", c_pyr, k, init)};
  auto proj = nn::add_linear(store, "proj", c_pyr, c, init);
  auto emb = store.add("emb", {k, c}, nn::Init::XavierUniform, init);
  std::vector<transfer::FeaturePyramid> pyramids(2);
  for (int v = 0; v < 2; ++v) {
    pyramids[static_cast<size_t>(v)].view_id = v;
    pyramids[static_cast<size_t>(v)].levels = {random_tensor(rng, {c_pyr, 6, 8}),
                                               random_tensor(rng, {c_pyr, 3, 4})};
  }
  auto res = init_queries_camera(pyramids, heads, proj, emb, 7, 32, 24);
  CHECK(res.queries.count() == 7);
  CHECK(res.queries.space == QuerySpace::perspective);
  CHECK(res.queries.view_ids.size() == 7);
  // oracle: concatenate all cells and sort
  std::vector<std::tuple<double, int>> oracle;
  int order = 0;
  for (int v = 0; v < 2; ++v)
    for (int l = 0; l < 2; ++l) {
      const auto& probs = res.heatmap_probs[static_cast<size_t>(v)][static_cast<size_t>(l)];
      int hw = probs->dim(1) * probs->dim(2);
      for (int cell = 0; cell < hw; ++cell) {
        double best = -1;
        for (int ch = 0; ch < k; ++ch)
          best = std::max(best, probs->values[static_cast<size_t>(ch) * hw + cell]);
        oracle.emplace_back(-best, order++);
      }
    }
  std::stable_sort(oracle.begin(), oracle.end());
  // scores of the selected queries match the oracle's top-7 confidences
  for (int i = 0; i < 7; ++i)
    CHECK(res.queries.scores[static_cast<size_t>(i)] ==
          Catch::Approx(-std::get<0>(oracle[static_cast<size_t>(i)])));

  CHECK_THROWS_AS(init_queries_camera(pyramids, heads, proj, emb, 1000, 32, 24), ConfigError);
}

TEST_CASE("decoders preserve count and reference points", "[detector]") {
  Rng rng(55);
  nn::ParamStore store;
  Rng init(5);
  int c = 8, k = 3;
  auto grid = geom::BevGrid::make(-8, 8, -8, 8, 2.0);
  auto dparams = add_lidar_decoder(store, "dec", c, 2, init);
  auto bev = random_bev(rng, grid, c);

  QuerySet q0;
  q0.features = random_tensor(rng, {4, c});
  q0.space = QuerySpace::bev;
  for (int i = 0; i < 4; ++i) {
    q0.ref_points.push_back({rng.uniform(-7, 7), rng.uniform(-7, 7)});
    q0.categories.push_back(i % k);
    q0.scores.push_back(0.5);
  }
  auto out = lidar_decoder(q0, bev, dparams);
  CHECK(out.queries.count() == 4);
  CHECK(out.queries.features->shape == std::vector<int>{4, c});
  for (int i = 0; i < 4; ++i) {
    CHECK(out.queries.ref_points[static_cast<size_t>(i)].x == q0.ref_points[static_cast<size_t>(i)].x);
    CHECK(out.queries.ref_points[static_cast<size_t>(i)].y == q0.ref_points[static_cast<size_t>(i)].y);
  }
  // cross-attention weight rows are stochastic
  for (const auto& w : out.cross_weights)
    for (int i = 0; i < w->dim(0); ++i) {
      double s = 0;
      for (int j = 0; j < w->dim(1); ++j) s += w->values[static_cast<size_t>(i) * w->dim(1) + j];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("camera decoder keeps per-view restriction intact", "[detector]") {
  Rng rng(56);
  nn::ParamStore store;
  Rng init(6);
  int c = 8, c_pyr = 4;
  auto p = add_camera_decoder(store, "dec", c, c_pyr, 2, 2, 2, init);
  std::vector<transfer::FeaturePyramid> pyramids(2);
  for (int v = 0; v < 2; ++v)
    pyramids[static_cast<size_t>(v)].levels = {random_tensor(rng, {c_pyr, 6, 8}),
                                               random_tensor(rng, {c_pyr, 3, 4})};
  QuerySet q0;
  q0.features = random_tensor(rng, {4, c});
  q0.space = QuerySpace::perspective;
  for (int i = 0; i < 4; ++i) {
    q0.ref_points.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    q0.categories.push_back(0);
    q0.view_ids.push_back(i % 2);
    q0.scores.push_back(0.5);
  }
  auto out = camera_decoder(q0, pyramids, p);
  CHECK(out.queries.count() == 4);
  CHECK(out.queries.view_ids == q0.view_ids);
  // changing view 1's pyramid must not affect view-0 queries' deformable input
  auto pyramids2 = pyramids;
  pyramids2[1].levels[0] = random_tensor(rng, {c_pyr, 6, 8});
  auto out2 = camera_decoder(q0, pyramids2, p);
  // view-0 rows identical, view-1 rows differ
  for (int i = 0; i < 4; ++i) {
    bool same = true;
    for (int j = 0; j < c; ++j)
      if (out.queries.features->values[static_cast<size_t>(i) * c + j] !=
          out2.queries.features->values[static_cast<size_t>(i) * c + j])
        same = false;
    if (q0.view_ids[static_cast<size_t>(i)] == 0)
      CHECK(same);
    else
      CHECK_FALSE(same);
  }
}

TEST_CASE("lidar head decodes zero offsets to the reference point", "[detector]") {
  Rng rng(57);
  nn::ParamStore store;
  Rng init(7);
  int c = 8, k = 3;
  auto head = add_head(store, "head", c, k, init);
  // zero all head weights: outputs are the biases (zero except cls)
  for (const auto& name : store.names())
    if (name.find(".w") != std::string::npos)
      for (auto& v : store.get(name)->values) v = 0.0;

  QuerySet q;
  q.features = random_tensor(rng, {2, c});
  q.space = QuerySpace::bev;
  q.ref_points = {{3.5, -2.0}, {-1.0, 4.0}};
  q.categories = {0, 1};
  q.scores = {0.5, 0.5};
  auto out = head_lidar_view(q, head);
  auto dets = decode_lidar_detections(out, DetSource::lidar);
  CHECK(dets[0].box.center.x == Catch::Approx(3.5));
  CHECK(dets[0].box.center.y == Catch::Approx(-2.0));
  CHECK(dets[1].box.center.x == Catch::Approx(-1.0));
  // log-size zero decodes to a unit box
  CHECK(dets[0].box.size.x == Catch::Approx(1.0));
  CHECK(dets[0].box.size.y == Catch::Approx(1.0));
  CHECK(dets[0].box.size.z == Catch::Approx(1.0));
}

TEST_CASE("perspective head back-projects through the intrinsics", "[detector]") {
  geom::CameraModel cam;
  cam.intrinsics.m = {40, 0, 32, 0, 40, 20, 0, 0, 1};
  cam.image_width = 64;
  cam.image_height = 40;
  // ref at the principal point, zero offset, depth d: center (0, 0, d)
  std::vector<double> row = {32, 20, 5.0, 0, 0, 0, 0, 1, 0, 0};
  auto dec = decode_cam_box_row(row.data(), cam);
  CHECK_FALSE(dec.depth_clamped);
  CHECK(dec.box.center.x == Catch::Approx(0.0).margin(1e-12));
  CHECK(dec.box.center.y == Catch::Approx(0.0).margin(1e-12));
  CHECK(dec.box.center.z == Catch::Approx(5.0));
  CHECK(dec.box.size.x == Catch::Approx(1.0));

  // non-positive depth clamps with a flag
  row[2] = -0.4;
  auto clamped = decode_cam_box_row(row.data(), cam);
  CHECK(clamped.depth_clamped);
  CHECK(clamped.box.center.z == Catch::Approx(kMinDecodedDepth));
}

TEST_CASE("random head rows match an independent decode oracle", "[detector]") {
  Rng rng(58);
  geom::CameraModel cam;
  cam.intrinsics.m = {40, 0, 32, 0, 40, 20, 0, 0, 1};
  cam.image_width = 64;
  cam.image_height = 40;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> row(10);
    row[0] = rng.uniform(0, 64);
    row[1] = rng.uniform(0, 40);
    row[2] = rng.uniform(0.5, 30);
    for (int j = 3; j < 6; ++j) row[j] = rng.uniform(-1, 1);
    double yaw = rng.uniform(-3, 3);
    row[6] = std::sin(yaw);
    row[7] = std::cos(yaw);
    row[8] = rng.uniform(-2, 2);
    row[9] = rng.uniform(-2, 2);
    auto dec = decode_cam_box_row(row.data(), cam);
    // oracle: solve K p = z (u, v, 1) directly
    double z = row[2];
    double x = (row[0] - 32.0) * z / 40.0;
    double y = (row[1] - 20.0) * z / 40.0;
    CHECK(dec.box.center.x == Catch::Approx(x).margin(1e-9));
    CHECK(dec.box.center.y == Catch::Approx(y).margin(1e-9));
    CHECK(dec.box.size.y == Catch::Approx(std::exp(row[4])).margin(1e-9));
    // yaw round trip within 1e-6 for |yaw| < pi
    CHECK(std::abs(geom::normalize_angle(dec.box.yaw - yaw)) <= 1e-6);
  }
}

TEST_CASE("image gt heatmaps live only at the assigned level", "[detector]") {
  scene::GeneratorConfig gc;
  gc.min_objects = 1;
  gc.max_objects = 1;
  gc.far_fraction = 0;
  std::vector<double> thr = {0, 3.84, 7.68, 15.36};
  Rng rng(59);
  int checked = 0;
  for (uint64_t seed = 0; seed < 100 && checked < 10; ++seed) {
    auto s = scene::generate_scene(seed, gc, 0);
    std::vector<geom::CameraModel> cams;
    for (const auto& v : s.cameras) cams.push_back(v.model);
    auto assignments = assign_objects_to_images(s.objects, cams, thr, 0);
    if (assignments.empty()) continue;  // object outside both camera cones
    ++checked;

    std::vector<transfer::FeaturePyramid> pyramids;
    for (int v = 0; v < 2; ++v) {
      transfer::FeaturePyramid p;
      p.view_id = v;
      p.levels = {random_tensor(rng, {4, 10, 16}), random_tensor(rng, {4, 5, 8}),
                  random_tensor(rng, {4, 3, 4}), random_tensor(rng, {4, 2, 2})};
      pyramids.push_back(p);
    }
    auto gt = splat_image_gt_heatmaps(s.objects, cams, pyramids, thr, gc.num_categories);
    for (const auto& a : assignments) {
      int hot_levels = 0;
      for (size_t l = 0; l < 4; ++l) {
        double mx = 0;
        for (double v : gt.maps[static_cast<size_t>(a.view)][l]) mx = std::max(mx, v);
        if (mx == 1.0) {
          ++hot_levels;
          CHECK(static_cast<int>(l) == a.level);
        }
      }
      CHECK(hot_levels == 1);
    }
  }
  REQUIRE(checked >= 5);
}
