#include <catch2/catch_amalgamated.hpp>

#include "sparsefuse/evalmetrics.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace sparsefuse;
using namespace sparsefuse::eval;

namespace {

det::Detection mk_det(int cat, double score, double x, double y) {
  det::Detection d;
  d.category = cat;
  d.score = score;
  d.box.center = {x, y, 0.5};
  d.box.size = {1, 1, 1};
  return d;
}

scene::ObjectSpec mk_gt(int cat, double x, double y) {
  scene::ObjectSpec o;
  o.category = cat;
  o.box.center = {x, y, 0.5};
  o.box.size = {1, 1, 1};
  return o;
}

}  // namespace

TEST_CASE("greedy matching basics", "[eval]") {
  std::vector<scene::ObjectSpec> gts = {mk_gt(0, 5, 5)};
  auto tp = match_greedy({mk_det(0, 0.9, 5, 5)}, gts, 2.0);
  CHECK(tp == std::vector<bool>{true});

  // two predictions on one GT: higher score wins, the other is FP
  auto tp2 = match_greedy({mk_det(0, 0.9, 5.1, 5.0), mk_det(0, 0.5, 4.9, 5.0)}, gts, 2.0);
  CHECK(tp2 == std::vector<bool>{true, false});

  // wrong class at zero distance never matches
  auto tp3 = match_greedy({mk_det(1, 0.9, 5, 5)}, gts, 2.0);
  CHECK(tp3 == std::vector<bool>{false});

  // outside the radius
  auto tp4 = match_greedy({mk_det(0, 0.9, 8, 5)}, gts, 2.0);
  CHECK(tp4 == std::vector<bool>{false});
}

TEST_CASE("greedy matching agrees with the reference simulation", "[eval]") {
  Rng rng(71);
  for (int t = 0; t < 300; ++t) {
    int np = rng.uniform_int(0, 5), ng = rng.uniform_int(0, 5);
    std::vector<det::Detection> preds;
    std::vector<oracles::SimplePred> spreds;
    std::vector<scene::ObjectSpec> gts;
    std::vector<oracles::SimpleGt> sgts;
    for (int i = 0; i < np; ++i) {
      int cat = rng.uniform_int(0, 1);
      double score = rng.uniform(0, 1), x = rng.uniform(-5, 5), y = rng.uniform(-5, 5);
      preds.push_back(mk_det(cat, score, x, y));
      spreds.push_back({cat, score, x, y});
    }
    std::sort(preds.begin(), preds.end(),
              [](const auto& a, const auto& b) { return a.score > b.score; });
    std::sort(spreds.begin(), spreds.end(),
              [](const auto& a, const auto& b) { return a.score > b.score; });
    for (int j = 0; j < ng; ++j) {
      int cat = rng.uniform_int(0, 1);
      double x = rng.uniform(-5, 5), y = rng.uniform(-5, 5);
      gts.push_back(mk_gt(cat, x, y));
      sgts.push_back({cat, x, y});
    }
    auto got = match_greedy(preds, gts, 2.0);
    auto want = oracles::greedy_reference(spreds, sgts, 2.0);
    CHECK(got == want);
  }
}

TEST_CASE("average precision endpoints", "[eval]") {
  // all predictions TP covering all GT
  CHECK(average_precision({true, true, true}, 3) == Catch::Approx(1.0));
  // zero predictions -> 0
  CHECK(average_precision({}, 4) == 0.0);
  // hand-computed 3-point PR curve: TP, FP, TP over 2 GT
  // precisions at TP ranks: 1/1 and 2/3 -> AP = (1 + 2/3) / 2
  CHECK(average_precision({true, false, true}, 2) == Catch::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("adding a TP at the top rank never decreases AP", "[eval]") {
  Rng rng(72);
  for (int t = 0; t < 200; ++t) {
    int n = rng.uniform_int(1, 10);
    std::vector<bool> flags(static_cast<size_t>(n));
    int tp = 0;
    for (auto v : flags) (void)v;
    for (int i = 0; i < n; ++i) {
      flags[static_cast<size_t>(i)] = rng.uniform() < 0.4;
      if (flags[static_cast<size_t>(i)]) ++tp;
    }
    int n_gt = tp + rng.uniform_int(1, 4);
    double before = average_precision(flags, n_gt);
    std::vector<bool> with_top = {true};
    with_top.insert(with_top.end(), flags.begin(), flags.end());
    double after = average_precision(with_top, n_gt);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("a perfect predictor scores mAP 1.0", "[eval]") {
  Rng rng(73);
  scene::GeneratorConfig gc;
  gc.min_objects = 2;
  gc.max_objects = 5;
  std::vector<ScenePredictions> preds;
  std::vector<SceneGts> gts;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto s = scene::generate_scene(seed, gc, static_cast<int>(seed));
    SceneGts g{s.scene_id, s.objects};
    ScenePredictions p;
    p.scene_id = s.scene_id;
    for (const auto& o : s.objects) {
      det::Detection d;
      d.category = o.category;
      d.score = 1.0;
      d.box = o.box;
      p.detections.push_back(d);
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  auto m = evaluate_branch(preds, gts, gc.num_categories);
  CHECK(m.map == Catch::Approx(1.0));
  CHECK(m.map_at_2m == Catch::Approx(1.0));
}

TEST_CASE("recall breakdown partitions the GT count", "[eval]") {
  std::vector<SceneGts> gts(1);
  gts[0].scene_id = 0;
  gts[0].objects = {mk_gt(0, 3, 0), mk_gt(1, 9, 0), mk_gt(0, -15, 2), mk_gt(2, 0, 22)};
  std::vector<ScenePredictions> lidar(1), cam(1);
  lidar[0].scene_id = cam[0].scene_id = 0;
  lidar[0].detections = {mk_det(0, 0.9, 3.5, 0),    // recalls gt0 (1.5 m away, correct class)
                         mk_det(1, 0.8, 9.0, 2.5),  // 2.5 m away: outside the radius
                         mk_det(0, 0.7, -15.2, 2)};
  cam[0].detections = {mk_det(0, 0.9, 3.0, 0.5),   // both recall gt0
                       mk_det(2, 0.6, 0.4, 21.7)};

  auto r = modality_recall(lidar, cam, gts, 3);
  CHECK(r.sum(r.both) == 1);        // gt0
  CHECK(r.sum(r.lidar_only) == 1);  // gt2
  CHECK(r.sum(r.camera_only) == 1); // gt3
  CHECK(r.sum(r.neither) == 1);     // gt1 (2.5 m misses)
  int total = r.sum(r.both) + r.sum(r.lidar_only) + r.sum(r.camera_only) + r.sum(r.neither);
  CHECK(total == 4);

  // wrong class at 0.5 m must not recall
  std::vector<ScenePredictions> wrong(1);
  wrong[0].scene_id = 0;
  wrong[0].detections = {mk_det(1, 0.9, 3.0, 0.5)};
  auto r2 = modality_recall(wrong, wrong, gts, 3);
  CHECK(r2.sum(r2.neither) == 4);
}

TEST_CASE("report serialization is stable and NaN-detectable", "[eval]") {
  MetricReport r;
  r.num_categories = 2;
  r.num_scenes = 3;
  auto mk_branch = [] {
    BranchMetrics b;
    b.ap = {{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}};
    b.gt_counts = {5, 7};
    b.map = 0.45;
    b.map_at_2m = 0.5;
    return b;
  };
  r.lidar = r.camera_before_vt = r.camera_after_vt = r.fused = mk_branch();
  auto a = serialize_report(r);
  auto b = serialize_report(r);
  CHECK(a == b);
  CHECK_FALSE(report_has_nan(r));
  r.fused.map = std::nan("");
  CHECK(report_has_nan(r));
}
