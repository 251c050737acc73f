#include <catch2/catch_amalgamated.hpp>

#include "sparsefuse/losses.hpp"
#include "sparsefuse/nn/finite_diff.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace sparsefuse;
using namespace sparsefuse::loss;
using sparsefuse::nn::make_tensor;

TEST_CASE("gaussian focal loss hand-evaluated two-cell case", "[losses]") {
  auto p = make_tensor({2}, {0.6, 0.3});
  auto l = gaussian_focal_loss(p, {1.0, 0.0});
  // -[(0.4)^2 ln 0.6 + (0.3)^2 ln 0.7]
  CHECK(l->values[0] == Catch::Approx(0.11383).margin(1e-4));
}

TEST_CASE("gaussian focal loss is near zero for a clamp-saturated prediction", "[losses]") {
  int n = 128;
  std::vector<double> gt(n, 0.0);
  gt[17] = 1.0;
  auto pred = make_tensor({n});
  for (int i = 0; i < n; ++i) pred->values[static_cast<size_t>(i)] = i == 17 ? 0.99999 : 1e-6;
  auto l = gaussian_focal_loss(pred, gt);
  CHECK(l->values[0] >= 0.0);
  CHECK(l->values[0] <= 2e-3);
}

TEST_CASE("gaussian focal loss is nonnegative on random inputs", "[losses]") {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    auto pred = make_tensor({24});
    std::vector<double> gt(24, 0.0);
    for (int i = 0; i < 24; ++i) pred->values[static_cast<size_t>(i)] = rng.uniform(0.01, 0.99);
    for (int i = 0; i < 4; ++i) gt[static_cast<size_t>(rng.uniform_int(0, 23))] = rng.uniform(0.1, 1.0);
    gt[static_cast<size_t>(rng.uniform_int(0, 23))] = 1.0;
    CHECK(gaussian_focal_loss(pred, gt)->values[0] >= 0.0);
  }
}

TEST_CASE("hungarian solves the documented 3x3 case", "[losses]") {
  auto m = hungarian_match({4, 1, 3, 2, 0, 5, 3, 2, 2}, 3, 3);
  CHECK(m.total_cost == Catch::Approx(5.0));
  REQUIRE(m.pairs.size() == 3);
  std::vector<std::pair<int, int>> want = {{0, 1}, {1, 0}, {2, 2}};
  CHECK(m.pairs == want);
  CHECK(m.unmatched_rows.empty());
}

TEST_CASE("hungarian diagonal and degenerate cases", "[losses]") {
  auto diag = hungarian_match({0, 9, 9, 9, 0, 9, 9, 9, 0}, 3, 3);
  CHECK(diag.total_cost == Catch::Approx(0.0));
  for (int i = 0; i < 3; ++i) CHECK(diag.pairs[static_cast<size_t>(i)] == std::pair{i, i});

  auto one = hungarian_match({7}, 1, 1);
  CHECK(one.total_cost == Catch::Approx(7.0));

  auto empty = hungarian_match({}, 0, 0);
  CHECK(empty.pairs.empty());
  CHECK(empty.total_cost == 0.0);

  CHECK_THROWS_AS(hungarian_match({std::numeric_limits<double>::infinity()}, 1, 1), ConfigError);
}

TEST_CASE("hungarian equals brute force on 1000 random matrices", "[losses]") {
  Rng rng(32);
  for (int t = 0; t < 1000; ++t) {
    int n = rng.uniform_int(1, 7), m = rng.uniform_int(1, 7);
    std::vector<double> cost(static_cast<size_t>(n) * m);
    for (auto& c : cost) c = rng.uniform(-5, 5);
    auto got = hungarian_match(cost, n, m);
    double want = oracles::brute_force_assignment(cost, n, m);
    REQUIRE(got.total_cost == Catch::Approx(want).margin(1e-9));
    CHECK(static_cast<int>(got.pairs.size()) == std::min(n, m));
  }
}

TEST_CASE("matching is invariant to a constant cost shift", "[losses]") {
  Rng rng(33);
  for (int t = 0; t < 100; ++t) {
    int n = rng.uniform_int(2, 6), m = rng.uniform_int(2, 6);
    std::vector<double> cost(static_cast<size_t>(n) * m);
    for (auto& c : cost) c = rng.uniform(0, 10);
    double shift = rng.uniform(-20, 20);
    auto base = hungarian_match(cost, n, m);
    for (auto& c : cost) c += shift;
    auto shifted = hungarian_match(cost, n, m);
    CHECK(base.pairs == shifted.pairs);
    CHECK(shifted.total_cost ==
          Catch::Approx(base.total_cost + shift * std::min(n, m)).margin(1e-9));
  }
}

TEST_CASE("detection loss is tiny when predictions equal saturated GT", "[losses]") {
  int n = 3, k = 4;
  std::vector<int> gt_cls = {2, 0, 3};
  std::vector<std::vector<double>> gt_box(3, std::vector<double>(10));
  Rng rng(34);
  for (auto& row : gt_box)
    for (auto& v : row) v = rng.uniform(-1, 1);

  auto logits = make_tensor({n, k});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      logits->values[static_cast<size_t>(i) * k + j] = j == gt_cls[static_cast<size_t>(i)] ? 14.0 : -14.0;
  auto boxes = make_tensor({n, 10});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 10; ++j)
      boxes->values[static_cast<size_t>(i) * 10 + j] = gt_box[static_cast<size_t>(i)][static_cast<size_t>(j)];

  auto res = detection_loss(logits, boxes, gt_cls, gt_box);
  CHECK(res.total->values[0] >= 0.0);
  CHECK(res.total->values[0] <= 1e-2);
  CHECK(res.match.pairs.size() == 3);
}

TEST_CASE("zero GT objects leave pure background classification loss", "[losses]") {
  Rng rng(35);
  auto logits = helpers::random_tensor(rng, {5, 4}, -1, 1);
  auto boxes = helpers::random_tensor(rng, {5, 10});
  auto res = detection_loss(logits, boxes, {}, {});
  CHECK(res.match.pairs.empty());
  CHECK(static_cast<int>(res.match.unmatched_rows.size()) == 5);
  CHECK(res.total->values[0] > 0.0);

  // with strong negative logits the background loss approaches zero
  auto low = make_tensor({5, 4});
  for (auto& v : low->values) v = -14.0;
  auto res2 = detection_loss(low, boxes, {}, {});
  CHECK(res2.total->values[0] <= 1e-4);
}

TEST_CASE("one-pred one-gt detection loss matches a closed form", "[losses]") {
  auto logits = make_tensor({1, 2}, {0.4, -0.3});
  auto boxes = make_tensor({1, 10}, {1, 2, 0.5, 0.1, 0.2, 0.3, 0.8, 0.6, 0, 0});
  std::vector<int> gt_cls = {0};
  std::vector<std::vector<double>> gt_box = {{1.5, 1.4, 0.3, 0.2, 0.1, 0.5, 0.7, 0.5, 0, 0}};

  double p0 = 1 / (1 + std::exp(-0.4)), p1 = 1 / (1 + std::exp(0.3));
  double focal = -0.25 * std::pow(1 - p0, 2.0) * std::log(p0) -
                 0.75 * std::pow(p1, 2.0) * std::log(1 - p1);
  double l1 = std::abs(1 - 1.5) + std::abs(2 - 1.4) + std::abs(0.5 - 0.3) + std::abs(0.1 - 0.2) +
              std::abs(0.2 - 0.1) + std::abs(0.3 - 0.5) + std::abs(0.8 - 0.7) +
              std::abs(0.6 - 0.5) + 0 + 0;
  auto res = detection_loss(logits, boxes, gt_cls, gt_box);
  CHECK(res.total->values[0] == Catch::Approx(focal + l1).margin(1e-9));
}

TEST_CASE("total loss composes the documented arithmetic", "[losses]") {
  auto mk = [](double v) {
    auto t = make_tensor({1});
    t->values[0] = v;
    return t;
  };
  LossWeights w;  // alpha 0.1, beta 1, gamma 1
  auto b = total_loss(mk(2), mk(1), mk(1), mk(1), mk(1), w);
  CHECK(b.total->values[0] == Catch::Approx(4.2));

  auto zero = total_loss(mk(0), mk(0), mk(0), mk(0), mk(0), w);
  CHECK(zero.total->values[0] == 0.0);
}

TEST_CASE("total loss gradient flows through every component", "[losses]") {
  Rng rng(36);
  auto a = helpers::random_tensor(rng, {1}, 0.5, 1.5);
  auto b = helpers::random_tensor(rng, {1}, 0.5, 1.5);
  for (auto t : {a, b}) t->requires_grad = true;
  LossWeights w;
  w.alpha = 0.1;
  w.gamma = 2.0;
  auto lb = total_loss(a, b, b, a, b, w);
  nn::backward(lb.total);
  // d total / d a = alpha + beta * 1 (the lidar slot)
  CHECK(a->grad[0] == Catch::Approx(0.1 + 1.0));
  // d total / d b = beta * (gamma + 1 + 1)
  CHECK(b->grad[0] == Catch::Approx(2.0 + 1.0 + 1.0));
}
