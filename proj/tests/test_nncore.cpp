#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "sparsefuse/nn/attention.hpp"
#include "sparsefuse/nn/conv.hpp"
#include "sparsefuse/nn/finite_diff.hpp"
#include "sparsefuse/nn/modules.hpp"
#include "sparsefuse/nn/ops.hpp"
#include "sparsefuse/nn/params.hpp"
#include "sparsefuse/gradchecks.hpp"
#include "test_helpers.hpp"

using namespace sparsefuse;
using namespace sparsefuse::nn;
using helpers::random_tensor;

TEST_CASE("softmax of uniform logits is uniform", "[nncore]") {
  auto x = make_tensor({4}, {0.7, 0.7, 0.7, 0.7});
  auto y = softmax(x);
  for (double v : y->values) CHECK(v == Catch::Approx(0.25));
}

TEST_CASE("softmax is shift invariant", "[nncore]") {
  Rng rng(3);
  auto x = random_tensor(rng, {5, 7});
  auto shifted = make_tensor({5, 7});
  for (size_t i = 0; i < x->values.size(); ++i) shifted->values[i] = x->values[i] + 3.17;
  auto a = softmax(x), b = softmax(shifted);
  for (size_t i = 0; i < a->values.size(); ++i)
    CHECK(std::abs(a->values[i] - b->values[i]) <= 1e-6);
}

TEST_CASE("softmax rows sum to one and stay in (0,1)", "[nncore]") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    auto x = random_tensor(rng, {6, 9}, -5, 5);
    auto y = softmax(x);
    for (int i = 0; i < 6; ++i) {
      double s = 0;
      for (int j = 0; j < 9; ++j) {
        double v = y->values[static_cast<size_t>(i) * 9 + j];
        CHECK(v > 0);
        CHECK(v < 1);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("shape mismatches are rejected with both shapes named", "[nncore]") {
  auto a = make_tensor({2, 3});
  auto b = make_tensor({3, 2});
  CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("(2,3)") &&
                                   Catch::Matchers::ContainsSubstring("(3,2)"));
  CHECK_THROWS_AS(matmul(a, a), ConfigError);
}

TEST_CASE("layer_norm output rows have zero mean and unit variance", "[nncore]") {
  Rng rng(5);
  auto x = random_tensor(rng, {8, 16});
  auto gamma = make_tensor({16});
  auto beta = make_tensor({16});
  for (auto& v : gamma->values) v = 1.0;
  auto y = layer_norm(x, gamma, beta);
  for (int i = 0; i < 8; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 16; ++j) mu += y->values[static_cast<size_t>(i) * 16 + j];
    mu /= 16;
    for (int j = 0; j < 16; ++j) {
      double d = y->values[static_cast<size_t>(i) * 16 + j] - mu;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("single-token self-attention passes through the value path", "[nncore]") {
  Rng rng(6);
  AttentionParams p = gradchecks::rnd_attention(rng, 6, 2);
  auto x = random_tensor(rng, {1, 6});
  auto res = self_attention(x, nullptr, p);
  // weights over a single key are exactly [1]
  for (const auto& w : res.weights) {
    REQUIRE(w->size() == 1);
    CHECK(w->values[0] == Catch::Approx(1.0));
  }
  // output equals output-projected value projection of the token
  auto v = linear(x, p.wv, p.bv);
  auto want = linear(v, p.wo, p.bo);
  for (size_t i = 0; i < want->values.size(); ++i)
    CHECK(res.out->values[i] == Catch::Approx(want->values[i]).margin(1e-12));
}

TEST_CASE("self-attention with zero positions is permutation equivariant", "[nncore]") {
  Rng rng(7);
  AttentionParams p = gradchecks::rnd_attention(rng, 8, 2);
  auto x = random_tensor(rng, {5, 8});
  auto out = self_attention(x, nullptr, p).out;

  std::vector<int> perm = {3, 0, 4, 1, 2};
  auto xp = gather_rows(x, perm);
  auto outp = self_attention(xp, nullptr, p).out;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(std::abs(outp->values[static_cast<size_t>(i) * 8 + j] -
                     out->values[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 8 + j]) <=
            1e-6);
}

TEST_CASE("attention weight rows sum to one", "[nncore]") {
  Rng rng(8);
  AttentionParams p = gradchecks::rnd_attention(rng, 8, 2);
  auto q = random_tensor(rng, {4, 8});
  auto kv = random_tensor(rng, {9, 8});
  auto res = multi_head_attention(q, kv, nullptr, nullptr, p);
  for (const auto& w : res.weights)
    for (int i = 0; i < w->dim(0); ++i) {
      double s = 0;
      for (int j = 0; j < w->dim(1); ++j) s += w->values[static_cast<size_t>(i) * w->dim(1) + j];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("deformable attention degenerates to a value gather", "[nncore]") {
  // one head, one level, one point, zero offsets, identity output projection,
  // reference exactly at a pixel center
  int c = 3;
  DeformableParams p;
  p.heads = 1;
  p.points = 1;
  Rng rng(9);
  p.wv = random_tensor(rng, {c, c});
  p.bv = random_tensor(rng, {c});
  p.w_off = make_tensor({c, 2});
  p.b_off = make_tensor({2});
  p.w_wt = make_tensor({c, 1});
  p.b_wt = make_tensor({1});
  p.wo = make_tensor({c, c});
  p.bo = make_tensor({c});
  for (int i = 0; i < c; ++i) p.wo->values[static_cast<size_t>(i) * c + i] = 1.0;

  auto map = random_tensor(rng, {c, 4, 6});
  // pixel (2,1) center in normalized coords
  auto ref = make_tensor({1, 2}, {(2 + 0.5) / 6.0, (1 + 0.5) / 4.0});
  auto q = random_tensor(rng, {1, c});
  auto out = deformable_attention(q, ref, {map}, p);

  // expected: value projection of the feature at pixel (2,1)
  auto node = make_tensor({1, c});
  for (int ch = 0; ch < c; ++ch)
    node->values[static_cast<size_t>(ch)] = map->values[(static_cast<size_t>(ch) * 4 + 1) * 6 + 2];
  auto want = linear(node, p.wv, p.bv);
  for (int ch = 0; ch < c; ++ch)
    CHECK(out->values[static_cast<size_t>(ch)] ==
          Catch::Approx(want->values[static_cast<size_t>(ch)]).margin(1e-12));
}

TEST_CASE("bilinear sampling of a constant map returns the constant", "[nncore]") {
  auto map = make_tensor({2, 5, 5});
  for (auto& v : map->values) v = 0.37;
  auto coords = make_tensor({3, 2}, {0.5, 0.5, 0.3, 0.7, 0.138, 0.42});
  auto out = bilinear_sample(map, coords);
  for (double v : out->values) CHECK(v == Catch::Approx(0.37));
}

TEST_CASE("identity-initialized residual block reproduces relu(input)", "[nncore]") {
  Rng rng(11);
  ParamStore store;
  auto p = add_residual_block(store, "blk", 4, 4, false, rng);
  // zero the second norm's gain: the main path contributes nothing
  for (auto& v : p.g2->values) v = 0.0;
  auto x = random_tensor(rng, {4, 5, 6});
  auto y = residual_block(x, p, 1);
  for (size_t i = 0; i < x->values.size(); ++i)
    CHECK(y->values[i] == Catch::Approx(std::max(0.0, x->values[i])).margin(1e-12));
}

TEST_CASE("stride-2 convolution halves spatial dims with ceil", "[nncore]") {
  Rng rng(12);
  auto x = random_tensor(rng, {2, 5, 7});
  auto w = random_tensor(rng, {3, 18});
  auto b = random_tensor(rng, {3});
  auto y = conv3x3(x, w, b, 2);
  CHECK(y->dim(1) == 3);  // ceil(5/2)
  CHECK(y->dim(2) == 4);  // ceil(7/2)
}

TEST_CASE("adam: zero gradients and zero decay leave parameters unchanged", "[nncore]") {
  Rng rng(13);
  ParamStore store;
  auto p = store.add("w", {3}, Init::XavierUniform, rng);
  auto before = p->values;
  AdamConfig ac;
  ac.weight_decay = 0.0;
  AdamW opt(store, ac);
  p->ensure_grad();
  opt.step();
  CHECK(p->values == before);
}

TEST_CASE("adam: frozen prefixes receive zero updates", "[nncore]") {
  Rng rng(14);
  ParamStore store;
  auto a = store.add("frozen.w", {4}, Init::XavierUniform, rng);
  auto b = store.add("live.w", {4}, Init::XavierUniform, rng);
  auto a0 = a->values, b0 = b->values;
  store.freeze_prefix("frozen.");
  AdamW opt(store, {});
  a->ensure_grad();
  b->ensure_grad();
  for (auto& g : a->grad) g = 1.0;
  for (auto& g : b->grad) g = 1.0;
  opt.step();
  CHECK(a->values == a0);
  CHECK(b->values != b0);
  store.clear_frozen();
}

TEST_CASE("adam matches a hand-computed two-step trajectory", "[nncore]") {
  Rng rng(15);
  ParamStore store;
  auto p = store.add("w", {1}, Init::Zeros, rng);
  p->values[0] = 1.0;
  AdamConfig ac;
  ac.lr = 0.1;
  ac.weight_decay = 0.01;
  AdamW opt(store, ac);

  p->ensure_grad();
  p->grad[0] = 0.5;
  opt.step();
  double m = 0.1 * 0.5, v = 0.001 * 0.25;
  double w1 = 1.0 - 0.1 * ((m / 0.1) / (std::sqrt(v / 0.001) + 1e-8) + 0.01 * 1.0);
  CHECK(p->values[0] == Catch::Approx(w1).epsilon(1e-12));

  p->zero_grad();
  p->grad[0] = 0.25;
  opt.step();
  m = 0.9 * m + 0.1 * 0.25;
  v = 0.999 * v + 0.001 * 0.0625;
  double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  double w2 = w1 - 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * w1);
  CHECK(p->values[0] == Catch::Approx(w2).epsilon(1e-12));
}

TEST_CASE("adam rejects explicitly requested parameters without gradients", "[nncore]") {
  Rng rng(16);
  ParamStore store;
  store.add("w", {2}, Init::XavierUniform, rng);
  AdamW opt(store, {});
  CHECK_THROWS_AS(opt.step({"w"}), ConfigError);
}

TEST_CASE("checkpoint blobs round trip bit-exactly", "[nncore]") {
  Rng rng(17);
  ParamStore a;
  a.add("backbone.w", {3, 5}, Init::XavierUniform, rng);
  a.add("backbone.b", {5}, Init::Zeros, rng);
  a.add("head.w", {2, 2, 4}, Init::XavierUniform, rng);
  auto blob = serialize_tensors(a);

  Rng rng2(99);
  ParamStore b;
  b.add("backbone.w", {3, 5}, Init::XavierUniform, rng2);
  b.add("backbone.b", {5}, Init::Zeros, rng2);
  b.add("head.w", {2, 2, 4}, Init::XavierUniform, rng2);
  deserialize_tensors(blob, b);
  CHECK(serialize_tensors(b) == blob);
}

TEST_CASE("checkpoint loader rejects unknown and misshapen records", "[nncore]") {
  Rng rng(18);
  ParamStore a;
  a.add("x", {2, 2}, Init::XavierUniform, rng);
  auto blob = serialize_tensors(a);

  ParamStore empty;
  CHECK_THROWS_AS(deserialize_tensors(blob, empty), ConfigError);
  // ignore_unknown skips the record instead
  deserialize_tensors(blob, empty, nullptr, true);

  Rng rng2(19);
  ParamStore wrong;
  wrong.add("x", {4}, Init::Zeros, rng2);
  CHECK_THROWS_AS(deserialize_tensors(blob, wrong), ConfigError);
}

TEST_CASE("finite differences recover analytic derivatives", "[nncore]") {
  // f(x) = x^2 at x = 3
  auto sq = [](const std::vector<double>& x) { return x[0] * x[0]; };
  auto g = finite_diff_grad(sq, {3.0}, 1e-5);
  CHECK(std::abs(g[0] - 6.0) <= 1e-6);

  // linear functions are differentiated exactly for any h
  auto lin = [](const std::vector<double>& x) { return 2.5 * x[0] - 1.25 * x[1]; };
  for (double h : {1e-2, 1e-5, 1e-7}) {
    auto gl = finite_diff_grad(lin, {0.3, -0.8}, h);
    CHECK(gl[0] == Catch::Approx(2.5).epsilon(1e-8));
    CHECK(gl[1] == Catch::Approx(-1.25).epsilon(1e-8));
  }
}

TEST_CASE("analytic backward agrees with finite differences on a composed mlp", "[nncore]") {
  Rng rng(20);
  auto x = gradchecks::rnd(rng, {3, 4});
  auto w1 = gradchecks::rnd(rng, {4, 8});
  auto b1 = gradchecks::rnd(rng, {8});
  auto w2 = gradchecks::rnd(rng, {8, 2});
  auto b2 = gradchecks::rnd(rng, {2});
  auto res = gradcheck([&] { return sum_all(mlp2(x, w1, b1, w2, b2)); },
                       {{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}, rng);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("the full gradient suite passes at reduced config count", "[nncore]") {
  std::ostringstream os;
  bool ok = gradchecks::run_all(os, 10);
  INFO(os.str());
  CHECK(ok);
}

TEST_CASE("no-grad mode skips graph construction", "[nncore]") {
  Rng rng(21);
  auto w = random_tensor(rng, {3, 3});
  w->requires_grad = true;
  auto x = random_tensor(rng, {2, 3});
  {
    NoGradGuard ng;
    auto y = matmul(x, w);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
  }
  auto y = matmul(x, w);
  CHECK(y->requires_grad);
}
