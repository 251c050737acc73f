#ifndef SPARSEFUSE_GRADCHECKS_HPP
#define SPARSEFUSE_GRADCHECKS_HPP

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "sparsefuse/fusion.hpp"
#include "sparsefuse/nn/finite_diff.hpp"

namespace sparsefuse::gradchecks {

using nn::TensorPtr;

inline constexpr double kTolerance = 1e-4;

// Random tensors kept away from the kinks of relu / max / bilinear sampling,
// where a central difference straddles the subgradient.
inline TensorPtr rnd(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  auto t = nn::make_tensor(std::move(shape));
  for (auto& v : t->values) {
    v = rng.uniform(lo, hi);
    if (std::abs(v) < 1e-3) v += v >= 0 ? 2e-3 : -2e-3;
  }
  return t;
}

inline TensorPtr rnd_coords(Rng& rng, int n) {
  auto t = nn::make_tensor({n, 2});
  for (auto& v : t->values) v = rng.uniform(0.08, 0.92) + 1.7e-3;
  return t;
}

struct SuiteReport {
  int items = 0, failures = 0;
  double worst = 0;
  std::string worst_item;
};

class Suite {
 public:
  Suite(std::ostream& os, int configs) : os_(os), configs_(configs) {}

  // One named check: `build` receives a per-config RNG and returns the
  // forward closure plus the leaf tensors to differentiate.
  using Setup = std::function<std::pair<std::function<TensorPtr()>,
                                        std::vector<std::pair<std::string, TensorPtr>>>(Rng&)>;

  void item(const std::string& name, const Setup& build, int max_coords = 0) {
    double worst = 0;
    for (int c = 0; c < configs_; ++c) {
      Rng rng = Rng(splitmix64(fnv1a64(name) ^ static_cast<uint64_t>(c * 2654435761u + 17)));
      auto [fwd, inputs] = build(rng);
      auto res = nn::gradcheck(fwd, inputs, rng, max_coords);
      worst = std::max(worst, res.max_rel_err);
    }
    ++report_.items;
    bool ok = worst <= kTolerance;
    if (!ok) ++report_.failures;
    if (worst > report_.worst) {
      report_.worst = worst;
      report_.worst_item = name;
    }
    os_ << (ok ? "  ok  " : "  FAIL") << "  " << name << "  max_rel_err " << worst << "  ("
        << configs_ << " configs)\n";
  }

  const SuiteReport& report() const { return report_; }

 private:
  std::ostream& os_;
  int configs_;
  SuiteReport report_;
};

// ---------------------------------------------------------------------------

inline void add_primitive_checks(Suite& s) {
  using namespace nn;
  s.item("add", [](Rng& r) {
    auto a = rnd(r, {3, 4}), b = rnd(r, {3, 4});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(mul(add(a, b), b)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("sub_scale", [](Rng& r) {
    auto a = rnd(r, {3, 4}), b = rnd(r, {3, 4});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(scale(sub(a, b), 1.7)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("relu_sigmoid", [](Rng& r) {
    auto a = rnd(r, {5, 3});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(sigmoid(relu(a))); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}}};
  });
  s.item("max_elem", [](Rng& r) {
    auto a = rnd(r, {4, 4}), b = rnd(r, {4, 4});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(mul(max_elem(a, b), a)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("mul_colvec", [](Rng& r) {
    auto a = rnd(r, {4, 3}), w = rnd(r, {4, 1});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(mul_colvec(a, w)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"w", w}}};
  });
  s.item("matmul", [](Rng& r) {
    auto a = rnd(r, {3, 5}), b = rnd(r, {5, 4});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(matmul(a, b)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("matmul_nt", [](Rng& r) {
    auto a = rnd(r, {3, 5}), b = rnd(r, {4, 5});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(matmul_nt(a, b)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("linear", [](Rng& r) {
    auto x = rnd(r, {4, 5}), w = rnd(r, {5, 3}), b = rnd(r, {3});
    return std::pair{
        std::function<TensorPtr()>([=] { return sum_all(relu(linear(x, w, b))); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"x", x}, {"w", w}, {"b", b}}};
  });
  s.item("layer_norm", [](Rng& r) {
    auto x = rnd(r, {4, 6}), g = rnd(r, {6}), be = rnd(r, {6});
    return std::pair{
        std::function<TensorPtr()>([=] { return sum_all(mul(layer_norm(x, g, be), x)); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"x", x}, {"g", g}, {"be", be}}};
  });
  s.item("softmax", [](Rng& r) {
    auto x = rnd(r, {4, 5}), y = rnd(r, {4, 5});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(mul(softmax(x), y)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"x", x}}};
  });
  s.item("concat_slice_gather_scatter", [](Rng& r) {
    auto a = rnd(r, {3, 4}), b = rnd(r, {3, 2}), rows = rnd(r, {2, 6});
    return std::pair{std::function<TensorPtr()>([=] {
                       auto cc = concat_cols(a, b);
                       auto sc = scatter_rows(cc, {0, 2}, rows);
                       auto ga = gather_rows(sc, {2, 1, 0});
                       return sum_all(mul(slice_cols(ga, 1, 4), slice_cols(ga, 2, 4)));
                     }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"a", a}, {"b", b}, {"rows", rows}}};
  });
  s.item("concat_rows_mean", [](Rng& r) {
    auto a = rnd(r, {2, 3}), b = rnd(r, {4, 3});
    return std::pair{
        std::function<TensorPtr()>([=] { return mean_all(concat_rows({a, b})); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("conv3x3_s1", [](Rng& r) {
    auto x = rnd(r, {2, 4, 5}), w = rnd(r, {3, 18}), b = rnd(r, {3});
    return std::pair{
        std::function<TensorPtr()>([=] { return sum_all(relu(conv3x3(x, w, b, 1))); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"x", x}, {"w", w}, {"b", b}}};
  });
  s.item("conv3x3_s2", [](Rng& r) {
    auto x = rnd(r, {2, 5, 7}), w = rnd(r, {3, 18}), b = rnd(r, {3});
    return std::pair{
        std::function<TensorPtr()>([=] { return sum_all(conv3x3(x, w, b, 2)); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"x", x}, {"w", w}, {"b", b}}};
  });
  s.item("conv1x1_channel_norm", [](Rng& r) {
    auto x = rnd(r, {3, 4, 4}), w = rnd(r, {2, 3}), b = rnd(r, {2});
    auto g = rnd(r, {2}), be = rnd(r, {2});
    return std::pair{std::function<TensorPtr()>(
                         [=] { return sum_all(channel_norm(conv1x1(x, w, b), g, be)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"x", x}, {"w", w}, {"g", g}, {"be", be}}};
  });
  s.item("concat_chw_rows", [](Rng& r) {
    auto a = rnd(r, {2, 3, 4}), b = rnd(r, {1, 3, 4});
    return std::pair{std::function<TensorPtr()>([=] {
                       auto rows = chw_to_rows(concat_chw(a, b));
                       return sum_all(mul(rows, rows));
                     }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"a", a}, {"b", b}}};
  });
  s.item("bilinear_sample", [](Rng& r) {
    auto map = rnd(r, {3, 5, 6});
    auto coords = rnd_coords(r, 4);
    return std::pair{std::function<TensorPtr()>(
                         [=] { return sum_all(mul(bilinear_sample(map, coords),
                                                  bilinear_sample(map, coords))); }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"map", map}, {"coords", coords}}};
  });
  s.item("residual_block", [](Rng& r) {
    ResidualBlockParams p;
    p.w1 = rnd(r, {3, 27});
    p.b1 = rnd(r, {3});
    p.g1 = rnd(r, {3}, 0.5, 1.5);
    p.be1 = rnd(r, {3});
    p.w2 = rnd(r, {3, 27});
    p.b2 = rnd(r, {3});
    p.g2 = rnd(r, {3}, 0.5, 1.5);
    p.be2 = rnd(r, {3});
    p.wp = rnd(r, {3, 3});
    p.bp = rnd(r, {3});
    p.gp = rnd(r, {3}, 0.5, 1.5);
    p.bep = rnd(r, {3});
    auto x = rnd(r, {3, 5, 6});
    return std::pair{std::function<TensorPtr()>([=] { return sum_all(residual_block(x, p, 2)); }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"x", x}, {"w1", p.w1}, {"w2", p.w2}, {"wp", p.wp}, {"g2", p.g2}}};
  });
}

inline nn::AttentionParams rnd_attention(Rng& r, int c, int heads) {
  nn::AttentionParams a;
  a.heads = heads;
  a.wq = rnd(r, {c, c});
  a.bq = rnd(r, {c});
  a.wk = rnd(r, {c, c});
  a.bk = rnd(r, {c});
  a.wv = rnd(r, {c, c});
  a.bv = rnd(r, {c});
  a.wo = rnd(r, {c, c});
  a.bo = rnd(r, {c});
  return a;
}

inline nn::DeformableParams rnd_deformable(Rng& r, int c, int c_in, int heads, int levels,
                                           int points) {
  nn::DeformableParams d;
  d.heads = heads;
  d.points = points;
  d.wv = rnd(r, {c_in, c});
  d.bv = rnd(r, {c});
  d.w_off = rnd(r, {c, heads * levels * points * 2}, -0.05, 0.05);
  d.b_off = rnd(r, {heads * levels * points * 2}, -0.02, 0.02);
  d.w_wt = rnd(r, {c, heads * levels * points});
  d.b_wt = rnd(r, {heads * levels * points});
  d.wo = rnd(r, {c, c});
  d.bo = rnd(r, {c});
  return d;
}

inline void add_attention_checks(Suite& s) {
  using namespace nn;
  s.item("self_attention", [](Rng& r) {
    auto p = rnd_attention(r, 6, 2);
    auto x = rnd(r, {4, 6}), pos = rnd(r, {4, 6});
    return std::pair{std::function<TensorPtr()>(
                         [=] { return sum_all(self_attention(x, pos, p).out); }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"x", x}, {"pos", pos}, {"wq", p.wq}, {"wv", p.wv}, {"wo", p.wo}}};
  });
  s.item("cross_attention", [](Rng& r) {
    auto p = rnd_attention(r, 6, 2);
    auto q = rnd(r, {3, 6}), kv = rnd(r, {5, 6}), pq = rnd(r, {3, 6}), pk = rnd(r, {5, 6});
    return std::pair{std::function<TensorPtr()>([=] {
                       return sum_all(multi_head_attention(q, kv, pq, pk, p).out);
                     }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"q", q}, {"kv", kv}, {"wk", p.wk}, {"bq", p.bq}}};
  });
  s.item("deformable_attention", [](Rng& r) {
    int c = 4, heads = 2, L = 2, pts = 2;
    auto p = rnd_deformable(r, c, 3, heads, L, pts);
    auto q = rnd(r, {3, c});
    auto ref = rnd_coords(r, 3);
    std::vector<TensorPtr> levels = {rnd(r, {3, 6, 8}), rnd(r, {3, 3, 4})};
    return std::pair{
        std::function<TensorPtr()>(
            [=] { return sum_all(deformable_attention(q, ref, levels, p)); }),
        std::vector<std::pair<std::string, TensorPtr>>{{"q", q},
                                                       {"lv0", levels[0]},
                                                       {"lv1", levels[1]},
                                                       {"woff", p.w_off},
                                                       {"wwt", p.w_wt},
                                                       {"wv", p.wv}}};
  }, /*max_coords=*/8);
}

inline void add_loss_checks(Suite& s) {
  using namespace nn;
  s.item("gaussian_focal_loss", [](Rng& r) {
    auto logits = rnd(r, {12}, -2, 2);
    std::vector<double> gt(12, 0.0);
    gt[static_cast<size_t>(r.uniform_int(0, 11))] = 1.0;
    gt[static_cast<size_t>(r.uniform_int(0, 11))] = r.uniform(0.2, 0.95);
    return std::pair{std::function<TensorPtr()>(
                         [=] { return loss::gaussian_focal_loss(sigmoid(logits), gt); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"logits", logits}}};
  });
  s.item("focal_classification_loss", [](Rng& r) {
    auto logits = rnd(r, {5, 4}, -2, 2);
    std::vector<int> targets = {r.uniform_int(0, 3), -1, r.uniform_int(0, 3), -1, -1};
    return std::pair{std::function<TensorPtr()>(
                         [=] { return loss::focal_classification_loss(logits, targets); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"logits", logits}}};
  });
  s.item("l1_loss_rows", [](Rng& r) {
    auto pred = rnd(r, {5, 6});
    std::vector<std::vector<double>> targets(2, std::vector<double>(6));
    for (auto& row : targets)
      for (auto& v : row) v = r.uniform(-1, 1);
    std::vector<int> rows = {1, 3};
    return std::pair{std::function<TensorPtr()>(
                         [=] { return loss::l1_loss_rows(pred, rows, targets); }),
                     std::vector<std::pair<std::string, TensorPtr>>{{"pred", pred}}};
  });
  s.item("detection_loss", [](Rng& r) {
    auto logits = rnd(r, {6, 3}, -2, 2);
    auto boxes = rnd(r, {6, 10});
    std::vector<int> gt_cls = {r.uniform_int(0, 2), r.uniform_int(0, 2)};
    std::vector<std::vector<double>> gt_box(2, std::vector<double>(10));
    for (auto& row : gt_box)
      for (auto& v : row) v = r.uniform(-1, 1);
    return std::pair{
        std::function<TensorPtr()>(
            [=] { return loss::detection_loss(logits, boxes, gt_cls, gt_box).total; }),
        std::vector<std::pair<std::string, TensorPtr>>{{"logits", logits}, {"boxes", boxes}}};
  });
  s.item("total_loss", [](Rng& r) {
    auto a = rnd(r, {1}, 0.1, 2), b = rnd(r, {1}, 0.1, 2), c = rnd(r, {1}, 0.1, 2);
    auto d = rnd(r, {1}, 0.1, 2), e = rnd(r, {1}, 0.1, 2);
    loss::LossWeights w;
    w.alpha = 0.1;
    w.gamma = r.uniform(0.5, 2.0);
    return std::pair{std::function<TensorPtr()>(
                         [=] { return loss::total_loss(a, b, c, d, e, w).total; }),
                     std::vector<std::pair<std::string, TensorPtr>>{
                         {"a", a}, {"b", b}, {"c", c}, {"d", d}, {"e", e}}};
  });
}

// ---------------------------------------------------------------------------
// Composed branches, with discrete structure (query selection, matching)
// held fixed by construction: the branch maps fixed query sets through the
// network exactly as the pipeline does.

inline det::QuerySet rnd_queryset(Rng& r, int n, int c, const geom::BevGrid& grid) {
  det::QuerySet q;
  q.features = rnd(r, {n, c});
  q.space = det::QuerySpace::bev;
  for (int i = 0; i < n; ++i) {
    q.ref_points.push_back({r.uniform(grid.x_min + 1, grid.x_max - 1),
                            r.uniform(grid.y_min + 1, grid.y_max - 1)});
    q.categories.push_back(r.uniform_int(0, 2));
    q.scores.push_back(r.uniform(0.1, 0.9));
  }
  return q;
}

inline void add_branch_checks(Suite& s) {
  using namespace nn;
  const auto grid = geom::BevGrid::make(-12, 12, -12, 12, 4.0);  // 6x6
  const int C = 8, K = 3, heads = 2;

  s.item("lidar_decoder", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(1);
    auto p = det::add_lidar_decoder(store, "dec", C, heads, init);
    auto head = det::add_head(store, "head", C, K, init);
    auto q0 = rnd_queryset(r, 4, C, grid);
    transfer::BevFeatureMap bev;
    bev.grid = grid;
    bev.map = rnd(r, {C, grid.height, grid.width});
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"q", q0.features}, {"bev", bev.map}, {"wq", p.self_attn.wq},
        {"cross_wv", p.cross_attn.wv}, {"pos_w1", p.pos_mlp.w1}, {"head_cls", head.cls.w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto dec = det::lidar_decoder(q0, bev, p);
                       auto h = det::head_lidar_view(dec.queries, head);
                       return sum_all(add(sum_all(h.cls_logits), sum_all(h.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("camera_decoder", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(2);
    auto p = det::add_camera_decoder(store, "dec", C, 3, heads, 2, 2, init);
    auto head = det::add_head(store, "head", C, K, init);
    det::QuerySet q0;
    q0.features = rnd(r, {4, C});
    q0.space = det::QuerySpace::perspective;
    for (int i = 0; i < 4; ++i) {
      q0.ref_points.push_back({r.uniform(0.1, 0.9), r.uniform(0.1, 0.9)});
      q0.categories.push_back(r.uniform_int(0, K - 1));
      q0.view_ids.push_back(i % 2);
      q0.scores.push_back(0.5);
    }
    std::vector<transfer::FeaturePyramid> pyramids(2);
    for (int v = 0; v < 2; ++v) {
      pyramids[static_cast<size_t>(v)].view_id = v;
      pyramids[static_cast<size_t>(v)].levels = {rnd(r, {3, 6, 8}), rnd(r, {3, 3, 4})};
    }
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"q", q0.features},
        {"pyr00", pyramids[0].levels[0]},
        {"pyr11", pyramids[1].levels[1]},
        {"deform_off", p.deform.w_off},
        {"self_wk", p.self_attn.wk},
        {"head_off", head.offset.w2}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto dec = det::camera_decoder(q0, pyramids, p);
                       auto h = det::head_perspective(dec.queries, head, 16, 8);
                       return sum_all(add(sum_all(h.cls_logits), sum_all(h.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("view_transform", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(3);
    auto p = fuse::add_view_transform(store, "vt", C, heads, K, init);
    scene::GeneratorConfig gc;
    det::QuerySet q0;
    q0.features = rnd(r, {4, C});
    q0.space = det::QuerySpace::perspective;
    std::vector<geom::CameraModel> cams = {scene::make_camera(gc, 0), scene::make_camera(gc, 1)};
    for (int i = 0; i < 4; ++i) {
      q0.ref_points.push_back({r.uniform(0.2, 0.8), r.uniform(0.2, 0.8)});
      q0.categories.push_back(r.uniform_int(0, K - 1));
      q0.view_ids.push_back(i % 2);
      q0.scores.push_back(0.5);
    }
    det::HeadOutput persp;
    persp.cls_logits = rnd(r, {4, K});
    persp.box_vec = nn::make_tensor({4, 10});
    for (int i = 0; i < 4; ++i) {
      double* row = persp.box_vec->values.data() + static_cast<size_t>(i) * 10;
      row[0] = r.uniform(10, 50);
      row[1] = r.uniform(8, 30);
      row[2] = r.uniform(5, 20);  // depth
      for (int j = 3; j < 6; ++j) row[j] = r.uniform(-0.5, 0.5);
      row[6] = std::sin(r.uniform(-3, 3));
      row[7] = std::cos(r.uniform(-3, 3));
      row[8] = r.uniform(-0.2, 0.2);
      row[9] = r.uniform(-0.2, 0.2);
    }
    auto grid2 = geom::BevGrid::make(-24, 24, -24, 24, 1.5);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"q", q0.features}, {"g_w1", p.g.w1}, {"m_w1", p.m.w1}, {"h_w2", p.h.w2},
        {"attn_wv", p.attn.wv}, {"head_size", p.head.size.w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto vt = fuse::view_transform(q0, persp, cams, grid2, p);
                       auto h = det::head_lidar_view(vt.queries, p.head);
                       return sum_all(add(sum_all(h.cls_logits), sum_all(h.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("fuse_self_attention", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(4);
    auto p = fuse::add_self_attention_fusion(store, "f", C, heads, K, init);
    auto ql = rnd_queryset(r, 3, C, grid), qc = rnd_queryset(r, 4, C, grid);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"ql", ql.features}, {"qc", qc.features}, {"fl_w", p.f_l.fc.w},
        {"attn_wo", p.attn.wo}, {"head_yaw", p.head.yaw.w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto res = fuse::fuse_self_attention(ql, qc, grid, p);
                       return sum_all(
                           add(sum_all(res.head.cls_logits), sum_all(res.head.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("fuse_mlp", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(5);
    auto p = fuse::add_mlp_fusion(store, "f", C, K, init);
    auto ql = rnd_queryset(r, 3, C, grid), qc = rnd_queryset(r, 4, C, grid);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"ql", ql.features}, {"qc", qc.features}, {"mlp_w1", p.mlp.w1}, {"fc_w", p.f_c.fc.w}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto res = fuse::fuse_mlp(ql, qc, p);
                       return sum_all(
                           add(sum_all(res.head.cls_logits), sum_all(res.head.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("fuse_cross_attention", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(6);
    auto p = fuse::add_cross_attention_fusion(store, "f", C, heads, K, init);
    auto ql = rnd_queryset(r, 3, C, grid), qc = rnd_queryset(r, 4, C, grid);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"ql", ql.features}, {"qc", qc.features}, {"attn_wq", p.attn.wq},
        {"head_elev", p.head.elevation.w2}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto res = fuse::fuse_cross_attention(ql, qc, grid, p);
                       return sum_all(
                           add(sum_all(res.head.cls_logits), sum_all(res.head.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("fuse_optimal_transport", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(7);
    auto p = fuse::add_ot_fusion(store, "f", C, K, init);
    auto ql = rnd_queryset(r, 3, C, grid), qc = rnd_queryset(r, 4, C, grid);
    std::vector<double> sl = {0.5, 0.3, 0.8}, sc = {0.4, 0.6, 0.2, 0.7};
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"ql", ql.features}, {"qc", qc.features}, {"mix_w1", p.mix.w1},
        {"head_vel", p.head.vel.w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto res = fuse::fuse_optimal_transport(ql, qc, sl, sc, p);
                       return sum_all(add(sum_all(res.fusion.head.cls_logits),
                                          sum_all(res.fusion.head.box_vec)));
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("geometric_transfer", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(8);
    auto p = transfer::add_geometric_transfer(store, "geo", 2, 3, init);
    transfer::FeaturePyramid pyr;
    pyr.levels = {rnd(r, {3, 6, 8}), rnd(r, {3, 3, 4})};
    transfer::DepthMap d;
    d.width = 8;
    d.height = 6;
    d.grid.resize(48);
    for (auto& v : d.grid) v = r.uniform(0, 25);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"lv0", pyr.levels[0]}, {"lv1", pyr.levels[1]}, {"stem_w", p.stem.w},
        {"fuse0_w", p.fuse[0].w}, {"block1_w1", p.blocks[1].w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto out = transfer::geometric_transfer(pyr, d, p);
                       TensorPtr acc;
                       for (auto& lvl : out.levels) {
                         auto s2 = sum_all(lvl);
                         acc = acc ? add(acc, s2) : s2;
                       }
                       return acc;
                     }),
                     inputs};
  }, /*max_coords=*/5);

  s.item("semantic_transfer", [=](Rng& r) {
    ParamStore store;
    Rng init = r.fork(9);
    auto p = transfer::add_semantic_transfer(store, "st", C, 3, heads, 2, 2, init);
    scene::GeneratorConfig gc;
    std::vector<geom::CameraModel> cams = {scene::make_camera(gc, 0), scene::make_camera(gc, 1)};
    auto grid2 = geom::BevGrid::make(-12, 12, -12, 12, 4.0);
    transfer::BevFeatureMap bev;
    bev.grid = grid2;
    bev.map = rnd(r, {C, grid2.height, grid2.width});
    bev.occupied.assign(36, 0);
    std::vector<scene::LidarPoint> pts;
    for (int i = 0; i < 6; ++i)
      pts.push_back({r.uniform(-11, 11), r.uniform(-11, 11), r.uniform(0.2, 2.0), 0.5});
    auto pillars = transfer::compute_pillars(pts, grid2);
    std::vector<transfer::FeaturePyramid> pyramids(2);
    for (int v = 0; v < 2; ++v)
      pyramids[static_cast<size_t>(v)].levels = {rnd(r, {3, 6, 8}), rnd(r, {3, 3, 4})};
    std::vector<std::pair<std::string, TensorPtr>> inputs = {
        {"bev", bev.map}, {"pyr0", pyramids[0].levels[0]}, {"fetch_w", p.fetch_proj.w},
        {"deform_wv", p.deform.wv}, {"ffn_w1", p.ffn.mlp.w1}};
    return std::pair{std::function<TensorPtr()>([=] {
                       auto out = transfer::semantic_transfer(bev, pillars, pyramids, cams, p);
                       return sum_all(mul(out.map, out.map));
                     }),
                     inputs};
  }, /*max_coords=*/5);
}

// Runs everything; returns true when every item stays within tolerance.
inline bool run_all(std::ostream& os, int configs = 100) {
  Suite s(os, configs);
  os << "primitive operations:\n";
  add_primitive_checks(s);
  os << "attention:\n";
  add_attention_checks(s);
  os << "losses:\n";
  add_loss_checks(s);
  os << "composed branches:\n";
  add_branch_checks(s);
  const auto& r = s.report();
  os << "gradcheck: " << r.items << " items, " << r.failures << " failures, worst "
     << r.worst << " (" << r.worst_item << ")\n";
  return r.failures == 0;
}

}  // namespace sparsefuse::gradchecks

#endif  // SPARSEFUSE_GRADCHECKS_HPP
