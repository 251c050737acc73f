#ifndef SPARSEFUSE_MODEL_HPP
#define SPARSEFUSE_MODEL_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sparsefuse/backbones.hpp"
#include "sparsefuse/config.hpp"
#include "sparsefuse/detector.hpp"
#include "sparsefuse/evalmetrics.hpp"
#include "sparsefuse/fusion.hpp"
#include "sparsefuse/losses.hpp"

namespace sparsefuse::model {

using cfg::RunConfig;
using det::Detection;
using det::QuerySet;
using nn::ParamStore;
using nn::TensorPtr;
using scene::SceneSample;

inline constexpr const char* kLidarPrefix = "lidar.";

// Full parallel-detector pipeline. Parameter namespaces:
//   cambackbone.*  image feature extractor (shared by both branches)
//   lidar.*        BEV backbone, semantic transfer, heatmap head, decoder,
//                  head, category embedding (frozen as a unit in stage 2)
//   camera.*       geometric transfer, per-level heatmap heads, decoder,
//                  perspective head, category embedding
//   vt.*           view transformation and its LiDAR-view head
//   fusion.<s>.*   the selected fusion strategy
//   seq.*          sequential-pipeline ablation stages (optional)
class Pipeline {
 public:
  Pipeline(const RunConfig& rc, ParamStore& store, bool with_sequential = false)
      : rc_(rc), store_(&store) {
    Rng rng = Rng(splitmix64(rc.seed ^ 0x9e3779b97f4a7c15ull));
    int c = rc.hidden_dim, k = rc.num_categories;

    cam_backbone_ = backbones::add_camera_backbone(store, "cambackbone", rc.pyramid_channels,
                                                   rc.levels, rng);
    lidar_backbone_ =
        backbones::add_lidar_backbone(store, "lidar.bev", rc.bev_channels, c, rng);
    st_ = transfer::add_semantic_transfer(store, "lidar.st", c, rc.pyramid_channels, rc.heads,
                                          rc.levels, rc.deform_points, rng);
    lidar_hm_ = det::add_heatmap_head(store, "lidar.hm", c, k, rng);
    lidar_emb_ = store.add("lidar.emb", {k, c}, nn::Init::XavierUniform, rng);
    lidar_init_proj_ = nn::add_linear(store, "lidar.init_proj", 9 * c, c, rng);
    lidar_dec_ = det::add_lidar_decoder(store, "lidar.dec", c, rc.heads, rng);
    lidar_head_ = det::add_head(store, "lidar.head", c, k, rng);

    geo_ = transfer::add_geometric_transfer(store, "camera.geo", rc.levels,
                                            rc.pyramid_channels, rng);
    for (int l = 0; l < rc.levels; ++l)
      cam_hm_.push_back(det::add_heatmap_head(store, "camera.hm.l" + std::to_string(l + 1),
                                              rc.pyramid_channels, k, rng));
    cam_emb_ = store.add("camera.emb", {k, c}, nn::Init::XavierUniform, rng);
    cam_init_proj_ = nn::add_linear(store, "camera.init_proj", rc.pyramid_channels, c, rng);
    cam_dec_ = det::add_camera_decoder(store, "camera.dec", c, rc.pyramid_channels, rc.heads,
                                       rc.levels, rc.deform_points, rng);
    cam_head_ = det::add_head(store, "camera.head", c, k, rng);

    vt_ = fuse::add_view_transform(store, "vt", c, rc.heads, k, rng);

    switch (rc.strategy) {
      case fuse::Strategy::self_attention:
        fusion_self_ = fuse::add_self_attention_fusion(store, "fusion.self_attention", c,
                                                       rc.heads, k, rng);
        break;
      case fuse::Strategy::mlp:
        fusion_mlp_ = fuse::add_mlp_fusion(store, "fusion.mlp", c, k, rng);
        break;
      case fuse::Strategy::cross_attention:
        fusion_cross_ = fuse::add_cross_attention_fusion(store, "fusion.cross_attention", c,
                                                         rc.heads, k, rng);
        break;
      case fuse::Strategy::optimal_transport:
        fusion_ot_ = fuse::add_ot_fusion(store, "fusion.optimal_transport", c, k, rng);
        break;
    }
    if (with_sequential) {
      seq_inherit_ = fuse::add_sequential(store, "seq.inherit", c, rc.pyramid_channels, rc.heads,
                                          k, rng);
      seq_reinit_ = fuse::add_sequential(store, "seq.reinit", c, rc.pyramid_channels, rc.heads,
                                         k, rng);
    }
  }

  struct SceneOutputs {
    // LiDAR branch (always present)
    transfer::BevFeatureMap f_bev, f_bev_sem;
    std::vector<transfer::FeaturePyramid> pyramids_raw;
    det::LidarInitResult lidar_init;
    QuerySet q_l;
    det::HeadOutput lidar_head;
    std::vector<Detection> lidar_dets;

    // Camera branch and fusion (full forward only)
    bool has_camera_branch = false;
    std::vector<transfer::DepthMap> depth_maps;
    std::vector<transfer::FeaturePyramid> pyramids_depth;
    det::CameraInitResult cam_init;
    QuerySet q_cp;
    det::HeadOutput cam_head;
    fuse::ViewTransformResult vt;
    det::HeadOutput trans_head;
    std::vector<Detection> cam_before_vt_dets, cam_after_vt_dets;
    fuse::FusionResult fusion;
    std::optional<fuse::TransportPlan> transport;
  };

  std::vector<geom::CameraModel> camera_models(const SceneSample& s) const {
    std::vector<geom::CameraModel> cams;
    for (const auto& v : s.cameras) cams.push_back(v.model);
    return cams;
  }

  // LiDAR branch with semantic transfer; the stage-1 subgraph.
  void forward_lidar_branch(const SceneSample& s, SceneOutputs& out) const {
    auto cams = camera_models(s);
    out.pyramids_raw.clear();
    for (size_t v = 0; v < s.cameras.size(); ++v)
      out.pyramids_raw.push_back(backbones::camera_backbone_forward(
          s.cameras[v].image, s.cameras[v].model.image_width, s.cameras[v].model.image_height,
          static_cast<int>(v), cam_backbone_));

    out.f_bev = backbones::lidar_backbone_forward(s.points, rc_.grid, lidar_backbone_);
    auto pillars = transfer::compute_pillars(s.points, rc_.grid);
    out.f_bev_sem = transfer::semantic_transfer(out.f_bev, pillars, out.pyramids_raw, cams, st_);

    out.lidar_init = det::init_queries_lidar(out.f_bev_sem, out.f_bev, lidar_hm_,
                                             lidar_init_proj_, lidar_emb_, rc_.n_lidar);
    auto dec = det::lidar_decoder(out.lidar_init.queries, out.f_bev, lidar_dec_);
    out.q_l = dec.queries;
    out.lidar_head = det::head_lidar_view(out.q_l, lidar_head_);
    out.lidar_dets = det::decode_lidar_detections(out.lidar_head, det::DetSource::lidar);
  }

  SceneOutputs forward_stage1(const SceneSample& s) const {
    SceneOutputs out;
    forward_lidar_branch(s, out);
    return out;
  }

  SceneOutputs forward_full(const SceneSample& s) const {
    SceneOutputs out;
    forward_lidar_branch(s, out);
    out.has_camera_branch = true;
    auto cams = camera_models(s);

    out.depth_maps.clear();
    out.pyramids_depth.clear();
    for (size_t v = 0; v < cams.size(); ++v) {
      out.depth_maps.push_back(transfer::render_sparse_depth(s.points, cams[v]));
      out.pyramids_depth.push_back(
          transfer::geometric_transfer(out.pyramids_raw[v], out.depth_maps[v], geo_));
    }

    out.cam_init = det::init_queries_camera(out.pyramids_depth, cam_hm_, cam_init_proj_,
                                            cam_emb_, rc_.n_camera,
                                            rc_.generator.image_width,
                                            rc_.generator.image_height);
    auto dec = det::camera_decoder(out.cam_init.queries, out.pyramids_depth, cam_dec_);
    out.q_cp = dec.queries;
    out.cam_head = det::head_perspective(out.q_cp, cam_head_, rc_.generator.image_width,
                                         rc_.generator.image_height);

    out.vt = fuse::view_transform(out.q_cp, out.cam_head, cams, rc_.grid, vt_);
    out.trans_head = det::head_lidar_view(out.vt.queries, vt_.head);
    out.cam_after_vt_dets = det::decode_lidar_detections(out.trans_head, det::DetSource::camera);

    // Camera-branch detections before VT: perspective decode moved into the
    // LiDAR frame through the box transform.
    out.cam_before_vt_dets.clear();
    int k = rc_.num_categories;
    for (int i = 0; i < out.q_cp.count(); ++i) {
      Detection d;
      d.score = det::decode_score(
          out.cam_head.cls_logits->values.data() + static_cast<size_t>(i) * k, k, &d.category);
      d.box = out.vt.lidar_boxes[static_cast<size_t>(i)];
      d.source = det::DetSource::camera;
      out.cam_before_vt_dets.push_back(d);
    }

    std::vector<double> scores_l, scores_c;
    for (const auto& d : out.lidar_dets) scores_l.push_back(d.score);
    for (const auto& d : out.cam_after_vt_dets) scores_c.push_back(d.score);

    switch (rc_.strategy) {
      case fuse::Strategy::self_attention:
        out.fusion = fuse::fuse_self_attention(out.q_l, out.vt.queries, rc_.grid, *fusion_self_);
        break;
      case fuse::Strategy::mlp:
        out.fusion = fuse::fuse_mlp(out.q_l, out.vt.queries, *fusion_mlp_);
        break;
      case fuse::Strategy::cross_attention:
        out.fusion =
            fuse::fuse_cross_attention(out.q_l, out.vt.queries, rc_.grid, *fusion_cross_);
        break;
      case fuse::Strategy::optimal_transport: {
        auto r = fuse::fuse_optimal_transport(out.q_l, out.vt.queries, scores_l, scores_c,
                                              *fusion_ot_);
        out.fusion = r.fusion;
        out.transport = std::move(r.plan);
        break;
      }
    }
    return out;
  }

  fuse::SequentialResult forward_sequential(const SceneSample& s, fuse::SequentialMode mode) const {
    if (!seq_inherit_) throw ConfigError("pipeline built without sequential variants");
    SceneOutputs out;
    forward_lidar_branch(s, out);
    std::vector<geom::Box3DLidar> boxes;
    for (const auto& d : out.lidar_dets) boxes.push_back(d.box);
    const auto& p = mode == fuse::SequentialMode::inherit_feat ? *seq_inherit_ : *seq_reinit_;
    return fuse::sequential_variant(out.q_l, boxes, out.pyramids_raw, camera_models(s), rc_.grid,
                                    mode, p);
  }

  // -------------------------------------------------------------------------
  // Losses

  TensorPtr lidar_init_loss(const SceneOutputs& out, const SceneSample& s) const {
    auto gt = det::splat_gt_heatmap(s.objects, rc_.grid, rc_.num_categories);
    return loss::gaussian_focal_loss(out.lidar_init.heatmap_probs, gt);
  }

  TensorPtr camera_init_loss(const SceneOutputs& out, const SceneSample& s) const {
    auto cams = camera_models(s);
    auto gt = det::splat_image_gt_heatmaps(s.objects, cams, out.pyramids_depth,
                                           rc_.fcos_thresholds, rc_.num_categories);
    TensorPtr total;
    for (size_t v = 0; v < out.cam_init.heatmap_probs.size(); ++v)
      for (size_t l = 0; l < out.cam_init.heatmap_probs[v].size(); ++l) {
        auto term = loss::gaussian_focal_loss(out.cam_init.heatmap_probs[v][l], gt.maps[v][l]);
        total = total ? nn::add(total, term) : term;
      }
    return total ? total : loss::zero_scalar();
  }

  TensorPtr lidar_detect_loss(const SceneOutputs& out, const SceneSample& s) const {
    std::vector<int> gt_cls;
    std::vector<std::vector<double>> gt_box;
    for (const auto& o : s.objects) {
      gt_cls.push_back(o.category);
      gt_box.push_back(det::encode_gt_lidar(o.box));
    }
    return loss::detection_loss(out.lidar_head.cls_logits, out.lidar_head.box_vec, gt_cls, gt_box)
        .total;
  }

  // Per-view matching against ground truth expressed in that view's camera
  // frame; queries compete only inside their own view.
  TensorPtr camera_detect_loss(const SceneOutputs& out, const SceneSample& s) const {
    auto cams = camera_models(s);
    TensorPtr total;
    for (size_t v = 0; v < cams.size(); ++v) {
      std::vector<int> rows;
      for (int i = 0; i < out.q_cp.count(); ++i)
        if (out.q_cp.view_ids[static_cast<size_t>(i)] == static_cast<int>(v)) rows.push_back(i);
      if (rows.empty()) continue;

      std::vector<int> gt_cls;
      std::vector<std::vector<double>> gt_box;
      for (const auto& o : s.objects) {
        auto ip = geom::project_lidar_to_image(o.box.center, cams[v]);
        if (!ip || !geom::in_image(*ip, cams[v])) continue;
        gt_cls.push_back(o.category);
        gt_box.push_back(det::encode_gt_cam(geom::box_lidar_to_cam(o.box, cams[v]), cams[v]));
      }
      auto cls_v = nn::gather_rows(out.cam_head.cls_logits, rows);
      auto box_v = nn::gather_rows(out.cam_head.box_vec, rows);
      auto term = loss::detection_loss(cls_v, box_v, gt_cls, gt_box).total;
      total = total ? nn::add(total, term) : term;
    }
    return total ? total : loss::zero_scalar();
  }

  TensorPtr trans_detect_loss(const SceneOutputs& out, const SceneSample& s) const {
    std::vector<int> gt_cls;
    std::vector<std::vector<double>> gt_box;
    for (const auto& o : s.objects) {
      gt_cls.push_back(o.category);
      gt_box.push_back(det::encode_gt_lidar(o.box));
    }
    return loss::detection_loss(out.trans_head.cls_logits, out.trans_head.box_vec, gt_cls, gt_box)
        .total;
  }

  TensorPtr fusion_detect_loss(const SceneOutputs& out, const SceneSample& s) const {
    std::vector<int> gt_cls;
    std::vector<std::vector<double>> gt_box;
    for (const auto& o : s.objects) {
      gt_cls.push_back(o.category);
      gt_box.push_back(det::encode_gt_lidar(o.box));
    }
    return loss::detection_loss(out.fusion.head.cls_logits, out.fusion.head.box_vec, gt_cls,
                                gt_box)
        .total;
  }

  // Stage 1: alpha * L_init(LiDAR) + beta * L_detect(LiDAR).
  loss::LossBreakdown stage1_loss(const SceneOutputs& out, const SceneSample& s) const {
    return loss::total_loss(lidar_init_loss(out, s), nullptr, nullptr,
                            lidar_detect_loss(out, s), nullptr, rc_.loss_weights);
  }

  loss::LossBreakdown full_loss(const SceneOutputs& out, const SceneSample& s) const {
    auto l_init = nn::add(lidar_init_loss(out, s), camera_init_loss(out, s));
    return loss::total_loss(l_init, camera_detect_loss(out, s), trans_detect_loss(out, s),
                            lidar_detect_loss(out, s), fusion_detect_loss(out, s),
                            rc_.loss_weights);
  }

  const RunConfig& config() const { return rc_; }
  ParamStore& store() const { return *store_; }
  const fuse::ViewTransformParams& vt_params() const { return vt_; }

 private:
  RunConfig rc_;
  ParamStore* store_;

  backbones::CameraBackboneParams cam_backbone_;
  backbones::LidarBackboneParams lidar_backbone_;
  transfer::SemanticTransferParams st_;
  det::HeatmapHeadParams lidar_hm_;
  TensorPtr lidar_emb_;
  nn::LinearModule lidar_init_proj_;
  det::LidarDecoderParams lidar_dec_;
  det::HeadParams lidar_head_;

  transfer::GeometricTransferParams geo_;
  std::vector<det::HeatmapHeadParams> cam_hm_;
  TensorPtr cam_emb_;
  nn::LinearModule cam_init_proj_;
  det::CameraDecoderParams cam_dec_;
  det::HeadParams cam_head_;

  fuse::ViewTransformParams vt_;
  std::optional<fuse::SelfAttentionFusionParams> fusion_self_;
  std::optional<fuse::MlpFusionParams> fusion_mlp_;
  std::optional<fuse::CrossAttentionFusionParams> fusion_cross_;
  std::optional<fuse::OtFusionParams> fusion_ot_;
  std::optional<fuse::SequentialParams> seq_inherit_, seq_reinit_;
};

}  // namespace sparsefuse::model

#endif  // SPARSEFUSE_MODEL_HPP
