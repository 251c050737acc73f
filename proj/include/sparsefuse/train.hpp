#ifndef SPARSEFUSE_TRAIN_HPP
#define SPARSEFUSE_TRAIN_HPP

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sparsefuse/model.hpp"

namespace sparsefuse::train {

using cfg::RunConfig;
using model::Pipeline;
using nn::ParamStore;
using scene::SceneSample;

// ---------------------------------------------------------------------------
// Checkpoint files: "SFCK" | u32 version | u64 config hash (LE) | u32 stage
// string length | stage | tensor blob.

inline constexpr uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const ParamStore& store, uint64_t config_hash,
                                        const std::string& stage) {
  std::string out = "SFCK";
  nn::detail::put_u32(out, kCheckpointVersion);
  char h[8];
  std::memcpy(h, &config_hash, 8);
  out.append(h, 8);
  nn::detail::put_u32(out, static_cast<uint32_t>(stage.size()));
  out += stage;
  out += nn::serialize_tensors(store);
  return out;
}

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            uint64_t config_hash, const std::string& stage) {
  write_text_file(path, serialize_checkpoint(store, config_hash, stage));
}

struct CheckpointInfo {
  uint64_t config_hash = 0;
  std::string stage;
};

inline CheckpointInfo load_checkpoint(const std::string& path, ParamStore& store,
                                      uint64_t expected_hash, bool allow_mismatch = false,
                                      bool ignore_unknown = false) {
  std::string blob = read_text_file(path);
  if (blob.size() < 16 || blob.compare(0, 4, "SFCK") != 0)
    throw ConfigError(path + ": not a checkpoint file");
  size_t off = 4;
  uint32_t version = nn::detail::take_u32(blob, off, "version");
  if (version != kCheckpointVersion)
    throw ConfigError(path + ": unsupported checkpoint version");
  CheckpointInfo info;
  std::memcpy(&info.config_hash, blob.data() + off, 8);
  off += 8;
  uint32_t stage_len = nn::detail::take_u32(blob, off, "stage");
  info.stage = blob.substr(off, stage_len);
  off += stage_len;
  if (info.config_hash != expected_hash && !allow_mismatch)
    throw ConfigError(path + ": checkpoint config hash mismatch (use the override to force)");
  nn::deserialize_tensors(blob, store, &off, ignore_unknown);
  return info;
}

// ---------------------------------------------------------------------------
// Dataset generation and IO.

struct Dataset {
  std::vector<SceneSample> train, val;
  scene::DatasetSplit split;
};

inline Dataset generate_dataset(const RunConfig& rc) {
  Dataset d;
  d.split.seed = rc.seed;
  d.train.resize(static_cast<size_t>(rc.num_train));
  d.val.resize(static_cast<size_t>(rc.num_val));
  for (int i = 0; i < rc.num_train; ++i) d.split.train_ids.push_back(i);
  for (int i = 0; i < rc.num_val; ++i) d.split.val_ids.push_back(rc.num_train + i);
  parallel_for(rc.num_train, [&](int i) {
    d.train[static_cast<size_t>(i)] = scene::generate_scene(rc.seed, rc.generator, i);
  });
  parallel_for(rc.num_val, [&](int i) {
    d.val[static_cast<size_t>(i)] =
        scene::generate_scene(rc.seed, rc.generator, rc.num_train + i);
  });
  return d;
}

inline void save_dataset(const std::string& root, const Dataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(root + "/train");
  fs::create_directories(root + "/val");
  parallel_for(static_cast<int>(d.train.size()), [&](int i) {
    scene::save_scene(scene::scene_path(root, "train", d.train[static_cast<size_t>(i)].scene_id),
                      d.train[static_cast<size_t>(i)]);
  });
  parallel_for(static_cast<int>(d.val.size()), [&](int i) {
    scene::save_scene(scene::scene_path(root, "val", d.val[static_cast<size_t>(i)].scene_id),
                      d.val[static_cast<size_t>(i)]);
  });
  JsonWriter w;
  w.begin_object();
  w.kv("seed", d.split.seed);
  w.array("train_ids", d.split.train_ids);
  w.array("val_ids", d.split.val_ids);
  w.end_object();
  write_text_file(root + "/split.json", w.str());
}

inline Dataset load_dataset(const std::string& root) {
  Dataset d;
  json j = parse_json(read_text_file(root + "/split.json"), root + "/split.json");
  d.split.seed = require_field(j, "seed", "split").get<uint64_t>();
  for (const auto& v : require_field(j, "train_ids", "split")) d.split.train_ids.push_back(v.get<int>());
  for (const auto& v : require_field(j, "val_ids", "split")) d.split.val_ids.push_back(v.get<int>());
  d.train.resize(d.split.train_ids.size());
  d.val.resize(d.split.val_ids.size());
  parallel_for(static_cast<int>(d.train.size()), [&](int i) {
    d.train[static_cast<size_t>(i)] = scene::load_scene(
        scene::scene_path(root, "train", d.split.train_ids[static_cast<size_t>(i)]));
  });
  parallel_for(static_cast<int>(d.val.size()), [&](int i) {
    d.val[static_cast<size_t>(i)] =
        scene::load_scene(scene::scene_path(root, "val", d.split.val_ids[static_cast<size_t>(i)]));
  });
  return d;
}

// ---------------------------------------------------------------------------
// Optimization loop.

inline void clip_gradients(ParamStore& store, double max_norm) {
  if (max_norm <= 0) return;
  double total = 0;
  for (const auto& name : store.names()) {
    auto p = store.get(name);
    for (double g : p->grad) total += g * g;
  }
  total = std::sqrt(total);
  if (total <= max_norm) return;
  double scale = max_norm / total;
  for (const auto& name : store.names()) {
    auto p = store.get(name);
    for (double& g : p->grad) g *= scale;
  }
}

struct EpochLog {
  int epoch = 0;
  double total = 0, l_init = 0, l_cam = 0, l_trans = 0, l_lidar = 0, l_fusion = 0;
};

enum class Stage { stage1, stage2 };

inline std::vector<EpochLog> run_training(Pipeline& pipe, ParamStore& store, const RunConfig& rc,
                                          const std::vector<SceneSample>& scenes, Stage stage,
                                          int epochs, std::ostream* log = nullptr) {
  nn::AdamConfig ac;
  ac.lr = rc.train.lr;
  ac.beta1 = rc.train.beta1;
  ac.beta2 = rc.train.beta2;
  ac.eps = rc.train.eps;
  ac.weight_decay = rc.train.weight_decay;
  nn::AdamW opt(store, ac);

  Rng order_rng = Rng(splitmix64(rc.seed ^ 0x7261696e6cull));
  std::vector<EpochLog> logs;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order(scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    order_rng.shuffle(order);

    EpochLog el;
    el.epoch = epoch;
    for (int idx : order) {
      const auto& s = scenes[static_cast<size_t>(idx)];
      store.zero_grads();
      auto out = stage == Stage::stage1 ? pipe.forward_stage1(s) : pipe.forward_full(s);
      auto lb = stage == Stage::stage1 ? pipe.stage1_loss(out, s) : pipe.full_loss(out, s);
      double total = lb.total->values[0];
      if (!std::isfinite(total))
        throw NumericalError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch));
      nn::backward(lb.total);
      clip_gradients(store, rc.train.grad_clip);
      opt.step();
      el.total += total;
      el.l_init += lb.l_init->values[0];
      el.l_cam += lb.l_detect_camera->values[0];
      el.l_trans += lb.l_detect_trans->values[0];
      el.l_lidar += lb.l_detect_lidar->values[0];
      el.l_fusion += lb.l_detect_fusion->values[0];
    }
    double inv = scenes.empty() ? 0.0 : 1.0 / static_cast<double>(scenes.size());
    el.total *= inv;
    el.l_init *= inv;
    el.l_cam *= inv;
    el.l_trans *= inv;
    el.l_lidar *= inv;
    el.l_fusion *= inv;
    logs.push_back(el);
    if (log)
      (*log) << "epoch " << epoch << " total " << el.total << " init " << el.l_init << " lidar "
             << el.l_lidar << " cam " << el.l_cam << " trans " << el.l_trans << " fusion "
             << el.l_fusion << "\n";
  }
  return logs;
}

// Stage 1: LiDAR branch plus semantic transfer and their losses.
inline std::vector<EpochLog> train_stage1(Pipeline& pipe, ParamStore& store, const RunConfig& rc,
                                          const std::vector<SceneSample>& scenes,
                                          std::ostream* log = nullptr) {
  store.clear_frozen();
  return run_training(pipe, store, rc, scenes, Stage::stage1, rc.train.stage1_epochs, log);
}

// Stage 2: LiDAR-prefixed parameters frozen, full objective.
inline std::vector<EpochLog> train_stage2(Pipeline& pipe, ParamStore& store, const RunConfig& rc,
                                          const std::vector<SceneSample>& scenes,
                                          std::ostream* log = nullptr) {
  store.clear_frozen();
  store.freeze_prefix(model::kLidarPrefix);
  auto logs = run_training(pipe, store, rc, scenes, Stage::stage2, rc.train.stage2_epochs, log);
  store.clear_frozen();
  return logs;
}

// ---------------------------------------------------------------------------
// Evaluation runner: full forward per scene (no gradients), per-branch
// prediction lists, metric report, recall instrument.

struct EvalOutputs {
  eval::MetricReport report;
  eval::RecallBreakdown recall;
  std::vector<eval::ScenePredictions> lidar, cam_before_vt, cam_after_vt, fused;
  std::vector<eval::SceneGts> gts;
  // Attention dump rows: scene_id, det_index, src_index, src_modality, weight.
  struct AttnRow {
    int scene_id, det_index, src_index;
    std::string src_modality;
    double weight;
  };
  std::vector<AttnRow> attention_rows;
};

inline EvalOutputs evaluate(const Pipeline& pipe, const std::vector<SceneSample>& scenes,
                            bool dump_attention = false) {
  const auto& rc = pipe.config();
  EvalOutputs out;
  int n = static_cast<int>(scenes.size());
  out.lidar.resize(static_cast<size_t>(n));
  out.cam_before_vt.resize(static_cast<size_t>(n));
  out.cam_after_vt.resize(static_cast<size_t>(n));
  out.fused.resize(static_cast<size_t>(n));
  out.gts.resize(static_cast<size_t>(n));
  std::vector<std::vector<EvalOutputs::AttnRow>> attn(static_cast<size_t>(n));

  parallel_for(n, [&](int i) {
    nn::NoGradGuard ng;
    const auto& s = scenes[static_cast<size_t>(i)];
    auto so = pipe.forward_full(s);
    out.gts[static_cast<size_t>(i)] = {s.scene_id, s.objects};
    out.lidar[static_cast<size_t>(i)] = {s.scene_id, so.lidar_dets};
    out.cam_before_vt[static_cast<size_t>(i)] = {s.scene_id, so.cam_before_vt_dets};
    out.cam_after_vt[static_cast<size_t>(i)] = {s.scene_id, so.cam_after_vt_dets};
    out.fused[static_cast<size_t>(i)] = {s.scene_id, so.fusion.detections};

    if (dump_attention && !so.fusion.attention.empty()) {
      int n_src = so.fusion.n_sources;
      int n_det = static_cast<int>(so.fusion.detections.size());
      for (int di = 0; di < n_det; ++di) {
        if (so.fusion.detections[static_cast<size_t>(di)].score < rc.attention_dump_threshold)
          continue;
        for (int si = 0; si < n_src; ++si) {
          EvalOutputs::AttnRow row;
          row.scene_id = s.scene_id;
          row.det_index = di;
          row.src_index = si;
          // Self-attention fusion: sources are the concatenated N_L + N_C
          // set. Cross-attention / OT: sources are the camera candidates.
          bool src_is_lidar = n_src == rc.n_lidar + rc.n_camera && si < rc.n_lidar;
          row.src_modality = src_is_lidar ? "lidar" : "camera";
          row.weight = so.fusion.attention[static_cast<size_t>(di) * n_src + si];
          attn[static_cast<size_t>(i)].push_back(row);
        }
      }
    }
  });
  for (auto& rows : attn)
    out.attention_rows.insert(out.attention_rows.end(), rows.begin(), rows.end());

  out.report.num_categories = rc.num_categories;
  out.report.num_scenes = n;
  out.report.lidar = eval::evaluate_branch(out.lidar, out.gts, rc.num_categories);
  out.report.camera_before_vt =
      eval::evaluate_branch(out.cam_before_vt, out.gts, rc.num_categories);
  out.report.camera_after_vt = eval::evaluate_branch(out.cam_after_vt, out.gts, rc.num_categories);
  out.report.fused = eval::evaluate_branch(out.fused, out.gts, rc.num_categories);

  // Modality recall over the fused set when origins are tagged (the
  // self-attention and MLP strategies keep the N_L | N_C split), otherwise
  // over the branch outputs.
  std::vector<eval::ScenePredictions> rec_l(static_cast<size_t>(n)), rec_c(static_cast<size_t>(n));
  bool fused_tagged = rc.strategy == fuse::Strategy::self_attention ||
                      rc.strategy == fuse::Strategy::mlp;
  for (int i = 0; i < n; ++i) {
    rec_l[static_cast<size_t>(i)].scene_id = out.fused[static_cast<size_t>(i)].scene_id;
    rec_c[static_cast<size_t>(i)].scene_id = out.fused[static_cast<size_t>(i)].scene_id;
    if (fused_tagged) {
      for (const auto& d : out.fused[static_cast<size_t>(i)].detections)
        (d.source == det::DetSource::lidar ? rec_l : rec_c)[static_cast<size_t>(i)]
            .detections.push_back(d);
    } else {
      rec_l[static_cast<size_t>(i)] = out.lidar[static_cast<size_t>(i)];
      rec_c[static_cast<size_t>(i)] = out.cam_after_vt[static_cast<size_t>(i)];
    }
  }
  out.recall = eval::modality_recall(rec_l, rec_c, out.gts, rc.num_categories);
  return out;
}

inline std::string attention_csv(const std::vector<EvalOutputs::AttnRow>& rows) {
  std::string out = "scene_id,det_index,src_index,src_modality,weight\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%s,%.9g\n", r.scene_id, r.det_index, r.src_index,
                  r.src_modality.c_str(), r.weight);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation sweep: the four fusion strategies plus the two sequential
// variants, each trained briefly from the same stage-1 checkpoint.

struct AblationRow {
  std::string name;
  double map_at_2m = 0;
  int det_count = 0;  // fused detections per scene
};

inline std::vector<AblationRow> run_ablation(const RunConfig& base_rc,
                                             const std::string& stage1_ckpt,
                                             const std::vector<SceneSample>& train_scenes,
                                             const std::vector<SceneSample>& val_scenes,
                                             std::ostream* log = nullptr) {
  std::vector<AblationRow> rows;
  int subset = std::min<int>(base_rc.ablate.train_subset, static_cast<int>(train_scenes.size()));
  std::vector<SceneSample> sub(train_scenes.begin(), train_scenes.begin() + subset);

  RunConfig rc = base_rc;
  rc.train.stage2_epochs = rc.ablate.epochs;

  for (auto strat : {fuse::Strategy::self_attention, fuse::Strategy::mlp,
                     fuse::Strategy::cross_attention, fuse::Strategy::optimal_transport}) {
    rc.strategy = strat;
    ParamStore store;
    Pipeline pipe(rc, store);
    load_checkpoint(stage1_ckpt, store, cfg::config_hash(rc), /*allow_mismatch=*/true,
                    /*ignore_unknown=*/true);
    if (log) (*log) << "[ablate] " << fuse::strategy_name(strat) << "\n";
    train_stage2(pipe, store, rc, sub, log);
    auto ev = evaluate(pipe, val_scenes);
    AblationRow row;
    row.name = fuse::strategy_name(strat);
    row.map_at_2m = ev.report.fused.map_at_2m;
    row.det_count = ev.fused.empty()
                        ? 0
                        : static_cast<int>(ev.fused.front().detections.size());
    rows.push_back(row);
  }

  for (auto mode : {fuse::SequentialMode::inherit_feat, fuse::SequentialMode::reinit_feat}) {
    RunConfig src = base_rc;
    src.train.stage2_epochs = src.ablate.epochs;
    ParamStore store;
    Pipeline pipe(src, store, /*with_sequential=*/true);
    load_checkpoint(stage1_ckpt, store, cfg::config_hash(src), true, true);
    store.clear_frozen();
    store.freeze_prefix(model::kLidarPrefix);

    nn::AdamConfig ac;
    ac.lr = src.train.lr;
    ac.weight_decay = src.train.weight_decay;
    nn::AdamW opt(store, ac);
    const char* name = mode == fuse::SequentialMode::inherit_feat ? "sequential_inherit_feat"
                                                                  : "sequential_reinit_feat";
    if (log) (*log) << "[ablate] " << name << "\n";
    for (int epoch = 0; epoch < src.ablate.epochs; ++epoch) {
      for (const auto& s : sub) {
        store.zero_grads();
        auto res = pipe.forward_sequential(s, mode);
        std::vector<int> gt_cls;
        std::vector<std::vector<double>> gt_box;
        for (const auto& o : s.objects) {
          gt_cls.push_back(o.category);
          gt_box.push_back(det::encode_gt_lidar(o.box));
        }
        auto l = loss::detection_loss(res.fusion.head.cls_logits, res.fusion.head.box_vec,
                                      gt_cls, gt_box)
                     .total;
        if (!std::isfinite(l->values[0]))
          throw NumericalError("ablation diverged: non-finite loss");
        nn::backward(l);
        clip_gradients(store, src.train.grad_clip);
        opt.step();
      }
    }
    store.clear_frozen();

    // Evaluate the sequential stage's detections as the final output.
    std::vector<eval::ScenePredictions> preds(val_scenes.size());
    std::vector<eval::SceneGts> gts(val_scenes.size());
    parallel_for(static_cast<int>(val_scenes.size()), [&](int i) {
      nn::NoGradGuard ng;
      const auto& s = val_scenes[static_cast<size_t>(i)];
      auto res = pipe.forward_sequential(s, mode);
      preds[static_cast<size_t>(i)] = {s.scene_id, res.fusion.detections};
      gts[static_cast<size_t>(i)] = {s.scene_id, s.objects};
    });
    auto metrics = eval::evaluate_branch(preds, gts, src.num_categories);
    AblationRow row;
    row.name = name;
    row.map_at_2m = metrics.map_at_2m;
    row.det_count =
        preds.empty() ? 0 : static_cast<int>(preds.front().detections.size());
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,map_at_2m,detections_per_scene\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%d\n", r.name.c_str(), r.map_at_2m, r.det_count);
    out += buf;
  }
  return out;
}

}  // namespace sparsefuse::train

#endif  // SPARSEFUSE_TRAIN_HPP
