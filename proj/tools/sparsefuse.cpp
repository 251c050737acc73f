#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sparsefuse/gradchecks.hpp"
#include "sparsefuse/train.hpp"

namespace fs = std::filesystem;
using namespace sparsefuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitNumericalError = 3;
constexpr int kExitCheckFailure = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  uint64_t seed = 0;
  bool seed_set = false;
};

cfg::RunConfig resolve_config(const CommonOpts& o) {
  cfg::RunConfig rc = o.config_path.empty() ? cfg::default_config() : cfg::load_config(o.config_path);
  if (o.seed_set) rc.seed = o.seed;
  std::cout << "effective config:\n" << cfg::serialize_config(rc) << "\n";
  return rc;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "run configuration (JSON)");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "seed override")->each([&o](const std::string&) {
    o.seed_set = true;
  });
}

train::Dataset load_or_fail(const cfg::RunConfig& rc, const std::string& out_dir) {
  std::string root = out_dir + "/" + rc.data_dir;
  if (!fs::exists(root + "/split.json"))
    throw ConfigError("dataset not found under " + root + " (run `gen` first)");
  return train::load_dataset(root);
}

int cmd_gen(const CommonOpts& o) {
  auto rc = resolve_config(o);
  auto t0 = std::chrono::steady_clock::now();
  auto data = train::generate_dataset(rc);
  std::string root = o.out_dir + "/" + rc.data_dir;
  train::save_dataset(root, data);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << data.train.size() << " train / " << data.val.size()
            << " val scenes under " << root << " in " << secs << " s\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& o, int stage, const std::string& init_from) {
  auto rc = resolve_config(o);
  auto data = load_or_fail(rc, o.out_dir);
  fs::create_directories(o.out_dir);

  nn::ParamStore store;
  model::Pipeline pipe(rc, store);
  uint64_t hash = cfg::config_hash(rc);

  if (stage == 1 || stage == 0) {
    std::cout << "stage 1: LiDAR branch (" << rc.train.stage1_epochs << " epochs, "
              << data.train.size() << " scenes)\n";
    train::train_stage1(pipe, store, rc, data.train, &std::cout);
    train::save_checkpoint(o.out_dir + "/stage1.ckpt", store, hash, "stage1");
    std::cout << "wrote " << o.out_dir << "/stage1.ckpt\n";
  }
  if (stage == 2 || stage == 0) {
    if (stage == 2) {
      std::string from = init_from.empty() ? o.out_dir + "/stage1.ckpt" : init_from;
      train::load_checkpoint(from, store, hash);
      std::cout << "initialized from " << from << "\n";
    }
    std::cout << "stage 2: fusion framework, LiDAR components frozen ("
              << rc.train.stage2_epochs << " epochs)\n";
    train::train_stage2(pipe, store, rc, data.train, &std::cout);
    train::save_checkpoint(o.out_dir + "/stage2.ckpt", store, hash, "stage2");
    std::cout << "wrote " << o.out_dir << "/stage2.ckpt\n";
  }
  return kExitOk;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, bool allow_mismatch) {
  auto rc = resolve_config(o);
  auto data = load_or_fail(rc, o.out_dir);
  nn::ParamStore store;
  model::Pipeline pipe(rc, store);
  train::load_checkpoint(ckpt, store, cfg::config_hash(rc), allow_mismatch);

  auto ev = train::evaluate(pipe, data.val);
  if (eval::report_has_nan(ev.report)) {
    std::cerr << "metric report contains NaN\n";
    return kExitNumericalError;
  }
  fs::create_directories(o.out_dir);
  write_text_file(o.out_dir + "/metrics.json", eval::serialize_report(ev.report));
  write_text_file(o.out_dir + "/recall.json", eval::serialize_recall(ev.recall));
  std::cout << "mAP " << ev.report.fused.map << "  mAP@2m lidar " << ev.report.lidar.map_at_2m
            << " cam(beforeVT) " << ev.report.camera_before_vt.map_at_2m << " cam(afterVT) "
            << ev.report.camera_after_vt.map_at_2m << " fused " << ev.report.fused.map_at_2m
            << "\n";
  std::cout << "wrote " << o.out_dir << "/metrics.json, " << o.out_dir << "/recall.json\n";
  return kExitOk;
}

int cmd_infer(const CommonOpts& o, const std::string& ckpt, bool dump_attention,
              bool allow_mismatch) {
  auto rc = resolve_config(o);
  auto data = load_or_fail(rc, o.out_dir);
  nn::ParamStore store;
  model::Pipeline pipe(rc, store);
  train::load_checkpoint(ckpt, store, cfg::config_hash(rc), allow_mismatch);

  auto ev = train::evaluate(pipe, data.val, dump_attention);
  fs::create_directories(o.out_dir);

  JsonWriter w;
  w.begin_object();
  w.key("scenes");
  w.begin_array();
  for (const auto& sp : ev.fused) {
    w.begin_object();
    w.kv("scene_id", sp.scene_id);
    w.key("detections");
    w.begin_array();
    for (const auto& d : sp.detections) {
      w.begin_object();
      w.kv("category", d.category);
      w.kv("score", d.score);
      w.array("center", std::vector<double>{d.box.center.x, d.box.center.y, d.box.center.z});
      w.array("size", std::vector<double>{d.box.size.x, d.box.size.y, d.box.size.z});
      w.kv("yaw", d.box.yaw);
      w.kv("source", d.source == det::DetSource::lidar    ? "lidar"
                     : d.source == det::DetSource::camera ? "camera"
                                                          : "fused");
      w.end_object();
    }
    w.end_array();
    w.end_object();
  }
  w.end_array();
  w.end_object();
  write_text_file(o.out_dir + "/detections.json", w.str());
  std::cout << "wrote " << o.out_dir << "/detections.json\n";
  if (dump_attention) {
    write_text_file(o.out_dir + "/attention.csv", train::attention_csv(ev.attention_rows));
    std::cout << "wrote " << o.out_dir << "/attention.csv (" << ev.attention_rows.size()
              << " rows)\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const CommonOpts& o, int configs) {
  (void)o;
  bool ok = gradchecks::run_all(std::cout, configs);
  return ok ? kExitOk : kExitCheckFailure;
}

int cmd_ablate(const CommonOpts& o, const std::string& ckpt) {
  auto rc = resolve_config(o);
  auto data = load_or_fail(rc, o.out_dir);
  std::string stage1 = ckpt.empty() ? o.out_dir + "/stage1.ckpt" : ckpt;
  auto rows = train::run_ablation(rc, stage1, data.train, data.val, &std::cout);
  auto csv = train::ablation_csv(rows);
  fs::create_directories(o.out_dir);
  write_text_file(o.out_dir + "/ablation.csv", csv);
  std::cout << csv;
  std::cout << "wrote " << o.out_dir << "/ablation.csv (" << rows.size() << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse LiDAR-camera fusion detector on synthetic scenes"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, infer_o, grad_o, abl_o;
  int train_stage = 0;
  std::string train_init, eval_ckpt = "out/stage2.ckpt", infer_ckpt = "out/stage2.ckpt";
  std::string abl_ckpt;
  bool eval_force = false, infer_force = false, dump_attention = false;
  int grad_configs = 100;

  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  add_common(gen, gen_o);

  auto* tr = app.add_subcommand("train", "run the two-stage training schedule");
  add_common(tr, train_o);
  tr->add_option("--stage", train_stage, "1, 2, or 0 for both (default both)");
  tr->add_option("--init-from", train_init, "checkpoint to initialize stage 2 from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  add_common(ev, eval_o);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint path");
  ev->add_flag("--allow-config-mismatch", eval_force, "skip the config hash check");

  auto* in = app.add_subcommand("infer", "run inference and dump detections");
  add_common(in, infer_o);
  in->add_option("--checkpoint", infer_ckpt, "checkpoint path");
  in->add_flag("--dump-attention", dump_attention, "write fusion attention rows (CSV)");
  in->add_flag("--allow-config-mismatch", infer_force, "skip the config hash check");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, grad_o);
  gc->add_option("--configs", grad_configs, "random configurations per item");

  auto* ab = app.add_subcommand("ablate", "fusion-strategy and pipeline-structure sweep");
  add_common(ab, abl_o);
  ab->add_option("--checkpoint", abl_ckpt, "stage-1 checkpoint (default <out>/stage1.ckpt)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_o);
    if (tr->parsed()) return cmd_train(train_o, train_stage, train_init);
    if (ev->parsed()) return cmd_eval(eval_o, eval_ckpt, eval_force);
    if (in->parsed()) return cmd_infer(infer_o, infer_ckpt, dump_attention, infer_force);
    if (gc->parsed()) return cmd_gradcheck(grad_o, grad_configs);
    if (ab->parsed()) return cmd_ablate(abl_o, abl_ckpt);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitOk;
}
