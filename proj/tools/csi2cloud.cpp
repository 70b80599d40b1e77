// SPDX-License-Identifier: Apache-2.0
//
// csi2cloud command-line front end: dataset synthesis, two-stage training,
// baselines, reconstruction from CSI logs, and metric evaluation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csi2cloud/checkpoint.hpp"
#include "csi2cloud/metrics.hpp"
#include "csi2cloud/models.hpp"
#include "csi2cloud/synthdata.hpp"
#include "csi2cloud/training.hpp"

namespace fs = std::filesystem;
using namespace c2c;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNanAbort = 3;

struct CommonTrainOpts {
  TrainConfig cfg;
  std::string data_dir;
  std::string out_dir = "out";
};

void add_train_options(CLI::App* cmd, CommonTrainOpts& opts) {
  cmd->add_option("--data", opts.data_dir, "dataset directory (manifest.json inside)")
      ->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--epochs", opts.cfg.epochs, "training epochs");
  cmd->add_option("--batch-size", opts.cfg.batch_size, "minibatch size");
  cmd->add_option("--lr", opts.cfg.lr, "AdamW learning rate");
  cmd->add_option("--weight-decay", opts.cfg.weight_decay, "AdamW decoupled weight decay");
  cmd->add_option("--seed", opts.cfg.seed, "master seed");
  cmd->add_option("--latent-dim", opts.cfg.latent_dim, "latent dimension D");
  cmd->add_option("--points", opts.cfg.n_points, "points per cloud N");
  cmd->add_option("--patience", opts.cfg.early_stop_patience, "early-stop patience (epochs)");
  cmd->add_option("--clip-norm", opts.cfg.clip_norm, "gradient clipping norm");
  cmd->add_flag("--no-sanitize", [&opts](std::int64_t) { opts.cfg.sanitize_phase = false; },
                "feed raw phase features (skip unwrap + detrend)");
  cmd->add_flag("--quiet", [&opts](std::int64_t) { opts.cfg.verbose = false; },
                "suppress per-epoch progress lines");
}

PointNetAutoencoder load_autoencoder(const fs::path& ckpt_path, ModelManifest& manifest_out) {
  const fs::path manifest_path = fs::path(ckpt_path).replace_extension(".manifest.json");
  manifest_out = load_manifest(manifest_path);
  require(manifest_out.model_type == "pointnet-autoencoder",
          "expected a pointnet-autoencoder checkpoint at " + ckpt_path.string());
  PointNetConfig arch;
  arch.n_points = manifest_out.n_points;
  arch.latent_dim = manifest_out.latent_dim;
  PointNetAutoencoder model(arch, 0);
  load_model_state(model, load_checkpoint(ckpt_path));
  return model;
}

CsiEncoder load_csi_encoder(const fs::path& ckpt_path, ModelManifest& manifest_out) {
  const fs::path manifest_path = fs::path(ckpt_path).replace_extension(".manifest.json");
  manifest_out = load_manifest(manifest_path);
  require(manifest_out.model_type == "csi-encoder",
          "expected a csi-encoder checkpoint at " + ckpt_path.string());
  CsiEncoderConfig arch;
  arch.subcarriers = manifest_out.subcarriers;
  arch.links = manifest_out.links;
  arch.latent_dim = manifest_out.latent_dim;
  arch.sanitize = manifest_out.sanitize;
  CsiEncoder model(arch, 0);
  load_model_state(model, load_checkpoint(ckpt_path));
  return model;
}

ModelManifest base_manifest(const Dataset& ds, const TrainConfig& cfg) {
  ModelManifest m;
  m.n_points = cfg.n_points;
  m.latent_dim = cfg.latent_dim;
  m.sanitize = cfg.sanitize_phase;
  m.norm = ds.norm;
  m.dataset_hash = hash_hex(ds.content_hash);
  m.seed = cfg.seed;
  return m;
}

int finish_training(const TrainLog& log, const TrainConfig& cfg, const fs::path& out_dir,
                    const std::string& stem, const std::vector<CheckpointEntry>& state,
                    const ModelManifest& manifest) {
  fs::create_directories(out_dir);
  atomic_write_file(out_dir / (stem + ".log.jsonl"), train_log_jsonl(log, cfg));
  if (log.aborted_nan) {
    std::fprintf(stderr, "error: %s\n", log.note.c_str());
    return kExitNanAbort;
  }
  save_checkpoint(out_dir / (stem + ".ckpt"), state);
  save_manifest(manifest, out_dir / (stem + ".manifest.json"));
  std::printf("checkpoint: %s\n", (out_dir / (stem + ".ckpt")).c_str());
  std::printf("best epoch %zu, val %.6f\n", log.best_epoch, log.best_val);
  return kExitOk;
}

// --------------------------------------------------------------------------
// synth
// --------------------------------------------------------------------------

int cmd_synth(const DatasetConfig& base, std::size_t scenes, const std::string& out,
              bool force) {
  DatasetConfig cfg = base;
  if (scenes > 0) {
    const auto counts = split_counts(scenes);
    cfg.n_train = counts[0];
    cfg.n_val = counts[1];
    cfg.n_test = counts[2];
  }
  const fs::path out_dir(out);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force) {
      std::fprintf(stderr, "error: output directory %s is not empty (use --force)\n",
                   out_dir.c_str());
      return kExitError;
    }
  }
  const Dataset ds = make_dataset(cfg);
  // Build under a temp name, then swap in, so failures leave nothing behind.
  const fs::path tmp_dir = out_dir.string() + ".tmp";
  fs::remove_all(tmp_dir);
  write_dataset(ds, tmp_dir);
  fs::remove_all(out_dir);
  fs::rename(tmp_dir, out_dir);
  std::printf("scenes: %zu (train %zu / val %zu / test %zu)\n", ds.samples.size(), cfg.n_train,
              cfg.n_val, cfg.n_test);
  std::printf("manifest hash: %s\n", hash_hex(ds.content_hash).c_str());
  return kExitOk;
}

// --------------------------------------------------------------------------
// train <stage>
// --------------------------------------------------------------------------

int cmd_train(const std::string& stage, CommonTrainOpts& opts, const std::string& ae_path,
              bool freeze_decoder) {
  const Dataset ds = load_dataset(opts.data_dir);
  opts.cfg.freeze_decoder = freeze_decoder;
  const std::vector<PreparedSample> samples =
      prepare_samples(ds, opts.cfg.n_points, opts.cfg.sanitize_phase);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);

  if (stage == "pc-ae") {
    Stage1Result r = train_stage1(train, val, opts.cfg);
    ModelManifest m = base_manifest(ds, opts.cfg);
    m.model_type = "pointnet-autoencoder";
    return finish_training(r.log, opts.cfg, opts.out_dir, "pc_ae", r.model.state_entries(), m);
  }

  if (stage == "csi" || stage == "ablation") {
    if (ae_path.empty()) {
      std::fprintf(stderr,
                   "error: train %s depends on a stage-1 checkpoint; pass --ae <pc_ae.ckpt>\n",
                   stage.c_str());
      return kExitError;
    }
    ModelManifest ae_manifest;
    PointNetAutoencoder ae = load_autoencoder(ae_path, ae_manifest);
    opts.cfg.n_points = ae_manifest.n_points;
    opts.cfg.latent_dim = ae_manifest.latent_dim;
    const std::vector<PreparedSample> resamples =
        prepare_samples(ds, opts.cfg.n_points, opts.cfg.sanitize_phase);
    const auto train2 = split_of(resamples, 0);
    const auto val2 = split_of(resamples, 1);
    if (stage == "csi") {
      Stage2Result r = train_stage2(train2, val2, ae, opts.cfg);
      ModelManifest m = base_manifest(ds, opts.cfg);
      m.model_type = "csi-encoder";
      m.subcarriers = r.model.config().subcarriers;
      m.links = r.model.config().links;
      m.norm = ae_manifest.norm;
      return finish_training(r.log, opts.cfg, opts.out_dir, "csi_encoder",
                             r.model.state_entries(), m);
    }
    CsiToCloudResult r = train_ablation_no_alignment(train2, val2, ae, opts.cfg);
    ModelManifest m = base_manifest(ds, opts.cfg);
    m.model_type = "csi-to-cloud";
    m.subcarriers = r.model.encoder().config().subcarriers;
    m.links = r.model.encoder().config().links;
    m.norm = ae_manifest.norm;
    return finish_training(r.log, opts.cfg, opts.out_dir, "ablation", r.model.state_entries(),
                           m);
  }

  if (stage == "baseline-direct") {
    CsiToCloudResult r = train_direct_baseline(train, val, opts.cfg);
    ModelManifest m = base_manifest(ds, opts.cfg);
    m.model_type = "csi-to-cloud";
    m.subcarriers = r.model.encoder().config().subcarriers;
    m.links = r.model.encoder().config().links;
    return finish_training(r.log, opts.cfg, opts.out_dir, "baseline_direct",
                           r.model.state_entries(), m);
  }

  std::fprintf(stderr, "error: unknown stage '%s'\n", stage.c_str());
  return kExitError;
}

// --------------------------------------------------------------------------
// reconstruct
// --------------------------------------------------------------------------

int cmd_reconstruct(const std::string& ae_path, const std::string& enc_path,
                    const std::string& log_path, const std::string& out_path) {
  ModelManifest ae_manifest, enc_manifest;
  PointNetAutoencoder ae = load_autoencoder(ae_path, ae_manifest);
  CsiEncoder enc = load_csi_encoder(enc_path, enc_manifest);

  if (ae_manifest.latent_dim != enc_manifest.latent_dim) {
    std::fprintf(stderr, "error: manifest mismatch: latent_dim (autoencoder %zu, encoder %zu)\n",
                 ae_manifest.latent_dim, enc_manifest.latent_dim);
    return kExitError;
  }
  const std::vector<CsiFrame> frames = load_csi_log(log_path);
  if (frames.empty()) {
    std::fprintf(stderr, "error: no frames in %s\n", log_path.c_str());
    return kExitError;
  }
  if (frames[0].subcarriers != enc_manifest.subcarriers) {
    std::fprintf(stderr, "error: manifest mismatch: M (encoder expects %zu, log has %zu)\n",
                 enc_manifest.subcarriers, frames[0].subcarriers);
    return kExitError;
  }
  if (frames[0].links != enc_manifest.links) {
    std::fprintf(stderr, "error: manifest mismatch: K (encoder expects %zu, log has %zu)\n",
                 enc_manifest.links, frames[0].links);
    return kExitError;
  }
  const PointCloud cloud = reconstruct_from_csi(enc, ae, frames, enc_manifest.norm);
  save_points(cloud, out_path);
  std::printf("wrote %zu points to %s\n", cloud.size(), out_path.c_str());
  return kExitOk;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

std::map<std::string, fs::path> list_clouds(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".xyz" || entry.path().extension() == ".ply") {
      out[entry.path().stem().string()] = entry.path();
    }
  }
  return out;
}

int cmd_eval(const std::string& recon_dir, const std::string& gt_dir,
             const std::string& out_path) {
  const auto recon_files = list_clouds(recon_dir);
  const auto gt_files = list_clouds(gt_dir);
  std::vector<std::string> missing;
  for (const auto& [id, path] : recon_files) {
    if (!gt_files.count(id)) missing.push_back(id + " (no ground truth)");
  }
  for (const auto& [id, path] : gt_files) {
    if (!recon_files.count(id)) missing.push_back(id + " (no reconstruction)");
  }
  if (!missing.empty()) {
    std::fprintf(stderr, "error: sample ids do not match:\n");
    for (const std::string& m : missing) std::fprintf(stderr, "  %s\n", m.c_str());
    return kExitError;
  }
  if (recon_files.empty()) {
    std::fprintf(stderr, "error: no .xyz/.ply files in %s\n", recon_dir.c_str());
    return kExitError;
  }

  std::vector<PointCloud> recon_unit, gt_unit;
  std::vector<std::string> ids;
  for (const auto& [id, path] : recon_files) {
    ids.push_back(id);
    auto [r, g] = normalize_pair(load_points(path), load_points(gt_files.at(id)));
    recon_unit.push_back(std::move(r));
    gt_unit.push_back(std::move(g));
  }
  const MetricReport report = evaluate_set(recon_unit, gt_unit, ids);
  atomic_write_file(out_path, metric_report_csv(report));
  std::printf("samples: %zu\n", ids.size());
  std::printf("mean CD %.6f (std %.6f), mean EMD %.6f (std %.6f)\n", report.mean_cd,
              report.std_cd, report.mean_emd, report.std_emd);
  std::printf("report: %s\n", out_path.c_str());
  return kExitOk;
}

// --------------------------------------------------------------------------
// benchmark
// --------------------------------------------------------------------------

int cmd_benchmark(const std::string& data_dir, const std::string& out,
                  DatasetConfig data_cfg, TrainConfig cfg, bool tiny) {
  if (tiny) {
    data_cfg.n_train = 28;
    data_cfg.n_val = 4;
    data_cfg.n_test = 8;
    data_cfg.scene.cloud_points = 128;
    cfg.n_points = 128;
    cfg.latent_dim = 64;
  }
  data_cfg.seed = cfg.seed;
  Dataset ds;
  if (!data_dir.empty()) {
    ds = load_dataset(data_dir);
    if (ds.config.scene.cloud_points != cfg.n_points) cfg.n_points = ds.config.scene.cloud_points;
  } else {
    if (cfg.verbose) std::fprintf(stderr, "[benchmark] synthesizing dataset in memory\n");
    ds = make_dataset(data_cfg);
  }

  const BenchmarkResult result = run_benchmark(ds, cfg, fs::path(out));
  std::printf("dataset hash: %s\n", hash_hex(result.dataset_hash).c_str());
  std::printf("%s", benchmark_table(result).c_str());
  std::printf("stage-2 alignment: initial L_CSI %.6f, final %.6f\n", result.stage2_initial_lcsi,
              result.stage2_final_lcsi);
  std::printf("report: %s\n", (fs::path(out) / "report.csv").c_str());
  for (const BenchmarkRow& row : result.rows) {
    if (!row.complete) {
      std::fprintf(stderr, "warning: incomplete variant %s (training aborted)\n",
                   row.method.c_str());
      return kExitNanAbort;
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point clouds from WiFi channel state information"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file (flags override it)")
      ->envname("CSI2CLOUD_CONFIG");
  app.allow_config_extras(CLI::config_extras_mode::error);  // reject unknown keys

  // synth
  DatasetConfig synth_cfg;
  std::size_t synth_scenes = 0;
  std::string synth_out = "dataset";
  bool synth_force = false;
  CLI::App* synth = app.add_subcommand("synth", "generate a paired scene/CSI dataset");
  synth->add_option("--out", synth_out, "output dataset directory");
  synth->add_option("--scenes", synth_scenes,
                    "total scene count, split 70/10/20 (default: 200/25/50)");
  synth->add_option("--seed", synth_cfg.seed, "master seed");
  synth->add_option("--train", synth_cfg.n_train, "explicit train scene count");
  synth->add_option("--val", synth_cfg.n_val, "explicit val scene count");
  synth->add_option("--test", synth_cfg.n_test, "explicit test scene count");
  synth->add_option("--points", synth_cfg.scene.cloud_points, "points per cloud N");
  synth->add_option("--subcarriers", synth_cfg.radio.subcarriers, "OFDM subcarriers M");
  synth->add_option("--links", synth_cfg.scene.links, "antenna links K");
  synth->add_option("--snr-db", synth_cfg.snr_db, "target SNR for the AWGN level");
  synth->add_option("--frames", synth_cfg.frames_per_scene, "CSI realizations per scene");
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");

  // train
  CommonTrainOpts train_opts;
  train_opts.cfg.verbose = true;
  std::string train_stage;
  std::string train_ae;
  bool train_freeze_decoder = false;
  CLI::App* train = app.add_subcommand("train", "train one pipeline stage");
  train->add_option("stage", train_stage, "pc-ae | csi | baseline-direct | ablation")
      ->required();
  add_train_options(train, train_opts);
  train->add_option("--ae", train_ae, "stage-1 checkpoint (required for csi/ablation)");
  train->add_flag("--freeze-decoder", train_freeze_decoder,
                  "ablation: keep the pretrained decoder fixed");

  // reconstruct
  std::string rec_ae, rec_enc, rec_log, rec_out = "recon.xyz";
  CLI::App* rec = app.add_subcommand("reconstruct", "point cloud from a CSI log");
  rec->add_option("--ae", rec_ae, "pointnet autoencoder checkpoint")->required();
  rec->add_option("--encoder", rec_enc, "csi encoder checkpoint")->required();
  rec->add_option("--log", rec_log, "CSI log file")->required();
  rec->add_option("--out", rec_out, "output cloud (.xyz or .ply)");

  // eval
  std::string eval_recon, eval_gt, eval_out = "metrics.csv";
  CLI::App* eval = app.add_subcommand("eval", "CD/EMD report for reconstruction vs ground truth");
  eval->add_option("--recon", eval_recon, "directory of reconstructed clouds")->required();
  eval->add_option("--gt", eval_gt, "directory of ground-truth clouds")->required();
  eval->add_option("--out", eval_out, "output CSV report path");

  // benchmark
  DatasetConfig bench_data_cfg;
  TrainConfig bench_cfg;
  bench_cfg.verbose = true;
  std::string bench_data, bench_out = "benchmark";
  bool bench_tiny = false;
  CLI::App* bench = app.add_subcommand(
      "benchmark", "train all three variants on one dataset and compare CD/EMD");
  bench->add_option("--data", bench_data, "existing dataset directory (default: synthesize)");
  bench->add_option("--out", bench_out, "output directory for reports and checkpoints");
  bench->add_option("--seed", bench_cfg.seed, "master seed");
  bench->add_option("--epochs", bench_cfg.epochs, "epochs per variant");
  bench->add_option("--batch-size", bench_cfg.batch_size, "minibatch size");
  bench->add_option("--lr", bench_cfg.lr, "AdamW learning rate");
  bench->add_option("--patience", bench_cfg.early_stop_patience, "early-stop patience");
  bench->add_option("--latent-dim", bench_cfg.latent_dim, "latent dimension D");
  bench->add_option("--points", bench_cfg.n_points, "points per cloud N");
  bench->add_flag("--tiny", bench_tiny, "small profile: 40 scenes, N=128, D=64");
  bench->add_flag("--quiet", [&bench_cfg](std::int64_t) { bench_cfg.verbose = false; },
                  "suppress progress lines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_scenes, synth_out, synth_force);
    if (train->parsed()) return cmd_train(train_stage, train_opts, train_ae,
                                          train_freeze_decoder);
    if (rec->parsed()) return cmd_reconstruct(rec_ae, rec_enc, rec_log, rec_out);
    if (eval->parsed()) return cmd_eval(eval_recon, eval_gt, eval_out);
    if (bench->parsed()) return cmd_benchmark(bench_data, bench_out, bench_data_cfg, bench_cfg,
                                              bench_tiny);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitError;
  }
  return kExitError;
}
