// SPDX-License-Identifier: Apache-2.0
//
// Training loops. Stage 1 fits the PointNet autoencoder with Chamfer loss;
// stage 2 freezes it and fits the CSI encoder to the precomputed latent
// targets with MSE. The direct-regression baseline and the no-alignment
// ablation train with Chamfer end to end under the same budget. All loops
// are single-threaded and fully seeded so repeated runs reproduce losses
// bit for bit.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csi2cloud/losses.hpp"
#include "csi2cloud/metrics.hpp"
#include "csi2cloud/models.hpp"
#include "csi2cloud/ops.hpp"
#include "csi2cloud/optim.hpp"
#include "csi2cloud/synthdata.hpp"

namespace c2c {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  std::size_t latent_dim = 128;
  std::size_t n_points = 256;
  bool freeze_decoder = false;       // ablation only; stage 2 never touches it
  std::size_t early_stop_patience = 50;
  std::size_t log_interval = 25;
  double clip_norm = 5.0;
  bool sanitize_phase = true;
  bool recompute_latent_targets = false;  // stage 2: bypass the target cache
  bool verbose = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  double initial_train_metric = 0.0;  // eval-mode metric before any update
  double final_train_metric = 0.0;    // eval-mode metric of the kept model
  bool aborted_nan = false;
  std::string note;
};

inline std::string train_log_jsonl(const TrainLog& log, const TrainConfig& cfg) {
  std::string out;
  for (const EpochRecord& e : log.epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"val_metric", e.val_metric}};
    out += j.dump();
    out += '\n';
  }
  nlohmann::json tail{{"summary",
                       {{"best_epoch", log.best_epoch},
                        {"best_val", log.best_val},
                        {"initial_train_metric", log.initial_train_metric},
                        {"final_train_metric", log.final_train_metric},
                        {"aborted_nan", log.aborted_nan},
                        {"wall_seconds", log.wall_seconds},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"seed", cfg.seed},
                        {"note", log.note}}}};
  out += tail.dump();
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Sample preparation: normalized clouds as tensors, aggregated CSI features.
// ---------------------------------------------------------------------------

struct PreparedSample {
  std::string id;
  int split = 0;
  PointCloud cloud_norm;   // dataset-normalized, resampled to n_points
  Tensor cloud_channels;   // 3 x N encoder input
  Tensor features;         // 2K x M CSI encoder input
};

inline std::vector<PreparedSample> prepare_samples(const Dataset& ds, std::size_t n_points,
                                                   bool sanitize) {
  std::vector<PreparedSample> out;
  out.reserve(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const PairedSample& s = ds.samples[i];
    PreparedSample p;
    p.id = s.id;
    p.split = s.split;
    PointCloud cloud = resample_to_n(s.cloud, n_points, derive_seed(ds.config.seed, 0xf00 + i));
    p.cloud_norm = ds.norm.apply(cloud);
    p.cloud_channels = cloud_to_channels(p.cloud_norm);
    p.features = features_to_tensor(to_features(aggregate_frames(s.frames), sanitize));
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<const PreparedSample*> split_of(const std::vector<PreparedSample>& all,
                                                   int split) {
  std::vector<const PreparedSample*> out;
  for (const PreparedSample& s : all) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared loop machinery.
// ---------------------------------------------------------------------------

namespace detail {

struct LoopHooks {
  // Builds the training-mode loss graph for one sample.
  std::function<Tensor(const PreparedSample&)> train_loss;
  // Eval-mode scalar metric for one sample (no graph).
  std::function<double(const PreparedSample&)> eval_metric;
};

inline double mean_eval_metric(const std::vector<const PreparedSample*>& set,
                               const LoopHooks& hooks) {
  NoGradGuard no_grad;
  double acc = 0.0;
  for (const PreparedSample* s : set) acc += hooks.eval_metric(*s);
  return acc / static_cast<double>(set.size());
}

template <typename Model>
TrainLog run_loop(Model& model, std::vector<Parameter*> trainable,
                  const std::vector<const PreparedSample*>& train,
                  const std::vector<const PreparedSample*>& val, const TrainConfig& cfg,
                  const LoopHooks& hooks, const char* stage_name) {
  require(!train.empty(), "training: empty training set");
  require(!val.empty(), "training: empty validation set");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0,
          "training: positive epochs, batch size and lr required");

  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  AdamW optimizer(trainable, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  log.initial_train_metric = mean_eval_metric(train, hooks);

  std::vector<CheckpointEntry> best_state = model.state_entries();
  log.best_val = std::numeric_limits<double>::infinity();
  log.best_epoch = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xe000 + epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    bool failed = false;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(end - start);
        optimizer.zero_grad();
        for (std::size_t b = start; b < end; ++b) {
          Tensor loss = hooks.train_loss(*train[order[b]]);
          epoch_loss += loss.value();
          backward(scale(loss, inv_batch));
        }
        clip_grad_norm(trainable, cfg.clip_norm);
        optimizer.step();
      }
      epoch_loss /= static_cast<double>(train.size());
      if (!std::isfinite(epoch_loss)) throw NumericError("training loss is not finite");
    } catch (const NumericError& err) {
      log.aborted_nan = true;
      log.note = std::string(stage_name) + " aborted at epoch " + std::to_string(epoch) + ": " +
                 err.what() + "; last finite epoch " +
                 (log.epochs.empty() ? std::string("none")
                                     : std::to_string(log.epochs.back().epoch));
      failed = true;
    }
    if (failed) break;

    const double val_metric = mean_eval_metric(val, hooks);
    log.epochs.push_back({epoch, epoch_loss, val_metric});
    if (val_metric < log.best_val) {
      log.best_val = val_metric;
      log.best_epoch = epoch;
      best_state = model.state_entries();
    }
    if (cfg.verbose && (epoch % cfg.log_interval == 0 || epoch + 1 == cfg.epochs)) {
      std::fprintf(stderr, "[%s] epoch %zu train %.6f val %.6f\n", stage_name, epoch,
                   epoch_loss, val_metric);
    }
    if (epoch - log.best_epoch >= cfg.early_stop_patience) {
      if (cfg.verbose) {
        std::fprintf(stderr, "[%s] early stop at epoch %zu (best %zu)\n", stage_name, epoch,
                     log.best_epoch);
      }
      break;
    }
  }

  load_model_state(model, best_state);
  log.final_train_metric = mean_eval_metric(train, hooks);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: PointNet autoencoder on clouds, Chamfer loss.
// ---------------------------------------------------------------------------

struct Stage1Result {
  PointNetAutoencoder model;
  TrainLog log;
};

inline Stage1Result train_stage1(const std::vector<const PreparedSample*>& train,
                                 const std::vector<const PreparedSample*>& val,
                                 const TrainConfig& cfg, PointNetConfig arch = {}) {
  arch.n_points = cfg.n_points;
  arch.latent_dim = cfg.latent_dim;
  Stage1Result result{PointNetAutoencoder(arch, derive_seed(cfg.seed, 101)), {}};
  PointNetAutoencoder& model = result.model;

  detail::LoopHooks hooks;
  hooks.train_loss = [&model](const PreparedSample& s) {
    return chamfer_loss(model.reconstruct(s.cloud_channels, ForwardCtx::train()), s.cloud_norm);
  };
  hooks.eval_metric = [&model](const PreparedSample& s) {
    const Tensor recon = model.reconstruct(s.cloud_channels, ForwardCtx::eval());
    return chamfer_distance(tensor_to_cloud(recon), s.cloud_norm);
  };
  result.log = detail::run_loop(model, model.parameters(), train, val, cfg, hooks, "stage1");
  return result;
}

// ---------------------------------------------------------------------------
// Stage 2: CSI encoder aligned to the frozen autoencoder's latents.
// ---------------------------------------------------------------------------

struct Stage2Result {
  CsiEncoder model;
  TrainLog log;
};

inline Stage2Result train_stage2(const std::vector<const PreparedSample*>& train,
                                 const std::vector<const PreparedSample*>& val,
                                 PointNetAutoencoder& frozen_ae, const TrainConfig& cfg,
                                 CsiEncoderConfig arch = {}) {
  require(!train.empty() && !val.empty(), "stage2: empty split");
  arch.latent_dim = frozen_ae.config().latent_dim;
  arch.subcarriers = train[0]->features.extent(1);
  arch.links = train[0]->features.extent(0) / 2;
  arch.sanitize = cfg.sanitize_phase;
  Stage2Result result{CsiEncoder(arch, derive_seed(cfg.seed, 102)), {}};
  CsiEncoder& model = result.model;

  // Latent targets from the frozen encoder, cached once. The cache is
  // byte-equivalent to recomputing per epoch because eval mode is
  // deterministic; the flag exists so tests can prove that.
  auto compute_target = [&frozen_ae](const PreparedSample& s) {
    NoGradGuard no_grad;
    return frozen_ae.encode(s.cloud_channels, ForwardCtx::eval()).clone_detached();
  };
  std::unordered_map<const PreparedSample*, Tensor> target_cache;
  for (const auto* set : {&train, &val}) {
    for (const PreparedSample* s : *set) target_cache.emplace(s, compute_target(*s));
  }
  auto target_of = [&](const PreparedSample& s) -> Tensor {
    if (cfg.recompute_latent_targets) return compute_target(s);
    return target_cache.at(&s);
  };

  detail::LoopHooks hooks;
  hooks.train_loss = [&model, target_of](const PreparedSample& s) {
    return mse(model.forward(s.features, ForwardCtx::train()), target_of(s));
  };
  hooks.eval_metric = [&model, target_of](const PreparedSample& s) {
    return mse(model.forward(s.features, ForwardCtx::eval()), target_of(s)).value();
  };
  result.log = detail::run_loop(model, model.parameters(), train, val, cfg, hooks, "stage2");
  return result;
}

// ---------------------------------------------------------------------------
// Direct CSI-to-cloud regression baseline (no autoencoder, no alignment).
// ---------------------------------------------------------------------------

struct CsiToCloudResult {
  CsiToCloudModel model;
  TrainLog log;
};

inline CsiToCloudResult train_direct_baseline(const std::vector<const PreparedSample*>& train,
                                              const std::vector<const PreparedSample*>& val,
                                              const TrainConfig& cfg,
                                              CsiEncoderConfig enc_arch = {},
                                              std::vector<std::size_t> decoder_hidden = {256,
                                                                                         512}) {
  require(!train.empty() && !val.empty(), "baseline: empty split");
  enc_arch.latent_dim = cfg.latent_dim;
  enc_arch.subcarriers = train[0]->features.extent(1);
  enc_arch.links = train[0]->features.extent(0) / 2;
  enc_arch.sanitize = cfg.sanitize_phase;
  CsiToCloudResult result{
      CsiToCloudModel(enc_arch, decoder_hidden, cfg.n_points, derive_seed(cfg.seed, 103)), {}};
  CsiToCloudModel& model = result.model;

  detail::LoopHooks hooks;
  hooks.train_loss = [&model](const PreparedSample& s) {
    return chamfer_loss(model.forward(s.features, ForwardCtx::train()), s.cloud_norm);
  };
  hooks.eval_metric = [&model](const PreparedSample& s) {
    const Tensor recon = model.forward(s.features, ForwardCtx::eval());
    return chamfer_distance(tensor_to_cloud(recon), s.cloud_norm);
  };
  result.log = detail::run_loop(model, model.parameters(), train, val, cfg, hooks, "direct");
  return result;
}

// ---------------------------------------------------------------------------
// Ablation: CSI encoder drives the pretrained decoder, Chamfer loss only,
// no latent alignment term. The decoder fine-tunes jointly unless
// cfg.freeze_decoder is set.
// ---------------------------------------------------------------------------

inline CsiToCloudResult train_ablation_no_alignment(
    const std::vector<const PreparedSample*>& train,
    const std::vector<const PreparedSample*>& val, PointNetAutoencoder& stage1_ae,
    const TrainConfig& cfg, CsiEncoderConfig enc_arch = {}) {
  require(!train.empty() && !val.empty(), "ablation: empty split");
  enc_arch.latent_dim = stage1_ae.config().latent_dim;
  enc_arch.subcarriers = train[0]->features.extent(1);
  enc_arch.links = train[0]->features.extent(0) / 2;
  enc_arch.sanitize = cfg.sanitize_phase;
  CsiToCloudResult result{CsiToCloudModel(enc_arch, stage1_ae.config().decoder_hidden,
                                          stage1_ae.config().n_points,
                                          derive_seed(cfg.seed, 104)),
                          {}};
  CsiToCloudModel& model = result.model;
  model.decoder().copy_values_from(stage1_ae.decoder());

  std::vector<Parameter*> trainable =
      cfg.freeze_decoder ? model.encoder_parameters() : model.parameters();

  detail::LoopHooks hooks;
  hooks.train_loss = [&model](const PreparedSample& s) {
    return chamfer_loss(model.forward(s.features, ForwardCtx::train()), s.cloud_norm);
  };
  hooks.eval_metric = [&model](const PreparedSample& s) {
    const Tensor recon = model.forward(s.features, ForwardCtx::eval());
    return chamfer_distance(tensor_to_cloud(recon), s.cloud_norm);
  };
  result.log = detail::run_loop(model, trainable, train, val, cfg, hooks, "ablation");
  return result;
}

// ---------------------------------------------------------------------------
// Benchmark: trains all three variants on identical splits and seeds and
// evaluates them on the held-out test scenes. Per-pair metrics are computed
// in normalized units: the ground truth's unit-sphere transform is applied
// to both clouds.
// ---------------------------------------------------------------------------

inline std::pair<PointCloud, PointCloud> normalize_pair(const PointCloud& recon_world,
                                                        const PointCloud& gt_world) {
  auto [gt_unit, t] = normalize_unit_sphere(gt_world);
  return {t.apply(recon_world), gt_unit};
}

struct BenchmarkRow {
  std::string method;
  MetricReport report;
  std::size_t param_count = 0;
  bool complete = false;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;
  std::uint64_t dataset_hash = 0;
  double stage1_initial_lcsi = 0.0;  // stage-2 alignment bookkeeping
  double stage2_initial_lcsi = 0.0;
  double stage2_final_lcsi = 0.0;
  std::uint64_t ae_hash_before_stage2 = 0;
  std::uint64_t ae_hash_after_stage2 = 0;
  TrainLog stage1_log, stage2_log, direct_log, ablation_log;
};

inline std::string benchmark_csv(const BenchmarkResult& r) {
  std::string out = "method,mean_cd,std_cd,mean_emd,std_emd,params,complete\n";
  for (const BenchmarkRow& row : r.rows) {
    out += row.method + ',' + fmt_fixed(row.report.mean_cd) + ',' +
           fmt_fixed(row.report.std_cd) + ',' + fmt_fixed(row.report.mean_emd) + ',' +
           fmt_fixed(row.report.std_emd) + ',' + std::to_string(row.param_count) + ',' +
           (row.complete ? "yes" : "no") + '\n';
  }
  return out;
}

inline std::string benchmark_table(const BenchmarkResult& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-36s %10s %10s %10s %10s\n", "Method", "Mean CD",
                "Std Dev", "Mean EMD", "Std Dev");
  out += line;
  out += std::string(80, '-') + "\n";
  for (const BenchmarkRow& row : r.rows) {
    std::snprintf(line, sizeof line, "%-36s %10.4f %10.4f %10.4f %10.4f%s\n", row.method.c_str(),
                  row.report.mean_cd, row.report.std_cd, row.report.mean_emd, row.report.std_emd,
                  row.complete ? "" : "  (incomplete)");
    out += line;
  }
  return out;
}

inline BenchmarkResult run_benchmark(const Dataset& ds, const TrainConfig& cfg,
                                     const std::optional<std::filesystem::path>& out_dir = {}) {
  namespace fs = std::filesystem;
  BenchmarkResult result;
  result.dataset_hash = ds.content_hash;

  const std::vector<PreparedSample> samples =
      prepare_samples(ds, cfg.n_points, cfg.sanitize_phase);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  const auto test = split_of(samples, 2);
  require(!test.empty(), "benchmark: empty test split");

  if (cfg.verbose) std::fprintf(stderr, "[benchmark] stage 1 (%zu train scenes)\n", train.size());
  Stage1Result stage1 = train_stage1(train, val, cfg);
  result.stage1_log = stage1.log;

  result.ae_hash_before_stage2 = fnv1a64(serialize_checkpoint(stage1.model.state_entries()));
  if (cfg.verbose) std::fprintf(stderr, "[benchmark] stage 2 (latent alignment)\n");
  Stage2Result stage2 = train_stage2(train, val, stage1.model, cfg);
  result.stage2_log = stage2.log;
  result.ae_hash_after_stage2 = fnv1a64(serialize_checkpoint(stage1.model.state_entries()));
  result.stage2_initial_lcsi = stage2.log.initial_train_metric;
  result.stage2_final_lcsi = stage2.log.final_train_metric;

  if (cfg.verbose) std::fprintf(stderr, "[benchmark] direct regression baseline\n");
  CsiToCloudResult direct = train_direct_baseline(train, val, cfg);
  result.direct_log = direct.log;

  if (cfg.verbose) std::fprintf(stderr, "[benchmark] ablation (no alignment)\n");
  CsiToCloudResult ablation = train_ablation_no_alignment(train, val, stage1.model, cfg);
  result.ablation_log = ablation.log;

  // Held-out reconstructions, world coordinates.
  auto reconstruct = [&](const PreparedSample& s, int variant) {
    NoGradGuard no_grad;
    Tensor cloud_t;
    if (variant == 0) {
      cloud_t = direct.model.forward(s.features, ForwardCtx::eval());
    } else if (variant == 1) {
      cloud_t = ablation.model.forward(s.features, ForwardCtx::eval());
    } else {
      const Tensor z = stage2.model.forward(s.features, ForwardCtx::eval());
      cloud_t = stage1.model.decode(z, ForwardCtx::eval());
    }
    return ds.norm.invert(tensor_to_cloud(cloud_t));
  };

  const char* names[3] = {"direct-regression", "no-alignment", "proposed"};
  std::vector<std::vector<PointCloud>> recon_world(3);
  std::vector<PointCloud> gt_world;
  std::vector<std::string> ids;
  for (const PreparedSample* s : test) {
    ids.push_back(s->id);
    gt_world.push_back(ds.norm.invert(s->cloud_norm));
    for (int v = 0; v < 3; ++v) recon_world[v].push_back(reconstruct(*s, v));
  }

  for (int v = 0; v < 3; ++v) {
    std::vector<PointCloud> recon_unit, gt_unit;
    for (std::size_t i = 0; i < gt_world.size(); ++i) {
      auto [r, g] = normalize_pair(recon_world[v][i], gt_world[i]);
      recon_unit.push_back(std::move(r));
      gt_unit.push_back(std::move(g));
    }
    BenchmarkRow row;
    row.method = names[v];
    row.report = evaluate_set(recon_unit, gt_unit, ids);
    row.param_count = v == 0 ? parameter_count(direct.model.parameters())
                     : v == 1 ? parameter_count(ablation.model.parameters())
                              : parameter_count(stage2.model.parameters()) +
                                    parameter_count(stage1.model.decoder_parameters());
    row.complete = !(v == 0 ? direct.log.aborted_nan
                    : v == 1 ? ablation.log.aborted_nan
                             : (stage1.log.aborted_nan || stage2.log.aborted_nan));
    result.rows.push_back(std::move(row));
  }

  if (out_dir) {
    fs::create_directories(*out_dir);
    atomic_write_file(*out_dir / "report.csv", benchmark_csv(result));
    atomic_write_file(*out_dir / "report.txt", benchmark_table(result));
    for (int v = 0; v < 3; ++v) {
      atomic_write_file(*out_dir / (std::string(names[v]) + "_samples.csv"),
                        metric_report_csv(result.rows[v].report));
      const fs::path recon_dir = *out_dir / "recon" / names[v];
      fs::create_directories(recon_dir);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        save_points(recon_world[v][i], recon_dir / (ids[i] + ".xyz"), CloudFormat::kXyz);
      }
    }
    const fs::path gt_dir = *out_dir / "gt";
    fs::create_directories(gt_dir);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      save_points(gt_world[i], gt_dir / (ids[i] + ".xyz"), CloudFormat::kXyz);
    }
    // Checkpoints + manifests for downstream reconstruct/eval runs.
    ModelManifest ae_manifest;
    ae_manifest.model_type = "pointnet-autoencoder";
    ae_manifest.n_points = cfg.n_points;
    ae_manifest.latent_dim = cfg.latent_dim;
    ae_manifest.sanitize = cfg.sanitize_phase;
    ae_manifest.norm = ds.norm;
    ae_manifest.dataset_hash = hash_hex(ds.content_hash);
    ae_manifest.seed = cfg.seed;
    save_checkpoint(*out_dir / "pc_ae.ckpt", stage1.model.state_entries());
    save_manifest(ae_manifest, *out_dir / "pc_ae.manifest.json");

    ModelManifest enc_manifest = ae_manifest;
    enc_manifest.model_type = "csi-encoder";
    enc_manifest.subcarriers = stage2.model.config().subcarriers;
    enc_manifest.links = stage2.model.config().links;
    save_checkpoint(*out_dir / "csi_encoder.ckpt", stage2.model.state_entries());
    save_manifest(enc_manifest, *out_dir / "csi_encoder.manifest.json");

    atomic_write_file(*out_dir / "stage1.log.jsonl", train_log_jsonl(stage1.log, cfg));
    atomic_write_file(*out_dir / "stage2.log.jsonl", train_log_jsonl(stage2.log, cfg));
    atomic_write_file(*out_dir / "direct.log.jsonl", train_log_jsonl(direct.log, cfg));
    atomic_write_file(*out_dir / "ablation.log.jsonl", train_log_jsonl(ablation.log, cfg));
  }
  return result;
}

}  // namespace c2c
