// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "csi2cloud/training.hpp"

using namespace c2c;

namespace {

// Small paired dataset shared by the loop tests; generated once.
const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    DatasetConfig cfg;
    cfg.n_train = 6;
    cfg.n_val = 2;
    cfg.n_test = 2;
    cfg.scene.wall_scatterers = 16;
    cfg.scene.clusters_min = 1;
    cfg.scene.clusters_max = 2;
    cfg.scene.cluster_points_min = 4;
    cfg.scene.cluster_points_max = 8;
    cfg.scene.cloud_points = 24;
    cfg.radio.subcarriers = 16;
    cfg.frames_per_scene = 3;
    cfg.seed = 2024;
    return make_dataset(cfg);
  }();
  return ds;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.n_points = 24;
  cfg.latent_dim = 8;
  cfg.early_stop_patience = 40;
  cfg.seed = 5;
  return cfg;
}

PointNetConfig tiny_arch() {
  PointNetConfig arch;
  arch.encoder_channels = {16, 16};
  arch.decoder_hidden = {32, 32};
  return arch;
}

}  // namespace

TEST_CASE("stage 1 reduces the training loss and is seed-deterministic") {
  const auto samples = prepare_samples(tiny_dataset(), 24, true);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  const TrainConfig cfg = tiny_train_config();

  Stage1Result a = train_stage1(train, val, cfg, tiny_arch());
  REQUIRE_FALSE(a.log.aborted_nan);
  REQUIRE_FALSE(a.log.epochs.empty());

  SECTION("descent: late epochs beat early epochs on a 5-epoch moving average") {
    REQUIRE(a.log.epochs.size() >= 10);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      head += a.log.epochs[i].train_loss;
      tail += a.log.epochs[a.log.epochs.size() - 1 - i].train_loss;
    }
    CHECK(tail < head);
    CHECK(a.log.final_train_metric < a.log.initial_train_metric);
  }

  SECTION("epochs are recorded contiguously from zero") {
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) CHECK(a.log.epochs[i].epoch == i);
  }

  SECTION("same seed reproduces the loss trace bit for bit") {
    Stage1Result b = train_stage1(train, val, cfg, tiny_arch());
    REQUIRE(b.log.epochs.size() == a.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
      CHECK(b.log.epochs[i].train_loss == a.log.epochs[i].train_loss);
      CHECK(b.log.epochs[i].val_metric == a.log.epochs[i].val_metric);
    }
    CHECK(serialize_checkpoint(b.model.state_entries()) ==
          serialize_checkpoint(a.model.state_entries()));
  }
}

TEST_CASE("stage 2 aligns latents without touching the autoencoder") {
  const auto samples = prepare_samples(tiny_dataset(), 24, true);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  TrainConfig cfg = tiny_train_config();

  Stage1Result stage1 = train_stage1(train, val, cfg, tiny_arch());
  const std::string ae_before = serialize_checkpoint(stage1.model.state_entries());

  CsiEncoderConfig enc_arch;
  enc_arch.channels = {16, 16};
  Stage2Result stage2 = train_stage2(train, val, stage1.model, cfg, enc_arch);
  REQUIRE_FALSE(stage2.log.aborted_nan);

  SECTION("frozen autoencoder is bit-identical before and after") {
    CHECK(serialize_checkpoint(stage1.model.state_entries()) == ae_before);
  }

  SECTION("alignment loss drops") {
    CHECK(stage2.log.final_train_metric < stage2.log.initial_train_metric);
  }

  SECTION("cached latent targets match recompute-per-epoch training exactly") {
    TrainConfig recompute_cfg = cfg;
    recompute_cfg.recompute_latent_targets = true;
    Stage2Result recomputed = train_stage2(train, val, stage1.model, recompute_cfg, enc_arch);
    REQUIRE(recomputed.log.epochs.size() == stage2.log.epochs.size());
    for (std::size_t i = 0; i < stage2.log.epochs.size(); ++i) {
      CHECK(recomputed.log.epochs[i].train_loss == stage2.log.epochs[i].train_loss);
    }
    CHECK(serialize_checkpoint(recomputed.model.state_entries()) ==
          serialize_checkpoint(stage2.model.state_entries()));
  }

  SECTION("feature shape mismatch is rejected") {
    std::vector<PreparedSample> broken;
    broken.push_back(*train[0]);
    broken[0].features = Tensor::zeros({2, 16});  // one link dropped
    std::vector<const PreparedSample*> broken_train = {&broken[0], train[1]};
    CHECK_THROWS_AS(train_stage2(broken_train, val, stage1.model, cfg, enc_arch),
                    ContractViolation);
  }
}

TEST_CASE("direct baseline trains with chamfer loss end to end") {
  const auto samples = prepare_samples(tiny_dataset(), 24, true);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  TrainConfig cfg = tiny_train_config();

  CsiEncoderConfig enc_arch;
  enc_arch.channels = {16, 16};
  CsiToCloudResult direct = train_direct_baseline(train, val, cfg, enc_arch, {32, 32});
  REQUIRE_FALSE(direct.log.aborted_nan);
  CHECK(direct.log.final_train_metric < direct.log.initial_train_metric);
}

TEST_CASE("ablation fine-tunes the pretrained decoder unless frozen") {
  const auto samples = prepare_samples(tiny_dataset(), 24, true);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  TrainConfig cfg = tiny_train_config();

  Stage1Result stage1 = train_stage1(train, val, cfg, tiny_arch());
  const std::string decoder_before = [&] {
    std::vector<CheckpointEntry> entries;
    stage1.model.decoder().collect_state(entries);
    return serialize_checkpoint(entries);
  }();

  CsiEncoderConfig enc_arch;
  enc_arch.channels = {16, 16};

  SECTION("fine-tune mode moves the copied decoder, not the stage-1 one") {
    CsiToCloudResult ablation =
        train_ablation_no_alignment(train, val, stage1.model, cfg, enc_arch);
    REQUIRE_FALSE(ablation.log.aborted_nan);
    CHECK(ablation.log.final_train_metric < ablation.log.initial_train_metric);

    std::vector<CheckpointEntry> after;
    stage1.model.decoder().collect_state(after);
    CHECK(serialize_checkpoint(after) == decoder_before);  // source untouched

    std::vector<CheckpointEntry> tuned;
    ablation.model.decoder().collect_state(tuned);
    CHECK(serialize_checkpoint(tuned) != decoder_before);  // copy fine-tuned
  }

  SECTION("freeze mode keeps the decoder fixed") {
    TrainConfig frozen_cfg = cfg;
    frozen_cfg.freeze_decoder = true;
    CsiToCloudResult ablation =
        train_ablation_no_alignment(train, val, stage1.model, frozen_cfg, enc_arch);
    std::vector<CheckpointEntry> tuned;
    ablation.model.decoder().collect_state(tuned);
    CHECK(serialize_checkpoint(tuned) == decoder_before);
  }
}

TEST_CASE("training aborts on numeric blow-up with a diagnostic") {
  const auto samples = prepare_samples(tiny_dataset(), 24, true);
  const auto train = split_of(samples, 0);
  const auto val = split_of(samples, 1);
  TrainConfig cfg = tiny_train_config();
  cfg.lr = 1e155;  // guaranteed overflow within an epoch or two
  cfg.epochs = 10;

  Stage1Result r = train_stage1(train, val, cfg, tiny_arch());
  CHECK(r.log.aborted_nan);
  CHECK(r.log.note.find("aborted at epoch") != std::string::npos);
}

TEST_CASE("benchmark emits one row per variant and reproduces bit for bit") {
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 8;
  const BenchmarkResult a = run_benchmark(tiny_dataset(), cfg);
  REQUIRE(a.rows.size() == 3);
  CHECK(a.rows[0].method == "direct-regression");
  CHECK(a.rows[1].method == "no-alignment");
  CHECK(a.rows[2].method == "proposed");
  for (const BenchmarkRow& row : a.rows) {
    CHECK(row.complete);
    CHECK(row.param_count > 0);
    CHECK(row.report.cd.size() == 2);  // test split size
  }
  CHECK(a.ae_hash_before_stage2 == a.ae_hash_after_stage2);

  const BenchmarkResult b = run_benchmark(tiny_dataset(), cfg);
  CHECK(benchmark_csv(a) == benchmark_csv(b));
  CHECK(benchmark_table(a) == benchmark_table(b));
  for (int v = 0; v < 3; ++v) {
    CHECK(metric_report_csv(a.rows[v].report) == metric_report_csv(b.rows[v].report));
  }
}

TEST_CASE("train log serialization round trips the records") {
  TrainLog log;
  log.epochs = {{0, 1.5, 2.0}, {1, 1.0, 1.5}};
  log.best_epoch = 1;
  log.best_val = 1.5;
  log.wall_seconds = 0.25;
  const std::string text = train_log_jsonl(log, TrainConfig{});
  std::size_t lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == 3);  // two epochs + summary
  CHECK(text.find("\"epoch\":0") != std::string::npos);
  CHECK(text.find("\"summary\"") != std::string::npos);
}
