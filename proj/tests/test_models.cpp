// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>

#include "csi2cloud/models.hpp"
#include "csi2cloud/rng.hpp"
#include "csi2cloud/synthdata.hpp"
#include "fd_check.hpp"

using namespace c2c;
using c2c::testing::fd_gradient;
using c2c::testing::rel_error;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back(
        {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  return cloud;
}

CsiFeatures random_features(std::size_t m, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  CsiFeatures f;
  f.subcarriers = m;
  f.links = k;
  f.c.resize(m * 2 * k);
  for (double& v : f.c) v = rng.uniform(-1, 1);
  return f;
}

PointNetConfig tiny_pointnet() {
  PointNetConfig cfg;
  cfg.n_points = 8;
  cfg.latent_dim = 4;
  cfg.encoder_channels = {8, 16};
  cfg.decoder_hidden = {16, 24};
  return cfg;
}

}  // namespace

TEST_CASE("pointnet encode/decode shape contracts") {
  PointNetAutoencoder model(tiny_pointnet(), 3);
  const PointCloud cloud = random_cloud(8, 1);
  const Tensor g = model.encode_cloud(cloud, ForwardCtx::eval());
  CHECK(g.shape() == Shape{4});

  const Tensor decoded = model.decode(g, ForwardCtx::eval());
  CHECK(decoded.shape() == Shape{8, 3});

  const PointCloud wrong = random_cloud(9, 2);
  CHECK_THROWS_AS(model.encode_cloud(wrong, ForwardCtx::eval()), ContractViolation);
  CHECK_THROWS_AS(model.decode(Tensor::zeros({5}), ForwardCtx::eval()), ContractViolation);
}

TEST_CASE("pointnet encode is exactly permutation invariant in eval mode") {
  PointNetAutoencoder model(tiny_pointnet(), 5);
  const PointCloud cloud = random_cloud(8, 11);
  const Tensor g = model.encode_cloud(cloud, ForwardCtx::eval());
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud permuted = cloud;
    rng.shuffle(permuted.points);
    const Tensor gp = model.encode_cloud(permuted, ForwardCtx::eval());
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(gp[i] == g[i]);
  }
}

TEST_CASE("pointnet latents distinguish distinct clouds") {
  PointNetAutoencoder model(tiny_pointnet(), 7);
  const Tensor g1 = model.encode_cloud(random_cloud(8, 21), ForwardCtx::eval());
  const Tensor g2 = model.encode_cloud(random_cloud(8, 22), ForwardCtx::eval());
  bool differ = false;
  for (std::size_t i = 0; i < g1.numel(); ++i) differ = differ || g1[i] != g2[i];
  CHECK(differ);
}

TEST_CASE("pointnet decode is deterministic") {
  PointNetAutoencoder model(tiny_pointnet(), 9);
  Rng rng(31);
  std::vector<double> gv(4);
  for (double& v : gv) v = rng.uniform(-1, 1);
  const Tensor g = Tensor::from_values({4}, gv);
  const Tensor a = model.decode(g, ForwardCtx::eval());
  const Tensor b = model.decode(g, ForwardCtx::eval());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("csi encoder shape contracts and latent agreement") {
  CsiEncoderConfig cfg;
  cfg.subcarriers = 16;
  cfg.links = 2;
  cfg.latent_dim = 4;
  cfg.channels = {8, 8};
  CsiEncoder enc(cfg, 13);

  const Tensor z = enc.forward_features(random_features(16, 2, 41), ForwardCtx::eval());
  CHECK(z.shape() == Shape{4});

  PointNetAutoencoder ae(tiny_pointnet(), 13);
  CHECK(z.extent(0) == ae.config().latent_dim);  // paired models agree on D

  CHECK_THROWS_AS(enc.forward_features(random_features(8, 2, 42), ForwardCtx::eval()),
                  ContractViolation);
  CHECK_THROWS_AS(enc.forward_features(random_features(16, 1, 43), ForwardCtx::eval()),
                  ContractViolation);

  const Tensor z2 = enc.forward_features(random_features(16, 2, 41), ForwardCtx::eval());
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z2[i] == z[i]);  // deterministic
}

TEST_CASE("csi-to-cloud models produce N x 3 output") {
  CsiEncoderConfig cfg;
  cfg.subcarriers = 16;
  cfg.links = 2;
  cfg.latent_dim = 4;
  cfg.channels = {8, 8};
  CsiToCloudModel direct(cfg, {16, 24}, 8, 17);
  const Tensor out = direct.forward(features_to_tensor(random_features(16, 2, 51)),
                                    ForwardCtx::eval());
  CHECK(out.shape() == Shape{8, 3});
  CHECK(parameter_count(direct.parameters()) > 0);
}

TEST_CASE("end-to-end chamfer gradients pass FD on a tiny config") {
  PointNetAutoencoder model(tiny_pointnet(), 19);
  const PointCloud cloud = random_cloud(8, 61);
  const Tensor x = cloud_to_channels(cloud);

  auto loss_fn = [&] {
    return chamfer_loss(model.reconstruct(x, ForwardCtx::train_frozen_stats()), cloud);
  };
  backward(loss_fn());

  for (Parameter* p : model.parameters()) {
    const std::vector<double> base(p->value.data().begin(), p->value.data().end());
    const auto fd = fd_gradient(
        [&](std::span<const double> v) {
          std::copy(v.begin(), v.end(), p->value.data().begin());
          const double out = loss_fn().value();
          std::copy(base.begin(), base.end(), p->value.data().begin());
          return out;
        },
        base);
    INFO("parameter " << p->name);
    CHECK(rel_error(p->value.grad(), fd) < 1e-3);
    p->value.zero_grad();
  }
}

TEST_CASE("reconstruct_from_csi equals the manual composition") {
  PointNetAutoencoder ae(tiny_pointnet(), 23);
  CsiEncoderConfig cfg;
  cfg.subcarriers = 16;
  cfg.links = 2;
  cfg.latent_dim = 4;
  cfg.channels = {8, 8};
  cfg.sanitize = true;
  CsiEncoder enc(cfg, 23);

  Rng rng(71);
  std::vector<CsiFrame> frames;
  for (int i = 0; i < 3; ++i) {
    CsiFrame f;
    f.subcarriers = 16;
    f.links = 2;
    f.timestamp = 0.01 * i;
    f.h.resize(32);
    for (Complex& v : f.h) v = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    frames.push_back(std::move(f));
  }
  NormTransform norm;
  norm.centroid = {1.0, 2.0, 0.5};
  norm.scale = 3.0;

  const PointCloud got = reconstruct_from_csi(enc, ae, frames, norm);
  REQUIRE(got.size() == 8);

  // Manual composition of the documented pipeline.
  const CsiFeatures feats = to_features(aggregate_frames(frames), true);
  const Tensor z = enc.forward_features(feats, ForwardCtx::eval());
  const PointCloud manual =
      norm.invert(tensor_to_cloud(ae.decode(z, ForwardCtx::eval())));
  for (std::size_t i = 0; i < 8; ++i) CHECK(got[i] == manual[i]);

  PointNetAutoencoder mismatched(PointNetConfig{8, 6, {8, 16}, {16, 24}}, 29);
  CHECK_THROWS_AS(reconstruct_from_csi(enc, mismatched, frames, norm), ContractViolation);
}

TEST_CASE("model state round trips through checkpoints") {
  PointNetAutoencoder a(tiny_pointnet(), 31);
  PointNetAutoencoder b(tiny_pointnet(), 32);  // different init

  const PointCloud probe = random_cloud(8, 81);
  const Tensor ga = a.encode_cloud(probe, ForwardCtx::eval());
  const Tensor gb_before = b.encode_cloud(probe, ForwardCtx::eval());
  bool differ = false;
  for (std::size_t i = 0; i < ga.numel(); ++i) differ = differ || ga[i] != gb_before[i];
  REQUIRE(differ);

  load_model_state(b, a.state_entries());
  const Tensor gb_after = b.encode_cloud(probe, ForwardCtx::eval());
  for (std::size_t i = 0; i < ga.numel(); ++i) CHECK(gb_after[i] == ga[i]);

  // Serialized form is stable under a save -> load -> save cycle.
  const std::string once = serialize_checkpoint(a.state_entries());
  CHECK(serialize_checkpoint(parse_checkpoint(once)) == once);
}

TEST_CASE("manifest round trip and compatibility fields") {
  ModelManifest m;
  m.model_type = "csi-encoder";
  m.n_points = 128;
  m.latent_dim = 64;
  m.subcarriers = 64;
  m.links = 2;
  m.sanitize = false;
  m.norm.centroid = {1, 2, 3};
  m.norm.scale = 4.5;
  m.dataset_hash = "abc123";
  m.seed = 99;

  const ModelManifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.model_type == m.model_type);
  CHECK(back.n_points == m.n_points);
  CHECK(back.latent_dim == m.latent_dim);
  CHECK(back.subcarriers == m.subcarriers);
  CHECK(back.links == m.links);
  CHECK(back.sanitize == m.sanitize);
  CHECK(back.norm.centroid == m.norm.centroid);
  CHECK(back.norm.scale == m.norm.scale);
  CHECK(back.dataset_hash == m.dataset_hash);
  CHECK(back.seed == m.seed);
}
