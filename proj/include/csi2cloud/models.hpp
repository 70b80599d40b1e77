// SPDX-License-Identifier: Apache-2.0
//
// The three networks: PointNet autoencoder (shared per-point conv blocks,
// global max pool, fully connected decoder), the CSI encoder mapping
// amplitude/phase features into the same latent space, and the direct
// regression / no-alignment variants assembled from the same parts.
#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csi2cloud/checkpoint.hpp"
#include "csi2cloud/csi.hpp"
#include "csi2cloud/losses.hpp"
#include "csi2cloud/ops.hpp"
#include "csi2cloud/optim.hpp"
#include "csi2cloud/pointcloud.hpp"
#include "csi2cloud/rng.hpp"
#include "csi2cloud/tensor.hpp"

namespace c2c {

struct ForwardCtx {
  bool training = false;
  bool update_stats = false;  // only honored in training mode

  static ForwardCtx train() { return {true, true}; }
  static ForwardCtx train_frozen_stats() { return {true, false}; }
  static ForwardCtx eval() { return {false, false}; }
};

namespace detail {

inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-limit, limit);
  return Tensor::from_values(std::move(shape), std::move(values));
}

}  // namespace detail

/// conv1d (k = 1) -> batch norm -> ReLU. The convolution carries no
/// trainable bias: batch norm subtracts the channel mean right after, so a
/// bias would be redundant (beta provides the shift).
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
            Rng& rng)
      : weight_(prefix + ".conv.weight",
                detail::he_uniform({out_channels, in_channels, 1}, in_channels, rng)),
        gamma_(prefix + ".bn.gamma", Tensor::filled({out_channels}, 1.0)),
        beta_(prefix + ".bn.beta", Tensor::zeros({out_channels})),
        zero_bias_(Tensor::zeros({out_channels})),
        prefix_(prefix) {
    bn_.reset(out_channels);
  }

  Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
    Tensor y = conv1d(x, weight_.value, zero_bias_);
    y = batch_norm(y, gamma_.value, beta_.value,
                   ctx.training ? BatchNormMode::kTrain : BatchNormMode::kEval, bn_,
                   ctx.training && ctx.update_stats);
    return relu(y);
  }

  void collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void collect_state(std::vector<CheckpointEntry>& out) const {
    for (const Parameter* p : {&weight_, &gamma_, &beta_}) {
      out.push_back({p->name, p->value.shape(),
                     {p->value.data().begin(), p->value.data().end()}});
    }
    out.push_back({prefix_ + ".bn.running_mean", {bn_.running_mean.size()}, bn_.running_mean});
    out.push_back({prefix_ + ".bn.running_var", {bn_.running_var.size()}, bn_.running_var});
  }

  BatchNormState& bn_state() { return bn_; }
  const std::string& prefix() const { return prefix_; }

 private:
  Parameter weight_, gamma_, beta_;
  Tensor zero_bias_;
  BatchNormState bn_;
  std::string prefix_;
};

/// Stack of conv blocks followed by a global max pool: produces the latent
/// vector from a channels x length input.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(const std::string& prefix, std::size_t in_channels,
              std::vector<std::size_t> hidden, std::size_t latent_dim, Rng& rng) {
    std::vector<std::size_t> plan;
    plan.push_back(in_channels);
    for (std::size_t h : hidden) plan.push_back(h);
    plan.push_back(latent_dim);
    for (std::size_t i = 0; i + 1 < plan.size(); ++i) {
      blocks_.emplace_back(prefix + ".block" + std::to_string(i), plan[i], plan[i + 1], rng);
    }
  }

  Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
    Tensor y = x;
    for (ConvBlock& b : blocks_) y = b.forward(y, ctx);
    return max_pool_global(y);
  }

  void collect_parameters(std::vector<Parameter*>& out) {
    for (ConvBlock& b : blocks_) b.collect_parameters(out);
  }
  void collect_state(std::vector<CheckpointEntry>& out) const {
    for (const ConvBlock& b : blocks_) b.collect_state(out);
  }
  std::vector<ConvBlock>& blocks() { return blocks_; }

 private:
  std::vector<ConvBlock> blocks_;
};

/// Fully connected decoder: latent -> hidden (ReLU) -> ... -> 3N, linear
/// last so coordinates can be negative. Output reshaped to N x 3.
class DecoderStack {
 public:
  DecoderStack() = default;
  DecoderStack(const std::string& prefix, std::size_t latent_dim,
               std::vector<std::size_t> hidden, std::size_t n_points, Rng& rng)
      : n_points_(n_points) {
    std::vector<std::size_t> plan;
    plan.push_back(latent_dim);
    for (std::size_t h : hidden) plan.push_back(h);
    plan.push_back(3 * n_points);
    for (std::size_t i = 0; i + 1 < plan.size(); ++i) {
      const std::string stem = prefix + ".fc" + std::to_string(i);
      weights_.emplace_back(stem + ".weight",
                            detail::he_uniform({plan[i + 1], plan[i]}, plan[i], rng));
      biases_.emplace_back(stem + ".bias", Tensor::zeros({plan[i + 1]}));
    }
  }

  Tensor forward(const Tensor& g, const ForwardCtx&) {
    Tensor y = g;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      y = fully_connected(y, weights_[i].value, biases_[i].value);
      if (i + 1 < weights_.size()) y = relu(y);
    }
    return reshape(y, {n_points_, 3});
  }

  std::size_t n_points() const { return n_points_; }

  void collect_parameters(std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out.push_back(&weights_[i]);
      out.push_back(&biases_[i]);
    }
  }
  void collect_state(std::vector<CheckpointEntry>& out) const {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      for (const Parameter* p : {&weights_[i], &biases_[i]}) {
        out.push_back({p->name, p->value.shape(),
                       {p->value.data().begin(), p->value.data().end()}});
      }
    }
  }

  /// Copies values (not handles) from a source decoder of identical plan.
  void copy_values_from(const DecoderStack& src) {
    require(weights_.size() == src.weights_.size() && n_points_ == src.n_points_,
            "decoder copy: plan mismatch");
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      require(weights_[i].value.shape() == src.weights_[i].value.shape(),
              "decoder copy: shape mismatch");
      std::copy(src.weights_[i].value.data().begin(), src.weights_[i].value.data().end(),
                weights_[i].value.data().begin());
      std::copy(src.biases_[i].value.data().begin(), src.biases_[i].value.data().end(),
                biases_[i].value.data().begin());
    }
  }

 private:
  std::size_t n_points_ = 0;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

// ---------------------------------------------------------------------------
// PointNet autoencoder.
// ---------------------------------------------------------------------------

struct PointNetConfig {
  std::size_t n_points = 256;
  std::size_t latent_dim = 128;
  std::vector<std::size_t> encoder_channels{64, 128};
  std::vector<std::size_t> decoder_hidden{256, 512};
};

class PointNetAutoencoder {
 public:
  explicit PointNetAutoencoder(PointNetConfig config = {}, std::uint64_t seed = 0)
      : cfg_(std::move(config)) {
    Rng rng(derive_seed(seed, 0xae));
    encoder_ = ConvEncoder("encoder", 3, cfg_.encoder_channels, cfg_.latent_dim, rng);
    decoder_ = DecoderStack("decoder", cfg_.latent_dim, cfg_.decoder_hidden, cfg_.n_points, rng);
  }

  const PointNetConfig& config() const { return cfg_; }

  /// 3 x N input -> D latent.
  Tensor encode(const Tensor& x, const ForwardCtx& ctx) {
    require(x.rank() == 2 && x.extent(0) == 3, "pointnet encode: input must be 3 x N");
    require(x.extent(1) == cfg_.n_points, "pointnet encode: point count mismatch");
    return encoder_.forward(x, ctx);
  }

  Tensor encode_cloud(const PointCloud& cloud, const ForwardCtx& ctx) {
    require(cloud.size() == cfg_.n_points, "pointnet encode: point count mismatch");
    return encode(cloud_to_channels(cloud), ctx);
  }

  /// D latent -> N x 3 cloud tensor.
  Tensor decode(const Tensor& g, const ForwardCtx& ctx) {
    require(g.rank() == 1 && g.extent(0) == cfg_.latent_dim,
            "pointnet decode: latent dimension mismatch");
    return decoder_.forward(g, ctx);
  }

  Tensor reconstruct(const Tensor& x, const ForwardCtx& ctx) {
    return decode(encode(x, ctx), ctx);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect_parameters(out);
    decoder_.collect_parameters(out);
    return out;
  }
  std::vector<Parameter*> encoder_parameters() {
    std::vector<Parameter*> out;
    encoder_.collect_parameters(out);
    return out;
  }
  std::vector<Parameter*> decoder_parameters() {
    std::vector<Parameter*> out;
    decoder_.collect_parameters(out);
    return out;
  }

  std::vector<CheckpointEntry> state_entries() const {
    std::vector<CheckpointEntry> out;
    encoder_.collect_state(out);
    decoder_.collect_state(out);
    return out;
  }

  ConvEncoder& encoder() { return encoder_; }
  DecoderStack& decoder() { return decoder_; }
  const DecoderStack& decoder() const { return decoder_; }

 private:
  PointNetConfig cfg_;
  ConvEncoder encoder_;
  DecoderStack decoder_;
};

// ---------------------------------------------------------------------------
// CSI encoder.
// ---------------------------------------------------------------------------

struct CsiEncoderConfig {
  std::size_t subcarriers = 64;  // M
  std::size_t links = 2;         // K
  std::size_t latent_dim = 128;
  std::vector<std::size_t> channels{64, 128};
  bool sanitize = true;
};

/// Lays out a feature matrix for the conv stack: M x 2K -> 2K x M
/// (channels = features, length = subcarrier axis).
inline Tensor features_to_tensor(const CsiFeatures& f) {
  const std::size_t m = f.subcarriers, c = 2 * f.links;
  std::vector<double> values(c * m);
  for (std::size_t col = 0; col < c; ++col) {
    for (std::size_t row = 0; row < m; ++row) values[col * m + row] = f.at(row, col);
  }
  return Tensor::from_values({c, m}, std::move(values));
}

class CsiEncoder {
 public:
  explicit CsiEncoder(CsiEncoderConfig config = {}, std::uint64_t seed = 0)
      : cfg_(std::move(config)) {
    Rng rng(derive_seed(seed, 0xc5));
    encoder_ =
        ConvEncoder("csi_encoder", 2 * cfg_.links, cfg_.channels, cfg_.latent_dim, rng);
  }

  const CsiEncoderConfig& config() const { return cfg_; }

  /// 2K x M feature tensor -> D latent.
  Tensor forward(const Tensor& features, const ForwardCtx& ctx) {
    require(features.rank() == 2 && features.extent(0) == 2 * cfg_.links &&
                features.extent(1) == cfg_.subcarriers,
            "csi encode: feature shape mismatch (expected 2K x M)");
    return encoder_.forward(features, ctx);
  }

  Tensor forward_features(const CsiFeatures& f, const ForwardCtx& ctx) {
    return forward(features_to_tensor(f), ctx);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect_parameters(out);
    return out;
  }
  std::vector<CheckpointEntry> state_entries() const {
    std::vector<CheckpointEntry> out;
    encoder_.collect_state(out);
    return out;
  }

  ConvEncoder& encoder() { return encoder_; }

 private:
  CsiEncoderConfig cfg_;
  ConvEncoder encoder_;
};

// ---------------------------------------------------------------------------
// CSI-to-cloud models: the direct regression baseline and the
// no-alignment ablation share this assembly (CSI conv backbone + decoder).
// ---------------------------------------------------------------------------

class CsiToCloudModel {
 public:
  CsiToCloudModel() = default;
  CsiToCloudModel(CsiEncoderConfig enc_config, std::vector<std::size_t> decoder_hidden,
                  std::size_t n_points, std::uint64_t seed)
      : encoder_(enc_config, derive_seed(seed, 1)) {
    Rng rng(derive_seed(seed, 2));
    decoder_ = DecoderStack("decoder", enc_config.latent_dim, std::move(decoder_hidden),
                            n_points, rng);
  }

  Tensor forward(const Tensor& features, const ForwardCtx& ctx) {
    return decoder_.forward(encoder_.forward(features, ctx), ctx);
  }

  CsiEncoder& encoder() { return encoder_; }
  DecoderStack& decoder() { return decoder_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = encoder_.parameters();
    decoder_.collect_parameters(out);
    return out;
  }
  std::vector<Parameter*> encoder_parameters() { return encoder_.parameters(); }
  std::vector<Parameter*> decoder_parameters() {
    std::vector<Parameter*> out;
    decoder_.collect_parameters(out);
    return out;
  }
  std::vector<CheckpointEntry> state_entries() const {
    std::vector<CheckpointEntry> out = encoder_.state_entries();
    decoder_.collect_state(out);
    return out;
  }

 private:
  CsiEncoder encoder_;
  DecoderStack decoder_;
};

inline std::size_t parameter_count(std::vector<Parameter*> params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoint load: values matched by name, shapes verified.
// ---------------------------------------------------------------------------

namespace detail {

inline void load_into(std::vector<Parameter*> params,
                      std::vector<std::pair<std::string, std::vector<double>*>> buffers,
                      const std::vector<CheckpointEntry>& entries) {
  std::size_t used = 0;
  for (Parameter* p : params) {
    bool found = false;
    for (const CheckpointEntry& e : entries) {
      if (e.name != p->name) continue;
      require(e.shape == p->value.shape(), "checkpoint load: shape mismatch for " + e.name);
      std::copy(e.values.begin(), e.values.end(), p->value.data().begin());
      found = true;
      ++used;
      break;
    }
    if (!found) throw ParseError("checkpoint load: missing entry " + p->name);
  }
  for (auto& [name, dst] : buffers) {
    bool found = false;
    for (const CheckpointEntry& e : entries) {
      if (e.name != name) continue;
      require(e.values.size() == dst->size(), "checkpoint load: size mismatch for " + name);
      *dst = e.values;
      found = true;
      ++used;
      break;
    }
    if (!found) throw ParseError("checkpoint load: missing entry " + name);
  }
  if (used != entries.size()) {
    throw ParseError("checkpoint load: file carries entries the model does not expect");
  }
}

inline std::vector<std::pair<std::string, std::vector<double>*>> bn_buffers(ConvEncoder& enc) {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (ConvBlock& b : enc.blocks()) {
    out.emplace_back(b.prefix() + ".bn.running_mean", &b.bn_state().running_mean);
    out.emplace_back(b.prefix() + ".bn.running_var", &b.bn_state().running_var);
  }
  return out;
}

}  // namespace detail

inline void load_model_state(PointNetAutoencoder& model,
                             const std::vector<CheckpointEntry>& entries) {
  detail::load_into(model.parameters(), detail::bn_buffers(model.encoder()), entries);
}

inline void load_model_state(CsiEncoder& model, const std::vector<CheckpointEntry>& entries) {
  detail::load_into(model.parameters(), detail::bn_buffers(model.encoder()), entries);
}

inline void load_model_state(CsiToCloudModel& model,
                             const std::vector<CheckpointEntry>& entries) {
  detail::load_into(model.parameters(), detail::bn_buffers(model.encoder().encoder()), entries);
}

// ---------------------------------------------------------------------------
// Model manifests: enough metadata for compatibility validation when models
// are recombined at reconstruction time.
// ---------------------------------------------------------------------------

struct ModelManifest {
  std::string model_type;  // "pointnet-autoencoder" | "csi-encoder" | "csi-to-cloud"
  std::size_t n_points = 0;
  std::size_t latent_dim = 0;
  std::size_t subcarriers = 0;  // zero when not applicable
  std::size_t links = 0;
  bool sanitize = true;
  NormTransform norm;
  std::string dataset_hash;
  std::uint64_t seed = 0;
};

inline nlohmann::json manifest_to_json(const ModelManifest& m) {
  return nlohmann::json{{"format", "csi2cloud-model"},
                        {"version", 1},
                        {"model", m.model_type},
                        {"n_points", m.n_points},
                        {"latent_dim", m.latent_dim},
                        {"subcarriers", m.subcarriers},
                        {"links", m.links},
                        {"sanitize", m.sanitize},
                        {"norm",
                         {{"centroid", {m.norm.centroid[0], m.norm.centroid[1], m.norm.centroid[2]}},
                          {"scale", m.norm.scale}}},
                        {"dataset_hash", m.dataset_hash},
                        {"seed", m.seed}};
}

inline ModelManifest manifest_from_json(const nlohmann::json& j) {
  require(j.value("format", "") == "csi2cloud-model", "manifest: unrecognized format");
  ModelManifest m;
  m.model_type = j.at("model").get<std::string>();
  m.n_points = j.at("n_points").get<std::size_t>();
  m.latent_dim = j.at("latent_dim").get<std::size_t>();
  m.subcarriers = j.at("subcarriers").get<std::size_t>();
  m.links = j.at("links").get<std::size_t>();
  m.sanitize = j.at("sanitize").get<bool>();
  const auto& n = j.at("norm");
  m.norm.centroid = {n.at("centroid")[0].get<double>(), n.at("centroid")[1].get<double>(),
                     n.at("centroid")[2].get<double>()};
  m.norm.scale = n.at("scale").get<double>();
  m.dataset_hash = j.value("dataset_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  return m;
}

inline void save_manifest(const ModelManifest& m, const std::filesystem::path& path) {
  atomic_write_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline ModelManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(nlohmann::json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------
// Full inference pipeline: frames -> features -> z -> decoded cloud ->
// de-normalized world coordinates.
// ---------------------------------------------------------------------------

inline PointCloud reconstruct_from_csi(CsiEncoder& csi_model, PointNetAutoencoder& ae,
                                       const std::vector<CsiFrame>& frames,
                                       const NormTransform& norm) {
  require(csi_model.config().latent_dim == ae.config().latent_dim,
          "reconstruct_from_csi: latent dimension mismatch");
  require(!frames.empty(), "reconstruct_from_csi: no frames");
  NoGradGuard no_grad;
  const CsiFrame agg = aggregate_frames(frames);
  const CsiFeatures feats = to_features(agg, csi_model.config().sanitize);
  const Tensor z = csi_model.forward_features(feats, ForwardCtx::eval());
  const Tensor decoded = ae.decode(z, ForwardCtx::eval());
  return norm.invert(tensor_to_cloud(decoded));
}

}  // namespace c2c
