// SPDX-License-Identifier: Apache-2.0
//
// Paired (scene point cloud, CSI) sample generator. A scene is a box room
// with scatterers on the walls and in furniture-like interior clusters; the
// channel is a geometric multipath sum (line of sight plus one bounce per
// scatterer) sampled on an OFDM subcarrier grid, with AWGN on top.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "csi2cloud/common.hpp"
#include "csi2cloud/csi.hpp"
#include "csi2cloud/pointcloud.hpp"
#include "csi2cloud/rng.hpp"

namespace c2c {

constexpr double kSpeedOfLight = 299792458.0;

struct Scatterer {
  Vec3 pos{0, 0, 0};
  double reflectivity = 1.0;  // in (0, 1]
};

struct SceneSpec {
  Vec3 room{0, 0, 0};  // axis-aligned box [0,Lx] x [0,Ly] x [0,Lz]
  std::vector<Scatterer> scatterers;
  Vec3 tx{0, 0, 0};
  std::vector<Vec3> rx;  // one receive antenna per link
  std::uint64_t seed = 0;

  void validate() const {
    require(!scatterers.empty(), "scene: at least one scatterer required");
    require(!rx.empty(), "scene: at least one link required");
    auto inside = [&](const Vec3& p) {
      return p[0] >= 0 && p[0] <= room[0] && p[1] >= 0 && p[1] <= room[1] && p[2] >= 0 &&
             p[2] <= room[2];
    };
    require(inside(tx), "scene: tx outside room");
    for (const Vec3& r : rx) require(inside(r), "scene: rx outside room");
    for (const Scatterer& s : scatterers) {
      require(inside(s.pos), "scene: scatterer outside room");
      require(s.reflectivity > 0.0 && s.reflectivity <= 1.0,
              "scene: reflectivity must lie in (0, 1]");
    }
  }
};

struct RadioSpec {
  double center_hz = 2.412e9;
  double spacing_hz = 312.5e3;
  std::size_t subcarriers = 64;
  double noise_std = 0.0;  // std of the complex noise per entry

  void validate() const {
    require(center_hz > 0 && spacing_hz > 0, "radio: frequencies must be positive");
    require(subcarriers >= 1, "radio: M >= 1");
    require(noise_std >= 0, "radio: sigma >= 0");
  }
};

struct SceneGenParams {
  double room_min = 4.0, room_max = 6.0;       // Lx, Ly range (meters)
  double height_min = 2.5, height_max = 3.5;   // Lz range
  std::size_t wall_scatterers = 48;
  std::size_t clusters_min = 2, clusters_max = 4;
  std::size_t cluster_points_min = 8, cluster_points_max = 16;
  double cluster_radius = 0.4;
  double refl_min = 0.3, refl_max = 1.0;
  std::size_t links = 2;       // K
  std::size_t cloud_points = 256;  // N
};

/// Fixed transform shared by every scene of a dataset: centered on the
/// largest possible room, scaled by its half-diagonal, so any scene maps
/// into the unit sphere and CSI-only reconstructions can be mapped back to
/// world coordinates.
inline NormTransform dataset_norm(const SceneGenParams& p) {
  NormTransform t;
  t.centroid = {p.room_max / 2.0, p.room_max / 2.0, p.height_max / 2.0};
  t.scale = 0.5 * std::sqrt(p.room_max * p.room_max + p.room_max * p.room_max +
                            p.height_max * p.height_max);
  return t;
}

// ---------------------------------------------------------------------------
// Scene generation.
// ---------------------------------------------------------------------------

inline std::pair<SceneSpec, PointCloud> generate_scene(const SceneGenParams& params,
                                                       std::uint64_t seed) {
  require(params.room_min > 0 && params.room_max >= params.room_min, "scene params: bad extents");
  require(params.wall_scatterers + params.clusters_min * params.cluster_points_min >= 1,
          "scene params: no scatterers configured");
  Rng rng(seed);
  SceneSpec scene;
  scene.seed = seed;
  scene.room = {rng.uniform(params.room_min, params.room_max),
                rng.uniform(params.room_min, params.room_max),
                rng.uniform(params.height_min, params.height_max)};

  const double margin = 0.3;
  const double antenna_height = 1.5;
  scene.tx = {margin, margin, antenna_height};
  // Receivers sit in the opposite corner, spread slightly per link.
  for (std::size_t k = 0; k < params.links; ++k) {
    const double off = 0.15 * static_cast<double>(k);
    scene.rx.push_back({scene.room[0] - margin, scene.room[1] - margin - off,
                        std::min(antenna_height + off, scene.room[2])});
  }

  auto clamp_inside = [&](Vec3 p) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 0.0, scene.room[a]);
    return p;
  };

  // Wall scatterers: the room envelope.
  for (std::size_t i = 0; i < params.wall_scatterers; ++i) {
    const std::size_t wall = rng.uniform_int(4);
    Vec3 p{0, 0, 0};
    const double u = rng.uniform(), v = rng.uniform();
    switch (wall) {
      case 0: p = {0.0, u * scene.room[1], v * scene.room[2]}; break;
      case 1: p = {scene.room[0], u * scene.room[1], v * scene.room[2]}; break;
      case 2: p = {u * scene.room[0], 0.0, v * scene.room[2]}; break;
      default: p = {u * scene.room[0], scene.room[1], v * scene.room[2]}; break;
    }
    scene.scatterers.push_back({p, rng.uniform(params.refl_min, params.refl_max)});
  }

  // Furniture-like interior clusters.
  const std::size_t n_clusters =
      params.clusters_min + rng.uniform_int(params.clusters_max - params.clusters_min + 1);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    const Vec3 center = {rng.uniform(margin, scene.room[0] - margin),
                         rng.uniform(margin, scene.room[1] - margin),
                         rng.uniform(0.2, scene.room[2] * 0.6)};
    const std::size_t n_pts = params.cluster_points_min +
                              rng.uniform_int(params.cluster_points_max -
                                              params.cluster_points_min + 1);
    const double refl = rng.uniform(params.refl_min, params.refl_max);
    for (std::size_t i = 0; i < n_pts; ++i) {
      Vec3 p = {center[0] + params.cluster_radius * rng.normal(),
                center[1] + params.cluster_radius * rng.normal(),
                center[2] + params.cluster_radius * rng.normal()};
      scene.scatterers.push_back({clamp_inside(p), refl});
    }
  }

  scene.validate();

  PointCloud cloud;
  cloud.points.reserve(scene.scatterers.size());
  for (const Scatterer& s : scene.scatterers) cloud.points.push_back(s.pos);
  cloud = resample_to_n(cloud, params.cloud_points, derive_seed(seed, 0xc1));
  return {std::move(scene), std::move(cloud)};
}

// ---------------------------------------------------------------------------
// Channel simulation.
// ---------------------------------------------------------------------------

struct PropagationPath {
  double length = 0.0;       // meters
  double reflectivity = 1.0; // 1 for line of sight
};

/// Sum of path contributions on one subcarrier:
/// H(f) = sum_p rho_p / d_p * exp(-j 2 pi f d_p / c).
/// Kahan-compensated in the given path order.
inline Complex sum_paths(const std::vector<PropagationPath>& paths, double freq_hz) {
  double re = 0.0, im = 0.0, c_re = 0.0, c_im = 0.0;
  for (const PropagationPath& p : paths) {
    const double amp = p.reflectivity / p.length;
    const double ph = -2.0 * std::numbers::pi * freq_hz * p.length / kSpeedOfLight;
    const double tr = amp * std::cos(ph);
    const double ti = amp * std::sin(ph);
    double y = tr - c_re;
    double t = re + y;
    c_re = (t - re) - y;
    re = t;
    y = ti - c_im;
    t = im + y;
    c_im = (t - im) - y;
    im = t;
  }
  return {re, im};
}

/// Per-link single-bounce path set in a canonical order (line of sight
/// first, then scatterers sorted by position and reflectivity) so the sum
/// is invariant to the order scatterers were listed in.
inline std::vector<PropagationPath> link_paths(const SceneSpec& scene, std::size_t link) {
  std::vector<PropagationPath> paths;
  paths.reserve(scene.scatterers.size() + 1);
  paths.push_back({dist(scene.tx, scene.rx[link]), 1.0});
  std::vector<Scatterer> sorted = scene.scatterers;
  std::sort(sorted.begin(), sorted.end(), [](const Scatterer& a, const Scatterer& b) {
    if (a.pos != b.pos) return a.pos < b.pos;
    return a.reflectivity < b.reflectivity;
  });
  for (const Scatterer& s : sorted) {
    paths.push_back({dist(scene.tx, s.pos) + dist(s.pos, scene.rx[link]), s.reflectivity});
  }
  return paths;
}

inline double subcarrier_freq(const RadioSpec& radio, std::size_t m) {
  const double offset =
      static_cast<double>(m) - 0.5 * static_cast<double>(radio.subcarriers - 1);
  return radio.center_hz + offset * radio.spacing_hz;
}

inline CsiFrame simulate_csi(const SceneSpec& scene, const RadioSpec& radio,
                             std::uint64_t noise_seed, double timestamp = 0.0) {
  scene.validate();
  radio.validate();
  CsiFrame frame;
  frame.subcarriers = radio.subcarriers;
  frame.links = scene.rx.size();
  frame.center_hz = radio.center_hz;
  frame.spacing_hz = radio.spacing_hz;
  frame.timestamp = timestamp;
  frame.h.resize(frame.subcarriers * frame.links);
  for (std::size_t k = 0; k < frame.links; ++k) {
    const std::vector<PropagationPath> paths = link_paths(scene, k);
    for (std::size_t m = 0; m < frame.subcarriers; ++m) {
      frame.at(m, k) = sum_paths(paths, subcarrier_freq(radio, m));
    }
  }
  if (radio.noise_std > 0.0) {
    Rng rng(noise_seed);
    const double comp_std = radio.noise_std / std::sqrt(2.0);
    for (Complex& v : frame.h) {
      v += Complex(comp_std * rng.normal(), comp_std * rng.normal());
    }
  }
  frame.validate();
  return frame;
}

// ---------------------------------------------------------------------------
// Dataset assembly.
// ---------------------------------------------------------------------------

struct PairedSample {
  std::string id;
  int split = 0;  // 0 train, 1 val, 2 test
  std::uint64_t seed = 0;
  Vec3 room{0, 0, 0};
  PointCloud cloud;             // world coordinates
  std::vector<CsiFrame> frames;
};

struct DatasetConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 25;
  std::size_t n_test = 50;
  SceneGenParams scene;
  RadioSpec radio;              // noise_std ignored; derived from snr_db
  std::size_t frames_per_scene = 10;
  double snr_db = 20.0;
  std::uint64_t seed = 1;
};

struct Dataset {
  DatasetConfig config;
  double noise_std = 0.0;
  NormTransform norm;
  std::vector<PairedSample> samples;
  std::uint64_t content_hash = 0;
};

/// 70/10/20 split with every part non-empty; errors when that is
/// infeasible.
inline std::array<std::size_t, 3> split_counts(std::size_t n_scenes) {
  require(n_scenes >= 3, "dataset: need at least 3 scenes to split");
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(0.1 * n_scenes));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(0.2 * n_scenes));
  if (n_val + n_test >= n_scenes) {
    throw ContractViolation("dataset: too few scenes for a 70/10/20 split");
  }
  return {n_scenes - n_val - n_test, n_val, n_test};
}

namespace detail {

inline std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", index);
  return buf;
}

}  // namespace detail

/// Generates all scenes and noisy CSI realizations in memory. Scene i uses
/// the derived seed derive_seed(master, 2i) for geometry and
/// derive_seed(master, 2i + 1) as the base of its per-frame noise seeds,
/// so datasets are reproducible per scene. The noise level is calibrated
/// once against the configured SNR: sigma = rms(|H0|) / 10^(snr/20) over
/// all noiseless frames.
inline Dataset make_dataset(const DatasetConfig& config) {
  const std::size_t n_scenes = config.n_train + config.n_val + config.n_test;
  require(n_scenes >= 3, "dataset: need at least 3 scenes");
  require(config.n_train >= 1 && config.n_val >= 1 && config.n_test >= 1,
          "dataset: every split needs at least one scene");
  require(config.frames_per_scene >= 1, "dataset: frames_per_scene >= 1");

  Dataset ds;
  ds.config = config;
  ds.norm = dataset_norm(config.scene);

  std::vector<SceneSpec> scenes;
  scenes.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    auto [scene, cloud] = generate_scene(config.scene, derive_seed(config.seed, 2 * i));
    PairedSample sample;
    sample.id = detail::scene_id(i);
    sample.split = i < config.n_train ? 0 : (i < config.n_train + config.n_val ? 1 : 2);
    sample.seed = scene.seed;
    sample.room = scene.room;
    sample.cloud = std::move(cloud);
    ds.samples.push_back(std::move(sample));
    scenes.push_back(std::move(scene));
  }

  // SNR calibration over noiseless responses.
  RadioSpec clean = config.radio;
  clean.noise_std = 0.0;
  double power = 0.0;
  std::size_t count = 0;
  std::vector<CsiFrame> clean_frames;
  clean_frames.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    CsiFrame f = simulate_csi(scenes[i], clean, 0);
    for (const Complex& v : f.h) power += std::norm(v);
    count += f.h.size();
    clean_frames.push_back(std::move(f));
  }
  const double rms = std::sqrt(power / static_cast<double>(count));
  ds.noise_std = rms / std::pow(10.0, config.snr_db / 20.0);

  RadioSpec noisy = config.radio;
  noisy.noise_std = ds.noise_std;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const std::uint64_t noise_base = derive_seed(config.seed, 2 * i + 1);
    for (std::size_t r = 0; r < config.frames_per_scene; ++r) {
      ds.samples[i].frames.push_back(simulate_csi(scenes[i], noisy, derive_seed(noise_base, r),
                                                  0.01 * static_cast<double>(r)));
    }
  }

  // Content hash over the exact serialized artifacts, in id order.
  std::uint64_t h = kFnvOffset;
  for (const PairedSample& s : ds.samples) {
    h = fnv1a64(s.id, h);
    h = fnv1a64(format_points(s.cloud, CloudFormat::kXyz), h);
    h = fnv1a64(format_csi_log(s.frames), h);
  }
  ds.content_hash = h;
  return ds;
}

inline nlohmann::json dataset_manifest_json(const Dataset& ds) {
  nlohmann::json scenes = nlohmann::json::array();
  const char* split_names[3] = {"train", "val", "test"};
  for (const PairedSample& s : ds.samples) {
    scenes.push_back({{"id", s.id},
                      {"split", split_names[s.split]},
                      {"seed", s.seed},
                      {"room", {s.room[0], s.room[1], s.room[2]}}});
  }
  const SceneGenParams& sp = ds.config.scene;
  return nlohmann::json{
      {"format", "csi2cloud-dataset"},
      {"version", 1},
      {"seed", ds.config.seed},
      {"counts",
       {{"train", ds.config.n_train}, {"val", ds.config.n_val}, {"test", ds.config.n_test}}},
      {"frames_per_scene", ds.config.frames_per_scene},
      {"snr_db", ds.config.snr_db},
      {"noise_std", ds.noise_std},
      {"radio",
       {{"center_hz", ds.config.radio.center_hz},
        {"spacing_hz", ds.config.radio.spacing_hz},
        {"subcarriers", ds.config.radio.subcarriers},
        {"links", sp.links}}},
      {"scene_params",
       {{"room_min", sp.room_min},
        {"room_max", sp.room_max},
        {"height_min", sp.height_min},
        {"height_max", sp.height_max},
        {"wall_scatterers", sp.wall_scatterers},
        {"clusters_min", sp.clusters_min},
        {"clusters_max", sp.clusters_max},
        {"cluster_points_min", sp.cluster_points_min},
        {"cluster_points_max", sp.cluster_points_max},
        {"cluster_radius", sp.cluster_radius},
        {"refl_min", sp.refl_min},
        {"refl_max", sp.refl_max},
        {"cloud_points", sp.cloud_points}}},
      {"norm",
       {{"centroid", {ds.norm.centroid[0], ds.norm.centroid[1], ds.norm.centroid[2]}},
        {"scale", ds.norm.scale}}},
      {"scenes", scenes},
      {"content_hash", hash_hex(ds.content_hash)}};
}

/// Writes scenes/<id>/cloud.xyz, scenes/<id>/csi.log and manifest.json.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "scenes");
  for (const PairedSample& s : ds.samples) {
    const fs::path dir = out_dir / "scenes" / s.id;
    fs::create_directories(dir);
    save_points(s.cloud, dir / "cloud.xyz", CloudFormat::kXyz);
    write_csi_log(s.frames, dir / "csi.log");
  }
  atomic_write_file(out_dir / "manifest.json", dataset_manifest_json(ds).dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  require(j.value("format", "") == "csi2cloud-dataset", "dataset: unrecognized manifest");
  Dataset ds;
  ds.config.seed = j.at("seed").get<std::uint64_t>();
  ds.config.n_train = j.at("counts").at("train").get<std::size_t>();
  ds.config.n_val = j.at("counts").at("val").get<std::size_t>();
  ds.config.n_test = j.at("counts").at("test").get<std::size_t>();
  ds.config.frames_per_scene = j.at("frames_per_scene").get<std::size_t>();
  ds.config.snr_db = j.at("snr_db").get<double>();
  ds.noise_std = j.at("noise_std").get<double>();
  const auto& radio = j.at("radio");
  ds.config.radio.center_hz = radio.at("center_hz").get<double>();
  ds.config.radio.spacing_hz = radio.at("spacing_hz").get<double>();
  ds.config.radio.subcarriers = radio.at("subcarriers").get<std::size_t>();
  ds.config.radio.noise_std = ds.noise_std;
  const auto& sp = j.at("scene_params");
  ds.config.scene.room_min = sp.at("room_min").get<double>();
  ds.config.scene.room_max = sp.at("room_max").get<double>();
  ds.config.scene.height_min = sp.at("height_min").get<double>();
  ds.config.scene.height_max = sp.at("height_max").get<double>();
  ds.config.scene.wall_scatterers = sp.at("wall_scatterers").get<std::size_t>();
  ds.config.scene.clusters_min = sp.at("clusters_min").get<std::size_t>();
  ds.config.scene.clusters_max = sp.at("clusters_max").get<std::size_t>();
  ds.config.scene.cluster_points_min = sp.at("cluster_points_min").get<std::size_t>();
  ds.config.scene.cluster_points_max = sp.at("cluster_points_max").get<std::size_t>();
  ds.config.scene.cluster_radius = sp.at("cluster_radius").get<double>();
  ds.config.scene.refl_min = sp.at("refl_min").get<double>();
  ds.config.scene.refl_max = sp.at("refl_max").get<double>();
  ds.config.scene.cloud_points = sp.at("cloud_points").get<std::size_t>();
  ds.config.scene.links = radio.at("links").get<std::size_t>();
  const auto& nj = j.at("norm");
  ds.norm.centroid = {nj.at("centroid")[0].get<double>(), nj.at("centroid")[1].get<double>(),
                      nj.at("centroid")[2].get<double>()};
  ds.norm.scale = nj.at("scale").get<double>();

  std::uint64_t h = kFnvOffset;
  for (const auto& sj : j.at("scenes")) {
    PairedSample s;
    s.id = sj.at("id").get<std::string>();
    const std::string split = sj.at("split").get<std::string>();
    s.split = split == "train" ? 0 : (split == "val" ? 1 : 2);
    s.seed = sj.at("seed").get<std::uint64_t>();
    s.room = {sj.at("room")[0].get<double>(), sj.at("room")[1].get<double>(),
              sj.at("room")[2].get<double>()};
    const fs::path scene_dir = dir / "scenes" / s.id;
    s.cloud = load_points(scene_dir / "cloud.xyz", CloudFormat::kXyz);
    s.frames = load_csi_log(scene_dir / "csi.log", ds.config.radio.center_hz,
                            ds.config.radio.spacing_hz);
    h = fnv1a64(s.id, h);
    h = fnv1a64(format_points(s.cloud, CloudFormat::kXyz), h);
    h = fnv1a64(format_csi_log(s.frames), h);
    ds.samples.push_back(std::move(s));
  }
  ds.content_hash = h;
  const std::string declared = j.value("content_hash", "");
  if (!declared.empty() && declared != hash_hex(ds.content_hash)) {
    throw IoError("dataset: content hash mismatch (files were modified)");
  }
  return ds;
}

}  // namespace c2c
