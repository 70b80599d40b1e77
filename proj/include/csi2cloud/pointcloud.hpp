// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "csi2cloud/common.hpp"
#include "csi2cloud/rng.hpp"

namespace c2c {

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator*(const Vec3& a, double k) { return {a[0] * k, a[1] * k, a[2] * k}; }
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double dist(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Ordered list of 3D points in scene units.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Vec3& operator[](std::size_t i) { return points[i]; }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
};

enum class CloudFormat { kXyz, kPlyAscii };

namespace detail {

inline double parse_coord(const std::string& token, std::size_t line_no) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &pos);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad coordinate '" + token + "'");
  }
  if (pos != token.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad coordinate '" + token + "'");
  }
  if (!std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line_no) + ": non-finite coordinate");
  }
  return v;
}

inline Vec3 parse_point_line(const std::string& line, std::size_t line_no) {
  std::istringstream ss(line);
  std::string tx, ty, tz, extra;
  if (!(ss >> tx >> ty >> tz)) {
    throw ParseError("line " + std::to_string(line_no) + ": expected 3 coordinates");
  }
  if (ss >> extra) {
    throw ParseError("line " + std::to_string(line_no) + ": trailing fields after x y z");
  }
  return {parse_coord(tx, line_no), parse_coord(ty, line_no), parse_coord(tz, line_no)};
}

}  // namespace detail

inline PointCloud parse_points(const std::string& text, CloudFormat format) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  PointCloud cloud;

  if (format == CloudFormat::kPlyAscii) {
    std::size_t declared = 0;
    bool have_count = false, in_body = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (!in_body) {
        if (line_no == 1 && line != "ply") throw ParseError("line 1: not a PLY file");
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "element") {
          std::string what;
          ss >> what >> declared;
          if (what != "vertex") throw ParseError("line " + std::to_string(line_no) +
                                                 ": only vertex elements supported");
          have_count = true;
        } else if (kw == "end_header") {
          if (!have_count) throw ParseError("ply: missing 'element vertex' before end_header");
          in_body = true;
        }
        continue;
      }
      if (line.empty()) continue;
      cloud.points.push_back(detail::parse_point_line(line, line_no));
    }
    if (!in_body) throw ParseError("ply: missing end_header");
    if (cloud.size() != declared) {
      throw ParseError("ply: header declares " + std::to_string(declared) + " vertices, body has " +
                       std::to_string(cloud.size()));
    }
  } else {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      cloud.points.push_back(detail::parse_point_line(line, line_no));
    }
  }

  if (cloud.empty()) throw ParseError("point cloud is empty (N >= 1 required)");
  return cloud;
}

inline PointCloud load_points(const std::filesystem::path& path, CloudFormat format) {
  return parse_points(read_file(path), format);
}

/// Guesses the format from the extension (.ply -> PLY, anything else xyz).
inline PointCloud load_points(const std::filesystem::path& path) {
  return load_points(path, path.extension() == ".ply" ? CloudFormat::kPlyAscii
                                                      : CloudFormat::kXyz);
}

inline std::string format_points(const PointCloud& cloud, CloudFormat format) {
  std::ostringstream out;
  if (format == CloudFormat::kPlyAscii) {
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  }
  for (const Vec3& p : cloud.points) {
    out << fmt_full(p[0]) << ' ' << fmt_full(p[1]) << ' ' << fmt_full(p[2]) << '\n';
  }
  return out.str();
}

inline void save_points(const PointCloud& cloud, const std::filesystem::path& path,
                        CloudFormat format) {
  require(!cloud.empty(), "save_points: empty cloud");
  atomic_write_file(path, format_points(cloud, format));
}

inline void save_points(const PointCloud& cloud, const std::filesystem::path& path) {
  save_points(cloud, path,
              path.extension() == ".ply" ? CloudFormat::kPlyAscii : CloudFormat::kXyz);
}

// ---------------------------------------------------------------------------
// Normalization and resampling.
// ---------------------------------------------------------------------------

/// Centroid + radius of a cloud; degenerate (zero-spread) clouds get
/// scale 1 so the transform stays invertible.
struct NormTransform {
  Vec3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - centroid) * (1.0 / scale); }
  Vec3 invert(const Vec3& p) const { return p * scale + centroid; }

  PointCloud apply(const PointCloud& c) const {
    PointCloud out;
    out.points.reserve(c.size());
    for (const Vec3& p : c.points) out.points.push_back(apply(p));
    return out;
  }
  PointCloud invert(const PointCloud& c) const {
    PointCloud out;
    out.points.reserve(c.size());
    for (const Vec3& p : c.points) out.points.push_back(invert(p));
    return out;
  }
};

/// Shifts the centroid to the origin and scales the farthest point onto the
/// unit sphere. Returns the normalized cloud and the inverse-transform
/// parameters.
inline std::pair<PointCloud, NormTransform> normalize_unit_sphere(const PointCloud& cloud) {
  require(!cloud.empty(), "normalize_unit_sphere: empty cloud");
  NormTransform t;
  Vec3 c{0.0, 0.0, 0.0};
  for (const Vec3& p : cloud.points) c = c + p;
  t.centroid = c * (1.0 / static_cast<double>(cloud.size()));
  double r = 0.0;
  for (const Vec3& p : cloud.points) r = std::max(r, norm(p - t.centroid));
  t.scale = r > 1e-12 ? r : 1.0;
  return {t.apply(cloud), t};
}

/// Exactly n points: uniform subsample without replacement when shrinking,
/// pad by resampling existing points when growing. Every output point is a
/// member of the input. Deterministic under seed; N == n is the identity.
inline PointCloud resample_to_n(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  require(!cloud.empty(), "resample_to_n: empty cloud");
  require(n >= 1, "resample_to_n: n must be >= 1");
  const std::size_t m = cloud.size();
  if (m == n) return cloud;

  PointCloud out;
  out.points.reserve(n);
  Rng rng(seed);
  if (m > n) {
    // Partial Fisher-Yates over indices, then sort to keep input order.
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.uniform_int(m - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) out.points.push_back(cloud[i]);
  } else {
    out.points = cloud.points;
    for (std::size_t i = m; i < n; ++i) {
      out.points.push_back(cloud[rng.uniform_int(m)]);
    }
  }
  return out;
}

}  // namespace c2c
