// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "csi2cloud/common.hpp"
#include "csi2cloud/pointcloud.hpp"

namespace c2c {

// ---------------------------------------------------------------------------
// Nearest neighbors. The kd-tree must agree with the linear scan on every
// query, including the lowest-index tie rule, so both paths compute the
// squared distance with the same expression and the tree never prunes a
// subtree whose best possible distance equals the current one.
// ---------------------------------------------------------------------------

inline std::pair<std::size_t, double> nearest_point_linear(const Vec3& q, const PointCloud& ref) {
  std::size_t best = 0;
  double best_d2 = dist2(q, ref[0]);
  for (std::size_t j = 1; j < ref.size(); ++j) {
    const double d2 = dist2(q, ref[j]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = j;
    }
  }
  return {best, best_d2};
}

class KdTree3 {
 public:
  explicit KdTree3(PointCloud points) : pts_(std::move(points)) {
    require(!pts_.empty(), "kdtree: empty reference cloud");
    index_.resize(pts_.size());
    std::iota(index_.begin(), index_.end(), std::size_t{0});
    nodes_.reserve(2 * pts_.size());
    root_ = build(0, pts_.size());
  }

  /// Index of the closest point (squared Euclidean, ties to lowest index).
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    std::size_t best_idx = std::numeric_limits<std::size_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best_idx, best_d2);
    return {best_idx, best_d2};
  }

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    std::size_t begin = 0, end = 0;  // leaf payload range in index_
    int left = -1, right = -1;
  };

  static constexpr std::size_t kLeafSize = 8;

  int build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      // Lowest-index tie rule: scan leaf points in index order.
      std::sort(index_.begin() + begin, index_.begin() + end);
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size() - 1);
    }
    // Split the widest axis at the median.
    Vec3 lo = pts_[index_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], pts_[index_[i]][a]);
        hi[a] = std::max(hi[a], pts_[index_[i]][a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    }
    const std::size_t mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    node.axis = axis;
    node.split = pts_[index_[mid]][axis];
    nodes_.push_back(node);
    const int self = static_cast<int>(nodes_.size() - 1);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int node_id, const Vec3& q, std::size_t& best_idx, double& best_d2) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = index_[i];
        const double d2 = dist2(q, pts_[idx]);
        if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
          best_d2 = d2;
          best_idx = idx;
        }
      }
      return;
    }
    const double delta = q[node.axis] - node.split;
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best_idx, best_d2);
    // <= keeps equal-distance candidates reachable for the tie rule.
    if (delta * delta <= best_d2) search(far, q, best_idx, best_d2);
  }

  PointCloud pts_;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Brute-force reference path.
inline std::vector<std::size_t> nearest_neighbors_linear(const PointCloud& queries,
                                                         const PointCloud& ref) {
  require(!ref.empty(), "nearest_neighbors: empty reference cloud");
  std::vector<std::size_t> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out[i] = nearest_point_linear(queries[i], ref).first;
  }
  return out;
}

/// Accelerated path; switches to the kd-tree once the reference is big
/// enough for the tree to pay off. Results are pointwise identical to the
/// linear scan.
inline std::vector<std::size_t> nearest_neighbors(const PointCloud& queries,
                                                  const PointCloud& ref) {
  require(!ref.empty(), "nearest_neighbors: empty reference cloud");
  if (ref.size() < 24) return nearest_neighbors_linear(queries, ref);
  KdTree3 tree(ref);
  std::vector<std::size_t> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = tree.nearest(queries[i]).first;
  return out;
}

// ---------------------------------------------------------------------------
// Chamfer distance: symmetric sum of mean squared nearest-neighbor
// distances.
// ---------------------------------------------------------------------------

inline double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  require(!p.empty() && !q.empty(), "chamfer_distance: empty cloud");
  const std::vector<std::size_t> p_to_q = nearest_neighbors(p, q);
  const std::vector<std::size_t> q_to_p = nearest_neighbors(q, p);
  double sum_p = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum_p += dist2(p[i], q[p_to_q[i]]);
  double sum_q = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) sum_q += dist2(q[j], p[q_to_p[j]]);
  return sum_p / static_cast<double>(p.size()) + sum_q / static_cast<double>(q.size());
}

/// d CD / d p_i holding the nearest-neighbor assignments fixed (valid away
/// from assignment boundaries).
inline std::vector<Vec3> chamfer_gradient(const PointCloud& p, const PointCloud& q) {
  require(!p.empty() && !q.empty(), "chamfer_gradient: empty cloud");
  const std::vector<std::size_t> p_to_q = nearest_neighbors(p, q);
  const std::vector<std::size_t> q_to_p = nearest_neighbors(q, p);
  std::vector<Vec3> grad(p.size(), Vec3{0.0, 0.0, 0.0});
  const double wp = 2.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    grad[i] = grad[i] + (p[i] - q[p_to_q[i]]) * wp;
  }
  const double wq = 2.0 / static_cast<double>(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const std::size_t i = q_to_p[j];
    grad[i] = grad[i] + (p[i] - q[j]) * wq;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Earth Mover's Distance: exact optimal assignment (shortest augmenting
// path with potentials, O(n^3)), unsquared Euclidean ground distance,
// normalized by N.
// ---------------------------------------------------------------------------

/// Minimal-cost perfect matching on a dense square cost matrix.
/// Returns row -> column.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  require(cost.size() == n * n && n >= 1, "solve_assignment: bad cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    minv.assign(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

inline std::vector<std::size_t> emd_assignment(const PointCloud& p, const PointCloud& q) {
  require(p.size() == q.size(), "emd: clouds must have equal size (resample first)");
  require(!p.empty(), "emd: empty cloud");
  const std::size_t n = p.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = dist(p[i], q[j]);
  }
  return solve_assignment(cost, n);
}

inline double emd(const PointCloud& p, const PointCloud& q) {
  const std::vector<std::size_t> assign = emd_assignment(p, q);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += dist(p[i], q[assign[i]]);
  return total / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Set-level evaluation.
// ---------------------------------------------------------------------------

struct MetricReport {
  std::vector<std::string> ids;
  std::vector<double> cd;
  std::vector<double> emd;
  double mean_cd = 0.0, std_cd = 0.0;
  double mean_emd = 0.0, std_emd = 0.0;
};

inline std::pair<double, double> mean_and_population_std(const std::vector<double>& xs) {
  require(!xs.empty(), "mean_and_population_std: empty sample");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

/// Per-pair CD and EMD plus mean / population std. EMD needs equal sizes,
/// so the larger cloud of a pair is resampled down with a seed derived from
/// the pair index.
inline MetricReport evaluate_set(const std::vector<PointCloud>& recon,
                                 const std::vector<PointCloud>& gt,
                                 const std::vector<std::string>& ids = {}) {
  require(recon.size() == gt.size() && !recon.empty(),
          "evaluate_set: reconstruction/ground-truth lists must pair up");
  require(ids.empty() || ids.size() == recon.size(), "evaluate_set: id list size mismatch");
  MetricReport report;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    report.ids.push_back(ids.empty() ? "sample_" + std::to_string(i) : ids[i]);
    report.cd.push_back(chamfer_distance(recon[i], gt[i]));
    if (recon[i].size() == gt[i].size()) {
      report.emd.push_back(emd(recon[i], gt[i]));
    } else {
      const std::size_t n = std::min(recon[i].size(), gt[i].size());
      const PointCloud a = resample_to_n(recon[i], n, derive_seed(0x5ca1ab1e, i));
      const PointCloud b = resample_to_n(gt[i], n, derive_seed(0x5ca1ab1e, i) + 1);
      report.emd.push_back(emd(a, b));
    }
  }
  std::tie(report.mean_cd, report.std_cd) = mean_and_population_std(report.cd);
  std::tie(report.mean_emd, report.std_emd) = mean_and_population_std(report.emd);
  return report;
}

/// One row per sample plus mean and std summary rows.
inline std::string metric_report_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "id,cd,emd\n";
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    out << report.ids[i] << ',' << fmt_full(report.cd[i]) << ',' << fmt_full(report.emd[i])
        << '\n';
  }
  out << "mean," << fmt_full(report.mean_cd) << ',' << fmt_full(report.mean_emd) << '\n';
  out << "std," << fmt_full(report.std_cd) << ',' << fmt_full(report.std_emd) << '\n';
  return out.str();
}

}  // namespace c2c
