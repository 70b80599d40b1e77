// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "csi2cloud/metrics.hpp"
#include "csi2cloud/tensor.hpp"

namespace c2c {

inline PointCloud tensor_to_cloud(const Tensor& t) {
  require(t.rank() == 2 && t.extent(1) == 3, "tensor_to_cloud: expected N x 3");
  PointCloud cloud;
  cloud.points.resize(t.extent(0));
  const double* d = t.data().data();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    cloud[i] = {d[3 * i], d[3 * i + 1], d[3 * i + 2]};
  }
  return cloud;
}

inline Tensor cloud_to_tensor(const PointCloud& cloud, bool requires_grad = false) {
  std::vector<double> values;
  values.reserve(cloud.size() * 3);
  for (const Vec3& p : cloud.points) {
    values.push_back(p[0]);
    values.push_back(p[1]);
    values.push_back(p[2]);
  }
  return Tensor::from_values({cloud.size(), 3}, std::move(values), requires_grad);
}

/// Transposed layout for the PointNet input: N x 3 cloud -> 3 x N tensor.
inline Tensor cloud_to_channels(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  std::vector<double> values(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = cloud[i][0];
    values[n + i] = cloud[i][1];
    values[2 * n + i] = cloud[i][2];
  }
  return Tensor::from_values({3, n}, std::move(values));
}

/// Chamfer distance between a predicted N x 3 tensor and a fixed target
/// cloud, as a graph op. The backward pass holds the nearest-neighbor
/// assignments fixed, matching chamfer_gradient.
inline Tensor chamfer_loss(const Tensor& pred, const PointCloud& target) {
  require(pred.rank() == 2 && pred.extent(1) == 3, "chamfer_loss: prediction must be N x 3");
  require(!target.empty(), "chamfer_loss: empty target");
  const PointCloud pred_cloud = tensor_to_cloud(pred);
  const double value = chamfer_distance(pred_cloud, target);
  const std::vector<Vec3> grad = chamfer_gradient(pred_cloud, target);

  auto pred_node = pred.node();
  auto bw = [pred_node, grad](detail::Node& self) {
    if (!pred_node->needs_grad) return;
    const double go = self.gbuf[0];
    double* gx = pred_node->gbuf.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      gx[3 * i] += go * grad[i][0];
      gx[3 * i + 1] += go * grad[i][1];
      gx[3 * i + 2] += go * grad[i][2];
    }
  };
  return detail::make_op_node({}, {value}, {pred}, std::move(bw), "chamfer_loss");
}

}  // namespace c2c
