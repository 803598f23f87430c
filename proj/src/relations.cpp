#include "handgcn/relations.hpp"

#include <string>

#include "handgcn/errors.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn::relations {

namespace {

void check_logits(const torch::Tensor& logits) {
  if (logits.dim() != 3 || logits.size(2) != kNumJoints || logits.size(1) < 1) {
    throw ShapeError("class logits must be (B, C, 21) with C >= 1");
  }
}

void check_pose(const torch::Tensor& pose) {
  if (pose.dim() != 3 || pose.size(1) != kNumJoints) {
    throw ShapeError("pose batch must be (B, 21, D)");
  }
}

}  // namespace

torch::Tensor labels_from_logits(const torch::Tensor& logits) {
  check_logits(logits);
  torch::NoGradGuard no_grad;
  return torch::softmax(logits, 1).argmax(1);
}

torch::Tensor from_labels(const torch::Tensor& labels) {
  if (labels.dim() != 2 || labels.size(1) != kNumJoints) {
    throw ShapeError("labels must be (B, 21)");
  }
  return labels.unsqueeze(2).eq(labels.unsqueeze(1)).to(torch::kFloat32);
}

torch::Tensor relations_function(const torch::Tensor& logits) {
  torch::NoGradGuard no_grad;
  return from_labels(labels_from_logits(logits)).to(logits.scalar_type());
}

torch::Tensor pairwise_mse(const torch::Tensor& pose) {
  check_pose(pose);
  const auto diff = pose.unsqueeze(2) - pose.unsqueeze(1);  // (B, 21, 21, D)
  return diff.pow(2).mean(-1);
}

torch::Tensor ann_adjacency(const torch::Tensor& pose, const torch::Tensor& theta,
                            ThresholdMode mode, double temperature) {
  check_pose(pose);
  if (theta.numel() != 1) throw ShapeError("ANN threshold must be a scalar");
  const auto distances = pairwise_mse(pose);
  const auto hard = distances.le(theta.detach()).to(pose.scalar_type());
  if (mode == ThresholdMode::Hard) return hard;
  if (!(temperature > 0.0)) throw ConfigError("ANN relaxation temperature must be positive");
  const auto soft = torch::sigmoid((theta - distances) / temperature);
  return hard + (soft - soft.detach());
}

torch::Tensor knn_rows(const torch::Tensor& pose, int k) {
  check_pose(pose);
  if (k < 1 || k > kNumJoints) {
    throw ConfigError("KNN k must lie in [1, 21], got " + std::to_string(k));
  }
  torch::NoGradGuard no_grad;
  auto distances = pairwise_mse(pose);
  // Self always ranks first, even against coincident joints.
  distances.diagonal(0, 1, 2).fill_(-1.0);
  // Stable sort keeps equal distances in joint-index order.
  const auto order = std::get<1>(distances.sort(/*stable=*/true, /*dim=*/-1, /*descending=*/false));
  const auto nearest = order.narrow(-1, 0, k);
  return torch::zeros_like(distances).scatter_(-1, nearest, 1.0);
}

torch::Tensor knn_adjacency(const torch::Tensor& pose, int k) {
  const auto rows = knn_rows(pose, k);
  return torch::maximum(rows, rows.transpose(1, 2));
}

}  // namespace handgcn::relations
