#include "handgcn/graph.hpp"

#include <cmath>

#include "handgcn/errors.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn::graph {

torch::Tensor normalize_adjacency(const torch::Tensor& adjacency) {
  if (adjacency.dim() != 2 || adjacency.size(0) != adjacency.size(1)) {
    throw ShapeError("adjacency must be a square matrix");
  }
  if (!torch::equal(adjacency, adjacency.transpose(0, 1))) {
    throw ShapeError("adjacency must be symmetric");
  }
  const auto with_loops =
      adjacency + torch::eye(adjacency.size(0), adjacency.options());
  const auto inv_sqrt_degree = with_loops.sum(1).rsqrt();
  return inv_sqrt_degree.unsqueeze(1) * with_loops * inv_sqrt_degree.unsqueeze(0);
}

torch::Tensor degree_normalize(const torch::Tensor& relations) {
  const auto degree = relations.sum(-1);
  const auto inv_sqrt = torch::where(degree > 0, degree.clamp_min(1e-12).rsqrt(),
                                     torch::zeros_like(degree));
  return inv_sqrt.unsqueeze(-1) * relations * inv_sqrt.unsqueeze(-2);
}

torch::Tensor propagate(const torch::Tensor& features, const torch::Tensor& adjacency,
                        const torch::Tensor& weight, bool activate) {
  if (features.dim() != 3 || features.size(1) != adjacency.size(-1)) {
    throw ShapeError("features must be (B, nodes, F) matching the adjacency");
  }
  if (features.size(2) != weight.size(0)) {
    throw ShapeError("feature width " + std::to_string(features.size(2)) +
                     " does not match weight input width " + std::to_string(weight.size(0)));
  }
  auto out = torch::matmul(torch::matmul(adjacency, features), weight);
  return activate ? torch::relu(out) : out;
}

torch::Tensor xavier_weight(int64_t in_features, int64_t out_features) {
  auto w = torch::empty({in_features, out_features});
  torch::nn::init::xavier_uniform_(w, std::sqrt(2.0));
  return w;
}

torch::Tensor identity_adjacency(double noise) {
  return torch::eye(kNumJoints) + noise * torch::randn({kNumJoints, kNumJoints});
}

GraphConvImpl::GraphConvImpl(int64_t in_features, int64_t out_features)
    : weight_(register_parameter("weight", xavier_weight(in_features, out_features))) {}

torch::Tensor GraphConvImpl::forward(const torch::Tensor& features, const torch::Tensor& adjacency,
                                     bool activate) {
  return propagate(features, adjacency, weight_, activate);
}

DualBranchLayerImpl::DualBranchLayerImpl(int64_t in_features, int64_t out_features)
    : weight_global_(register_parameter("weight_global", xavier_weight(in_features, out_features))),
      weight_relation_(
          register_parameter("weight_relation", xavier_weight(in_features, out_features))) {}

torch::Tensor DualBranchLayerImpl::forward(const torch::Tensor& features,
                                           const torch::Tensor& global_adjacency,
                                           const torch::Tensor& relations, bool activate) {
  if (relations.dim() == 3 && relations.size(0) != features.size(0)) {
    throw ShapeError("relation matrices are not batched to the sample count");
  }
  auto global_branch = propagate(features, global_adjacency, weight_global_, false);
  auto relation_branch = propagate(features, relations, weight_relation_, false);
  auto out = torch::cat({global_branch, relation_branch}, -1);
  return activate ? torch::relu(out) : out;
}

}  // namespace handgcn::graph
