#pragma once

// Per-pose 21x21 binary adjacency matrices.
//
// Three constructions feed the relation branch of the graph layers:
//   * class relations: joints predicted in the same block are linked;
//   * ANN: joints whose mean squared coordinate difference is within a
//     learned threshold are linked;
//   * KNN: each joint is linked to its k closest joints (fixed k).
// All functions are batched: poses are (B, 21, D), matrices (B, 21, 21).

#include <torch/torch.h>

namespace handgcn::relations {

// softmax over the class axis, then argmax. logits (B, C, 21) -> (B, 21) int64.
torch::Tensor labels_from_logits(const torch::Tensor& logits);

// M[b][i][j] = 1 iff labels[b][i] == labels[b][j].
torch::Tensor from_labels(const torch::Tensor& labels);

// Class relations from classifier logits. The result carries no gradient.
torch::Tensor relations_function(const torch::Tensor& logits);

// D[b][i][j] = mean over coordinates of (pose[b][i] - pose[b][j])^2.
torch::Tensor pairwise_mse(const torch::Tensor& pose);

enum class ThresholdMode {
  Hard,            // exact {0,1} comparison, no gradient to theta
  StraightThrough  // hard values forward, sigmoid((theta - D)/tau) gradient backward
};

inline constexpr double kAnnTemperature = 0.01;
inline constexpr double kAnnThetaInit = 0.05;

// M = [D <= theta]; theta is a scalar tensor (may require grad).
torch::Tensor ann_adjacency(const torch::Tensor& pose, const torch::Tensor& theta,
                            ThresholdMode mode = ThresholdMode::Hard,
                            double temperature = kAnnTemperature);

// Row i marks the k nearest joints to i (itself included, ties broken by
// joint index), then M <- max(M, M^T). Throws ConfigError unless 1 <= k <= 21.
torch::Tensor knn_adjacency(const torch::Tensor& pose, int k);

// Same neighbour rows before symmetrization; each row sums to k.
torch::Tensor knn_rows(const torch::Tensor& pose, int k);

}  // namespace handgcn::relations
