#pragma once

#include <torch/torch.h>

namespace handgcn {

struct LossWeights {
  double regression = 100.0;     // delta1
  double classification = 1.0;   // delta2
};

// Cross-entropy summed over the 21 joints, averaged over the batch.
// logits (B, C, 21), labels (B, 21) int64 in [0, C).
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Mean squared error over batch, joints and coordinates.
torch::Tensor regression_loss(const torch::Tensor& predicted, const torch::Tensor& target);

struct CoarseLossTerms {
  torch::Tensor regression_2d;
  torch::Tensor regression_3d;
  torch::Tensor classification_2d;  // zero scalar when classification is off
  torch::Tensor classification_3d;
};

// delta1 * (reg2d + reg3d) + delta2 * (cls2d + cls3d)
torch::Tensor coarse_loss(const CoarseLossTerms& terms, const LossWeights& weights = {});

torch::Tensor refinement_loss(const torch::Tensor& refined, const torch::Tensor& target);

}  // namespace handgcn
