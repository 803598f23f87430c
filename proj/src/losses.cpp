#include "handgcn/losses.hpp"

#include "handgcn/errors.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn {

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 3 || logits.size(2) != kNumJoints) {
    throw ShapeError("classification logits must be (B, C, 21)");
  }
  if (labels.dim() != 2 || labels.size(0) != logits.size(0) || labels.size(1) != kNumJoints) {
    throw ShapeError("class labels must be (B, 21) matching the logits batch");
  }
  const auto num_classes = logits.size(1);
  if (labels.numel() > 0 &&
      (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= num_classes)) {
    throw OutOfRangeError("class label outside [0, " + std::to_string(num_classes) + ")");
  }
  namespace F = torch::nn::functional;
  const auto per_joint = F::cross_entropy(
      logits, labels.to(torch::kLong), F::CrossEntropyFuncOptions().reduction(torch::kNone));
  return per_joint.sum(1).mean();
}

torch::Tensor regression_loss(const torch::Tensor& predicted, const torch::Tensor& target) {
  if (predicted.sizes() != target.sizes()) {
    throw ShapeError("regression prediction and target shapes differ");
  }
  return (predicted - target).pow(2).mean();
}

torch::Tensor coarse_loss(const CoarseLossTerms& terms, const LossWeights& weights) {
  return weights.regression * (terms.regression_2d + terms.regression_3d) +
         weights.classification * (terms.classification_2d + terms.classification_3d);
}

torch::Tensor refinement_loss(const torch::Tensor& refined, const torch::Tensor& target) {
  return regression_loss(refined, target);
}

}  // namespace handgcn
