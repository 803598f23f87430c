#pragma once

// Graph-convolution numerics over the 21-joint hand graph.
//
// Feature graphs are (B, 21, F). Adjacencies are either shared (21, 21) or
// per sample (B, 21, 21); torch::matmul broadcasts both the same way.

#include <torch/torch.h>

namespace handgcn::graph {

// D^-1/2 (A + I) D^-1/2 for a symmetric binary (n, n) adjacency, D being the
// degree matrix of A + I. Throws ShapeError for non-square or asymmetric input.
torch::Tensor normalize_adjacency(const torch::Tensor& adjacency);

// D^-1/2 M D^-1/2 for per-pose relation masks (B, 21, 21), degrees taken
// from M itself. Rows without any link stay zero.
torch::Tensor degree_normalize(const torch::Tensor& relations);

// ReLU(A H W), or A H W when `activate` is false.
torch::Tensor propagate(const torch::Tensor& features, const torch::Tensor& adjacency,
                        const torch::Tensor& weight, bool activate = true);

// Xavier-uniform with gain sqrt(2), the init used for every graph weight.
torch::Tensor xavier_weight(int64_t in_features, int64_t out_features);

// Learned global adjacency start point: identity plus N(0, noise^2).
torch::Tensor identity_adjacency(double noise);

// Single-branch layer: ReLU(Â H W). Â is owned by the enclosing module.
class GraphConvImpl : public torch::nn::Module {
 public:
  GraphConvImpl(int64_t in_features, int64_t out_features);

  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& adjacency,
                        bool activate = true);

  int64_t in_features() const { return weight_.size(0); }
  int64_t out_features() const { return weight_.size(1); }
  torch::Tensor& weight() { return weight_; }

 private:
  torch::Tensor weight_;
};
TORCH_MODULE(GraphConv);

// Dual-branch layer: ReLU([Â H W_A, R H W_R]); output width 2 * out_features.
class DualBranchLayerImpl : public torch::nn::Module {
 public:
  DualBranchLayerImpl(int64_t in_features, int64_t out_features);

  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& global_adjacency,
                        const torch::Tensor& relations, bool activate = true);

  int64_t in_features() const { return weight_global_.size(0); }
  int64_t out_features() const { return weight_global_.size(1); }
  torch::Tensor& weight_global() { return weight_global_; }
  torch::Tensor& weight_relation() { return weight_relation_; }

 private:
  torch::Tensor weight_global_;
  torch::Tensor weight_relation_;
};
TORCH_MODULE(DualBranchLayer);

}  // namespace handgcn::graph
