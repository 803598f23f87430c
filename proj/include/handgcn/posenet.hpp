#pragma once

// Two-stage hand pose network.
//
// Coarse stage: backbone features feed a 2D and a 3D joint classifier; their
// argmax classes give per-pose relation matrices that steer the 2D and 3D
// dual-branch regressors. Refinement stage: a residual graph head corrects
// the coarse 3D pose using adjacency built from the coarse pose itself.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "handgcn/backbone.hpp"
#include "handgcn/graph.hpp"
#include "handgcn/quantizer.hpp"
#include "handgcn/relations.hpp"

namespace handgcn {

enum class RefinementMode { None, FullyConnected, Knn, Ann };

std::string to_string(RefinementMode mode);
RefinementMode refinement_mode_from_string(const std::string& name);

// Ablation variants: A = no classification, B = no refinement,
// C = dense refinement, D = KNN refinement, Full = ANN refinement.
struct ModelVariant {
  bool use_classification = true;
  RefinementMode refinement = RefinementMode::Ann;

  static ModelVariant from_name(const std::string& name);  // "A".."D", "Full"
  std::string name() const;
  friend bool operator==(const ModelVariant&, const ModelVariant&) = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  QuantizerConfig quantizer;
  ModelVariant variant;
  int classifier_hidden = 64;
  int regressor_hidden = 64;
  int regressor_layers = 3;
  int refine_hidden = 64;
  int refine_layers = 3;
  int fc_refine_hidden = 256;
  int knn_k = 5;
  double theta_init = relations::kAnnThetaInit;
  double ann_temperature = relations::kAnnTemperature;
  double adjacency_noise = 0.01;
  // Degree-normalize relation masks before aggregation.
  bool normalize_relations = true;

  int feature_length() const { return backbone.feature_length(); }
  int regressor_2d_input_width() const;
  int regressor_3d_input_width() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct ForwardOutputs {
  torch::Tensor features;         // (B, 21, F)
  torch::Tensor logits_2d;        // (B, N, 21), undefined without classification
  torch::Tensor logits_3d;        // (B, K, 21)
  torch::Tensor relations_2d;     // (B, 21, 21) binary
  torch::Tensor relations_3d;     // (B, 21, 21) binary
  torch::Tensor pose_2d;          // (B, 21, 2) crop-relative
  torch::Tensor pose_3d_coarse;   // (B, 21, 3) root-relative normalized
  torch::Tensor pose_3d_refined;  // (B, 21, 3), undefined when refinement is off
  torch::Tensor relations_refine; // (B, 21, 21) ANN or KNN adjacency
};

// Two single-branch graph layers with a learned adjacency; emits raw logits.
class JointClassifierImpl : public torch::nn::Module {
 public:
  JointClassifierImpl(int in_features, int hidden, int num_classes, double adjacency_noise);
  torch::Tensor forward(const torch::Tensor& features);  // -> (B, C, 21)
  int num_classes() const { return num_classes_; }

 private:
  torch::Tensor adjacency_;
  graph::GraphConv layer1_{nullptr}, layer2_{nullptr};
  int num_classes_;
};
TORCH_MODULE(JointClassifier);

// Stack of dual-branch layers (or Â-only layers when relations are off).
// The final layer is linear; its two branches are summed into coordinates.
class PoseRegressorImpl : public torch::nn::Module {
 public:
  PoseRegressorImpl(int in_features, int hidden, int layers, int out_dims, bool use_relations,
                    double adjacency_noise);

  // `relations` may be undefined when use_relations is false.
  torch::Tensor forward(const torch::Tensor& input, const torch::Tensor& relations);

  bool use_relations() const { return use_relations_; }
  // Zeroes the final layer so the stack starts out emitting zeros.
  void zero_output_layer();

 private:
  torch::Tensor adjacency_;
  std::vector<graph::DualBranchLayer> dual_;
  std::vector<graph::GraphConv> single_;
  bool use_relations_;
};
TORCH_MODULE(PoseRegressor);

// Baseline C: flatten 21x3 -> dense -> ReLU -> dense -> 21x3 (residual).
class DenseRefinerImpl : public torch::nn::Module {
 public:
  explicit DenseRefinerImpl(int hidden);
  torch::Tensor forward(const torch::Tensor& coarse);  // returns the correction

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(DenseRefiner);

class HandPoseNetImpl : public torch::nn::Module {
 public:
  explicit HandPoseNetImpl(const ModelConfig& config);

  // Coarse stage, plus refinement when configured.
  ForwardOutputs forward(const torch::Tensor& images, bool with_refinement = true);

  ForwardOutputs forward_coarse(const torch::Tensor& images);

  // Throws ConfigError when the variant has no refinement stage.
  torch::Tensor refine(const torch::Tensor& coarse, torch::Tensor* adjacency_out = nullptr,
                       relations::ThresholdMode mode = relations::ThresholdMode::Hard);

  const ModelConfig& config() const { return config_; }
  torch::Tensor& theta() { return theta_; }

  // Parameters trained in each stage. Refinement covers the head and theta.
  std::vector<torch::Tensor> coarse_parameters();
  std::vector<torch::Tensor> refinement_parameters();
  // Same split by registered name.
  static bool is_refinement_parameter(const std::string& name);

  Backbone backbone{nullptr};
  JointClassifier classifier_2d{nullptr}, classifier_3d{nullptr};
  PoseRegressor regressor_2d{nullptr}, regressor_3d{nullptr};
  PoseRegressor refine_gcn{nullptr};
  DenseRefiner refine_dense{nullptr};

 private:
  torch::Tensor relation_input(const torch::Tensor& relations) const;

  ModelConfig config_;
  torch::Tensor theta_;
};
TORCH_MODULE(HandPoseNet);

}  // namespace handgcn
