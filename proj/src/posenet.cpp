#include "handgcn/posenet.hpp"

#include "handgcn/errors.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn {

std::string to_string(RefinementMode mode) {
  switch (mode) {
    case RefinementMode::None: return "none";
    case RefinementMode::FullyConnected: return "fully_connected";
    case RefinementMode::Knn: return "knn";
    case RefinementMode::Ann: return "ann";
  }
  return "none";
}

RefinementMode refinement_mode_from_string(const std::string& name) {
  if (name == "none") return RefinementMode::None;
  if (name == "fully_connected" || name == "fc") return RefinementMode::FullyConnected;
  if (name == "knn") return RefinementMode::Knn;
  if (name == "ann") return RefinementMode::Ann;
  throw ConfigError("unknown refinement mode '" + name + "'");
}

ModelVariant ModelVariant::from_name(const std::string& name) {
  if (name == "A") return {false, RefinementMode::None};
  if (name == "B") return {true, RefinementMode::None};
  if (name == "C") return {true, RefinementMode::FullyConnected};
  if (name == "D") return {true, RefinementMode::Knn};
  if (name == "Full" || name == "full") return {true, RefinementMode::Ann};
  throw ConfigError("unknown model variant '" + name + "' (expected A, B, C, D or Full)");
}

std::string ModelVariant::name() const {
  if (!use_classification) return refinement == RefinementMode::None ? "A" : "A+" + to_string(refinement);
  switch (refinement) {
    case RefinementMode::None: return "B";
    case RefinementMode::FullyConnected: return "C";
    case RefinementMode::Knn: return "D";
    case RefinementMode::Ann: return "Full";
  }
  return "Full";
}

int ModelConfig::regressor_2d_input_width() const {
  return feature_length() + (variant.use_classification ? quantizer.classes_2d() : 0);
}

int ModelConfig::regressor_3d_input_width() const {
  return 2 + feature_length() +
         (variant.use_classification ? quantizer.classes_2d() + quantizer.classes_3d() : 0);
}

void ModelConfig::validate() const {
  backbone.validate();
  quantizer.validate();
  if (backbone.out_channels != kNumJoints) throw ConfigError("backbone must emit 21 channels");
  if (quantizer.image_size != backbone.input_size) {
    throw ConfigError("quantizer image size must equal the network input size");
  }
  if (classifier_hidden <= 0 || regressor_hidden <= 0 || refine_hidden <= 0 ||
      fc_refine_hidden <= 0) {
    throw ConfigError("layer widths must be positive");
  }
  if (regressor_layers < 1 || refine_layers < 1) throw ConfigError("need at least one layer");
  if (knn_k < 1 || knn_k > kNumJoints) throw ConfigError("knn_k must lie in [1, 21]");
  if (!(ann_temperature > 0.0)) throw ConfigError("ann_temperature must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"input_size", backbone.input_size},
      {"widths", backbone.widths},
      {"bn_momentum", backbone.bn_momentum},
      {"splits_2d", quantizer.splits_2d},
      {"splits_3d", quantizer.splits_3d},
      {"use_classification", variant.use_classification},
      {"refinement", to_string(variant.refinement)},
      {"classifier_hidden", classifier_hidden},
      {"regressor_hidden", regressor_hidden},
      {"regressor_layers", regressor_layers},
      {"refine_hidden", refine_hidden},
      {"refine_layers", refine_layers},
      {"fc_refine_hidden", fc_refine_hidden},
      {"knn_k", knn_k},
      {"theta_init", theta_init},
      {"ann_temperature", ann_temperature},
      {"adjacency_noise", adjacency_noise},
      {"normalize_relations", normalize_relations},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone.input_size = j.at("input_size").get<int>();
  c.backbone.widths = j.at("widths").get<std::array<int, 5>>();
  c.backbone.bn_momentum = j.at("bn_momentum").get<double>();
  c.quantizer.splits_2d = j.at("splits_2d").get<int>();
  c.quantizer.splits_3d = j.at("splits_3d").get<int>();
  c.quantizer.image_size = c.backbone.input_size;
  c.variant.use_classification = j.at("use_classification").get<bool>();
  c.variant.refinement = refinement_mode_from_string(j.at("refinement").get<std::string>());
  c.classifier_hidden = j.at("classifier_hidden").get<int>();
  c.regressor_hidden = j.at("regressor_hidden").get<int>();
  c.regressor_layers = j.at("regressor_layers").get<int>();
  c.refine_hidden = j.at("refine_hidden").get<int>();
  c.refine_layers = j.at("refine_layers").get<int>();
  c.fc_refine_hidden = j.at("fc_refine_hidden").get<int>();
  c.knn_k = j.at("knn_k").get<int>();
  c.theta_init = j.at("theta_init").get<double>();
  c.ann_temperature = j.at("ann_temperature").get<double>();
  c.adjacency_noise = j.at("adjacency_noise").get<double>();
  c.normalize_relations = j.at("normalize_relations").get<bool>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

JointClassifierImpl::JointClassifierImpl(int in_features, int hidden, int num_classes,
                                         double adjacency_noise)
    : num_classes_(num_classes) {
  adjacency_ = register_parameter("adjacency", graph::identity_adjacency(adjacency_noise));
  layer1_ = register_module("layer1", graph::GraphConv(in_features, hidden));
  layer2_ = register_module("layer2", graph::GraphConv(hidden, num_classes));
}

torch::Tensor JointClassifierImpl::forward(const torch::Tensor& features) {
  auto h = layer1_(features, adjacency_, true);
  h = layer2_(h, adjacency_, false);
  return h.transpose(1, 2);
}

PoseRegressorImpl::PoseRegressorImpl(int in_features, int hidden, int layers, int out_dims,
                                     bool use_relations, double adjacency_noise)
    : use_relations_(use_relations) {
  adjacency_ = register_parameter("adjacency", graph::identity_adjacency(adjacency_noise));
  int width = in_features;
  for (int k = 0; k < layers; ++k) {
    const bool last = k + 1 == layers;
    const int out = last ? out_dims : hidden;
    const std::string name = "layer" + std::to_string(k + 1);
    if (use_relations_) {
      dual_.push_back(register_module(name, graph::DualBranchLayer(width, out)));
      width = 2 * out;
    } else {
      single_.push_back(register_module(name, graph::GraphConv(width, out)));
      width = out;
    }
  }
}

torch::Tensor PoseRegressorImpl::forward(const torch::Tensor& input, const torch::Tensor& relations) {
  auto h = input;
  if (use_relations_) {
    if (!relations.defined()) throw ShapeError("regressor needs relation matrices");
    for (std::size_t k = 0; k < dual_.size(); ++k) {
      const bool last = k + 1 == dual_.size();
      h = dual_[k](h, adjacency_, relations, !last);
    }
    const auto half = h.size(-1) / 2;
    return h.narrow(-1, 0, half) + h.narrow(-1, half, half);
  }
  for (std::size_t k = 0; k < single_.size(); ++k) {
    const bool last = k + 1 == single_.size();
    h = single_[k](h, adjacency_, !last);
  }
  return h;
}

void PoseRegressorImpl::zero_output_layer() {
  torch::NoGradGuard no_grad;
  if (use_relations_) {
    dual_.back()->weight_global().zero_();
    dual_.back()->weight_relation().zero_();
  } else {
    single_.back()->weight().zero_();
  }
}

DenseRefinerImpl::DenseRefinerImpl(int hidden) {
  fc1_ = register_module("fc1", torch::nn::Linear(kNumJoints * 3, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, kNumJoints * 3));
  torch::NoGradGuard no_grad;
  torch::nn::init::xavier_uniform_(fc1_->weight, std::sqrt(2.0));
  torch::nn::init::zeros_(fc1_->bias);
  torch::nn::init::zeros_(fc2_->weight);
  torch::nn::init::zeros_(fc2_->bias);
}

torch::Tensor DenseRefinerImpl::forward(const torch::Tensor& coarse) {
  auto h = torch::relu(fc1_(coarse.flatten(1)));
  return fc2_(h).view({coarse.size(0), kNumJoints, 3});
}

// ---------------------------------------------------------------------------

HandPoseNetImpl::HandPoseNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int f = config_.feature_length();
  const int n = config_.quantizer.classes_2d();
  const int k = config_.quantizer.classes_3d();
  const double noise = config_.adjacency_noise;
  const bool cls = config_.variant.use_classification;

  backbone = register_module("backbone", Backbone(config_.backbone));
  if (cls) {
    classifier_2d = register_module("classifier_2d", JointClassifier(f, config_.classifier_hidden, n, noise));
    classifier_3d = register_module("classifier_3d", JointClassifier(f, config_.classifier_hidden, k, noise));
  }
  regressor_2d = register_module(
      "regressor_2d", PoseRegressor(config_.regressor_2d_input_width(), config_.regressor_hidden,
                                    config_.regressor_layers, 2, cls, noise));
  regressor_3d = register_module(
      "regressor_3d", PoseRegressor(config_.regressor_3d_input_width(), config_.regressor_hidden,
                                    config_.regressor_layers, 3, cls, noise));

  switch (config_.variant.refinement) {
    case RefinementMode::None: break;
    case RefinementMode::FullyConnected:
      refine_dense = register_module("refine_dense", DenseRefiner(config_.fc_refine_hidden));
      break;
    case RefinementMode::Knn:
    case RefinementMode::Ann:
      refine_gcn = register_module("refine_gcn", PoseRegressor(3, config_.refine_hidden,
                                                              config_.refine_layers, 3, true, noise));
      refine_gcn->zero_output_layer();
      break;
  }
  if (config_.variant.refinement == RefinementMode::Ann) {
    theta_ = register_parameter("theta", torch::full({}, config_.theta_init));
  }
}

torch::Tensor HandPoseNetImpl::relation_input(const torch::Tensor& relations) const {
  return config_.normalize_relations ? graph::degree_normalize(relations) : relations;
}

ForwardOutputs HandPoseNetImpl::forward_coarse(const torch::Tensor& images) {
  ForwardOutputs out;
  out.features = backbone(images);
  if (config_.variant.use_classification) {
    out.logits_2d = classifier_2d(out.features);
    out.logits_3d = classifier_3d(out.features);
    out.relations_2d = relations::relations_function(out.logits_2d);
    out.relations_3d = relations::relations_function(out.logits_3d);
    const auto probs_2d = torch::softmax(out.logits_2d, 1).transpose(1, 2);
    const auto probs_3d = torch::softmax(out.logits_3d, 1).transpose(1, 2);
    out.pose_2d = regressor_2d(torch::cat({out.features, probs_2d}, -1),
                               relation_input(out.relations_2d));
    out.pose_3d_coarse =
        regressor_3d(torch::cat({out.pose_2d, out.features, probs_2d, probs_3d}, -1),
                     relation_input(out.relations_3d));
  } else {
    out.pose_2d = regressor_2d(out.features, torch::Tensor());
    out.pose_3d_coarse = regressor_3d(torch::cat({out.pose_2d, out.features}, -1), torch::Tensor());
  }
  return out;
}

ForwardOutputs HandPoseNetImpl::forward(const torch::Tensor& images, bool with_refinement) {
  auto out = forward_coarse(images);
  if (with_refinement && config_.variant.refinement != RefinementMode::None) {
    out.pose_3d_refined = refine(out.pose_3d_coarse, &out.relations_refine,
                                 is_training() ? relations::ThresholdMode::StraightThrough
                                               : relations::ThresholdMode::Hard);
  }
  return out;
}

torch::Tensor HandPoseNetImpl::refine(const torch::Tensor& coarse, torch::Tensor* adjacency_out,
                                      relations::ThresholdMode mode) {
  switch (config_.variant.refinement) {
    case RefinementMode::None:
      throw ConfigError("model variant " + config_.variant.name() + " has no refinement stage");
    case RefinementMode::FullyConnected:
      return coarse + refine_dense(coarse);
    case RefinementMode::Knn: {
      auto adjacency = relations::knn_adjacency(coarse, config_.knn_k);
      if (adjacency_out) *adjacency_out = adjacency;
      return coarse + refine_gcn(coarse, relation_input(adjacency));
    }
    case RefinementMode::Ann: {
      auto adjacency =
          relations::ann_adjacency(coarse, theta_, mode, config_.ann_temperature);
      if (adjacency_out) *adjacency_out = adjacency.detach();
      return coarse + refine_gcn(coarse, relation_input(adjacency));
    }
  }
  return coarse;
}

bool HandPoseNetImpl::is_refinement_parameter(const std::string& name) {
  return name == "theta" || name.rfind("refine_gcn.", 0) == 0 ||
         name.rfind("refine_dense.", 0) == 0;
}

std::vector<torch::Tensor> HandPoseNetImpl::coarse_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    if (!is_refinement_parameter(item.key())) out.push_back(item.value());
  }
  return out;
}

std::vector<torch::Tensor> HandPoseNetImpl::refinement_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    if (is_refinement_parameter(item.key())) out.push_back(item.value());
  }
  return out;
}

}  // namespace handgcn
