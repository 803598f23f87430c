#include "handgcn/backbone.hpp"

#include <string>

#include "handgcn/errors.hpp"

namespace handgcn {

namespace nn = torch::nn;

void BackboneConfig::validate() const {
  if (input_size <= 0 || input_size % 32 != 0) {
    throw ConfigError("backbone input size must be a positive multiple of 32, got " +
                      std::to_string(input_size));
  }
  for (int w : widths) {
    if (w <= 0) throw ConfigError("backbone widths must be positive");
  }
  if (out_channels <= 0) throw ConfigError("backbone output channels must be positive");
}

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding, bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

BatchNorm batch_norm(int channels, double momentum) { return BatchNorm(channels, momentum); }

}  // namespace

BatchNormImpl::BatchNormImpl(int channels, double momentum, double eps)
    : momentum_(momentum), eps_(eps) {
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
  running_mean_ = register_buffer("running_mean", torch::zeros({channels}));
  running_var_ = register_buffer("running_var", torch::ones({channels}));
  num_batches_tracked_ = register_buffer("num_batches_tracked", torch::zeros({}, torch::kLong));
}

torch::Tensor BatchNormImpl::forward(const torch::Tensor& x) {
  if (!is_training()) {
    return torch::batch_norm(x, weight_, bias_, running_mean_, running_var_, false, 0.0, eps_, false);
  }
  {
    torch::NoGradGuard no_grad;
    const auto [var, mean] = torch::var_mean(x, {0, 2, 3}, /*unbiased=*/false);
    running_mean_.mul_(1.0 - momentum_).add_(mean, momentum_);
    running_var_.mul_(1.0 - momentum_).add_(var, momentum_);
    num_batches_tracked_.add_(1);
  }
  // Undefined running buffers: normalize with batch statistics, update nothing.
  return torch::batch_norm(x, weight_, bias_, {}, {}, true, 0.0, eps_, false);
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int out_channels, int stride,
                                     double bn_momentum) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3, stride, 1, false));
  bn1_ = register_module("bn1", batch_norm(out_channels, bn_momentum));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1, false));
  bn2_ = register_module("bn2", batch_norm(out_channels, bn_momentum));
  if (stride != 1 || in_channels != out_channels) {
    proj_conv_ = register_module("proj_conv", conv(in_channels, out_channels, 1, stride, 0, false));
    proj_bn_ = register_module("proj_bn", batch_norm(out_channels, bn_momentum));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  y = bn2_(conv2_(y));
  auto skip = proj_conv_ ? proj_bn_(proj_conv_(x)) : x;
  return torch::relu(y + skip);
}

BackboneImpl::BackboneImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  stem_conv_ = register_module("stem_conv", conv(3, w[0], 7, 2, 3, false));
  stem_bn_ = register_module("stem_bn", batch_norm(w[0], config_.bn_momentum));
  pool_ = register_module("pool", nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
  stages_ = register_module(
      "stages", nn::Sequential(ResidualBlock(w[0], w[1], 1, config_.bn_momentum),
                               ResidualBlock(w[1], w[2], 2, config_.bn_momentum),
                               ResidualBlock(w[2], w[3], 2, config_.bn_momentum),
                               ResidualBlock(w[3], w[4], 2, config_.bn_momentum)));
  head_ = register_module("head", conv(w[4], config_.out_channels, 3, 1, 1, true));
  reset_weights();
}

void BackboneImpl::reset_weights() {
  torch::NoGradGuard no_grad;
  for (auto& module : modules(/*include_self=*/false)) {
    if (auto* c = module->as<nn::Conv2d>()) {
      nn::init::normal_(c->weight, 0.0, 0.02);
      if (c->bias.defined()) nn::init::zeros_(c->bias);
    }
  }
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("backbone expects (B, 3, S, S) images");
  }
  if (images.size(2) != images.size(3)) throw ShapeError("backbone expects square images");
  if (images.size(2) != config_.input_size) {
    throw ShapeError("backbone configured for " + std::to_string(config_.input_size) +
                     " px input, got " + std::to_string(images.size(2)));
  }
  auto x = pool_(torch::relu(stem_bn_(stem_conv_(images))));
  x = stages_->forward(x);
  x = head_(x);
  return x.flatten(2);
}

int64_t parameter_count(torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

}  // namespace handgcn
