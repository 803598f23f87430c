#pragma once

// Modified ResNet-10 feature extractor.
//
//   conv 7x7/2 (3 -> w0) + BN + ReLU + maxpool 3x3/2
//   res-block w0 -> w1, stride 1
//   res-block w1 -> w2, stride 2 (+ 1x1/2 conv + BN projection)
//   res-block w2 -> w3, stride 2 (+ projection)
//   res-block w3 -> w4, stride 2 (+ projection)
//   conv 3x3/1 (w4 -> 21)
//
// The (B, 21, S/32, S/32) map is flattened into one feature vector per joint.

#include <array>
#include <cstdint>

#include <torch/torch.h>

namespace handgcn {

struct BackboneConfig {
  int input_size = 256;
  std::array<int, 5> widths{32, 32, 64, 128, 256};
  int out_channels = 21;
  double bn_momentum = 0.1;

  int feature_side() const { return input_size / 32; }
  int feature_length() const { return feature_side() * feature_side(); }
  void validate() const;
};

// 2D batch normalization whose running variance tracks the same biased batch
// variance used to normalize in training. torch's BatchNorm2d stores the
// Bessel-corrected estimate instead, which on the 2x2..8x8 maps of the late
// stages makes inference noticeably differ from training.
// Parameter and buffer names match BatchNorm.
class BatchNormImpl : public torch::nn::Module {
 public:
  BatchNormImpl(int channels, double momentum, double eps = 1e-5);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  double momentum_;
  double eps_;
  torch::Tensor weight_, bias_, running_mean_, running_var_, num_batches_tracked_;
};
TORCH_MODULE(BatchNorm);

// Basic block: conv3x3(stride)+BN+ReLU, conv3x3+BN, add skip, ReLU.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in_channels, int out_channels, int stride, double bn_momentum);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  BatchNorm bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Conv2d proj_conv_{nullptr};
  BatchNorm proj_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& config);

  // (B, 3, S, S) in [0, 1] -> (B, 21, (S/32)^2). Throws ShapeError for the
  // wrong channel count or a non-square / mis-sized input.
  torch::Tensor forward(const torch::Tensor& images);

  // Resets conv weights to N(0, 0.02); the final conv bias to zero.
  void reset_weights();

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  torch::nn::Conv2d stem_conv_{nullptr};
  BatchNorm stem_bn_{nullptr};
  torch::nn::MaxPool2d pool_{nullptr};
  torch::nn::Sequential stages_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Backbone);

int64_t parameter_count(torch::nn::Module& module);

}  // namespace handgcn
