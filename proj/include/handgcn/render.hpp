#pragma once

// Static figures: relation heatmaps, skeleton overlays and 3D views.
// All images are RGB CV_8UC3; write_png converts for the encoder.

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "handgcn/evalkit.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn::render {

// 21x21 matrix with values in [0, 1]; one square cell per entry.
cv::Mat relation_heatmap(const torch::Tensor& matrix, int cell = 16);

// Draws a skeleton over a copy of `image` in the given colour.
cv::Mat draw_skeleton_2d(const cv::Mat& image, const HandPose2D& pose, const cv::Scalar& color);

// Orthographic view of a root-relative pose from a fixed oblique angle.
cv::Mat plot_skeleton_3d(const HandPose3D& pose, int size = 256);

cv::Mat plot_pck(const eval::PckCurve& curve, int width = 400, int height = 300);

void write_png(const std::filesystem::path& file, const cv::Mat& rgb);

}  // namespace handgcn::render
