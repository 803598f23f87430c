#include "handgcn/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "handgcn/errors.hpp"

namespace handgcn::render {

namespace {

const cv::Scalar kFingerColors[5] = {{255, 70, 70}, {70, 200, 70}, {70, 120, 255},
                                     {230, 200, 40}, {200, 70, 230}};

cv::Scalar bone_color(int child) {
  const auto f = finger_of(child);
  return f ? kFingerColors[static_cast<int>(*f)] : cv::Scalar(200, 200, 200);
}

cv::Point to_point(double x, double y) {
  return {static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))};
}

}  // namespace

cv::Mat relation_heatmap(const torch::Tensor& matrix, int cell) {
  if (matrix.dim() != 2 || matrix.size(0) != kNumJoints || matrix.size(1) != kNumJoints) {
    throw ShapeError("relation heatmap expects a 21x21 matrix");
  }
  const auto m = matrix.detach().to(torch::kDouble).clamp(0.0, 1.0).contiguous();
  auto a = m.accessor<double, 2>();
  const int side = kNumJoints * cell;
  cv::Mat image(side, side, CV_8UC3, cv::Scalar(0, 0, 0));
  for (int i = 0; i < kNumJoints; ++i) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double v = a[i][j];
      // Dark blue to yellow.
      const cv::Scalar c(40 + 215 * v, 30 + 200 * v, 90 * (1.0 - v));
      cv::rectangle(image, {j * cell, i * cell}, {(j + 1) * cell - 1, (i + 1) * cell - 1}, c, cv::FILLED);
    }
  }
  for (int k = 0; k <= kNumJoints; k += 4) {
    const int p = std::min(k * cell, side - 1);
    cv::line(image, {0, p}, {side - 1, p}, cv::Scalar(90, 90, 90), 1);
    cv::line(image, {p, 0}, {p, side - 1}, cv::Scalar(90, 90, 90), 1);
  }
  return image;
}

cv::Mat draw_skeleton_2d(const cv::Mat& image, const HandPose2D& pose, const cv::Scalar& color) {
  cv::Mat out = image.clone();
  const int t = std::max(1, out.cols / 128);
  for (const auto& [a, b] : bones()) {
    cv::line(out, to_point(pose[a].x, pose[a].y), to_point(pose[b].x, pose[b].y), color, t, cv::LINE_AA);
  }
  for (const auto& p : pose) cv::circle(out, to_point(p.x, p.y), t + 1, color, cv::FILLED, cv::LINE_AA);
  return out;
}

cv::Mat plot_skeleton_3d(const HandPose3D& pose, int size) {
  // Elevation 20 degrees, azimuth -60 degrees; y points down in camera space.
  const double elev = 20.0 * std::numbers::pi / 180.0, azim = -60.0 * std::numbers::pi / 180.0;
  std::array<std::pair<double, double>, kNumJoints> uv;
  double extent = 1e-9;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& p = pose[i];
    const double x = p.x * std::cos(azim) - p.z * std::sin(azim);
    const double z = p.x * std::sin(azim) + p.z * std::cos(azim);
    const double y = p.y * std::cos(elev) - z * std::sin(elev);
    uv[i] = {x, y};
    extent = std::max({extent, std::abs(x), std::abs(y)});
  }
  cv::Mat image(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const double s = 0.45 * size / extent;
  auto px = [&](int j) { return to_point(size / 2.0 + s * uv[j].first, size / 2.0 + s * uv[j].second); };
  cv::line(image, {0, size / 2}, {size - 1, size / 2}, cv::Scalar(225, 225, 225), 1);
  cv::line(image, {size / 2, 0}, {size / 2, size - 1}, cv::Scalar(225, 225, 225), 1);
  const int t = std::max(1, size / 128);
  for (const auto& [a, b] : bones()) cv::line(image, px(a), px(b), bone_color(b), t + 1, cv::LINE_AA);
  for (int j = 0; j < kNumJoints; ++j) cv::circle(image, px(j), t + 1, cv::Scalar(40, 40, 40), cv::FILLED, cv::LINE_AA);
  return image;
}

cv::Mat plot_pck(const eval::PckCurve& curve, int width, int height) {
  if (curve.thresholds.size() < 2) throw ShapeError("PCK plot needs at least two thresholds");
  cv::Mat image(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 50, right = 15, top = 15, bottom = 40;
  const double t0 = curve.thresholds.front(), t1 = curve.thresholds.back();
  auto px = [&](double t, double v) {
    return to_point(left + (t - t0) / (t1 - t0) * (width - left - right),
                    top + (1.0 - v) * (height - top - bottom));
  };
  cv::rectangle(image, px(t0, 1.0), px(t1, 0.0), cv::Scalar(120, 120, 120), 1);
  for (double v : {0.25, 0.5, 0.75}) cv::line(image, px(t0, v), px(t1, v), cv::Scalar(230, 230, 230), 1);
  for (std::size_t i = 1; i < curve.thresholds.size(); ++i) {
    cv::line(image, px(curve.thresholds[i - 1], curve.values[i - 1]),
             px(curve.thresholds[i], curve.values[i]), cv::Scalar(200, 40, 40), 2, cv::LINE_AA);
  }
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(image, "1.0", {10, top + 5}, font, 0.4, cv::Scalar(0, 0, 0));
  cv::putText(image, "0.0", {10, height - bottom + 5}, font, 0.4, cv::Scalar(0, 0, 0));
  cv::putText(image, std::to_string(static_cast<int>(t0)), {left - 8, height - bottom + 18}, font, 0.4, cv::Scalar(0, 0, 0));
  cv::putText(image, std::to_string(static_cast<int>(t1)), {width - right - 16, height - bottom + 18}, font, 0.4, cv::Scalar(0, 0, 0));
  cv::putText(image, "threshold (mm)", {width / 2 - 50, height - 8}, font, 0.45, cv::Scalar(0, 0, 0));
  return image;
}

void write_png(const std::filesystem::path& file, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(file.string(), bgr)) throw LoadError("cannot write " + file.string());
}

}  // namespace handgcn::render
