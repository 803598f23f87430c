#pragma once

// Pose and classification metrics.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handgcn/skeleton.hpp"

namespace handgcn::eval {

// Coordinate frame a set of poses is expressed in. EPE refuses to compare
// poses from different frames.
enum class Frame { CropPixels, ImagePixels, Millimeters, Normalized };
std::string to_string(Frame frame);

template <typename Pose>
struct TaggedPoses {
  std::vector<Pose> poses;
  Frame frame;
};

// Per-joint Euclidean distances, sample-major (size = samples * 21).
std::vector<double> joint_errors(std::span<const HandPose2D> pred, std::span<const HandPose2D> gt);
std::vector<double> joint_errors(std::span<const HandPose3D> pred, std::span<const HandPose3D> gt);

double epe(const HandPose2D& pred, const HandPose2D& gt);
double epe(const HandPose3D& pred, const HandPose3D& gt);
double epe(std::span<const HandPose2D> pred, std::span<const HandPose2D> gt);
double epe(std::span<const HandPose3D> pred, std::span<const HandPose3D> gt);
double epe(const TaggedPoses<HandPose2D>& pred, const TaggedPoses<HandPose2D>& gt);
double epe(const TaggedPoses<HandPose3D>& pred, const TaggedPoses<HandPose3D>& gt);

struct PckCurve {
  std::vector<double> thresholds;  // ascending
  std::vector<double> values;      // fraction of errors <= threshold
};

struct PckResult {
  PckCurve curve;
  double auc = 0.0;  // trapezoidal, normalized by the threshold span
};

// 20, 21, ..., 50 (mm).
std::vector<double> default_pck_thresholds();

PckResult pck_auc(std::span<const double> errors,
                  std::span<const double> thresholds);
PckResult pck_auc(std::span<const double> errors);

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;  // macro over classes present in gt
  double recall = 0.0;
};

ClassificationReport classification_report(std::span<const int> pred, std::span<const int> gt,
                                            int num_classes);

nlohmann::json to_json(const PckResult& result);
nlohmann::json to_json(const ClassificationReport& report);

// "threshold,pck" rows.
void write_pck_csv(const std::filesystem::path& file, const PckCurve& curve);

}  // namespace handgcn::eval
