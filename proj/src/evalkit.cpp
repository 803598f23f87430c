#include "handgcn/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "handgcn/errors.hpp"

namespace handgcn::eval {

std::string to_string(Frame frame) {
  switch (frame) {
    case Frame::CropPixels: return "crop_px";
    case Frame::ImagePixels: return "image_px";
    case Frame::Millimeters: return "mm";
    case Frame::Normalized: return "normalized";
  }
  return "unknown";
}

namespace {

template <typename Pose>
std::vector<double> errors_impl(std::span<const Pose> pred, std::span<const Pose> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("prediction count " + std::to_string(pred.size()) +
                     " differs from ground truth count " + std::to_string(gt.size()));
  }
  std::vector<double> out;
  out.reserve(pred.size() * kNumJoints);
  for (std::size_t s = 0; s < pred.size(); ++s) {
    for (int j = 0; j < kNumJoints; ++j) out.push_back(distance(pred[s][j], gt[s][j]));
  }
  return out;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("no poses to evaluate");
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

void check_frames(Frame a, Frame b) {
  if (a != b) {
    throw ConfigError("cannot compare poses in " + to_string(a) + " with poses in " + to_string(b));
  }
}

}  // namespace

std::vector<double> joint_errors(std::span<const HandPose2D> pred, std::span<const HandPose2D> gt) {
  return errors_impl(pred, gt);
}

std::vector<double> joint_errors(std::span<const HandPose3D> pred, std::span<const HandPose3D> gt) {
  return errors_impl(pred, gt);
}

double epe(const HandPose2D& pred, const HandPose2D& gt) {
  return epe(std::span(&pred, 1), std::span(&gt, 1));
}

double epe(const HandPose3D& pred, const HandPose3D& gt) {
  return epe(std::span(&pred, 1), std::span(&gt, 1));
}

double epe(std::span<const HandPose2D> pred, std::span<const HandPose2D> gt) {
  return mean(joint_errors(pred, gt));
}

double epe(std::span<const HandPose3D> pred, std::span<const HandPose3D> gt) {
  return mean(joint_errors(pred, gt));
}

double epe(const TaggedPoses<HandPose2D>& pred, const TaggedPoses<HandPose2D>& gt) {
  check_frames(pred.frame, gt.frame);
  return epe(std::span(pred.poses), std::span(gt.poses));
}

double epe(const TaggedPoses<HandPose3D>& pred, const TaggedPoses<HandPose3D>& gt) {
  check_frames(pred.frame, gt.frame);
  return epe(std::span(pred.poses), std::span(gt.poses));
}

std::vector<double> default_pck_thresholds() {
  std::vector<double> t;
  for (int mm = 20; mm <= 50; ++mm) t.push_back(mm);
  return t;
}

PckResult pck_auc(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw ShapeError("pck_auc needs at least one error");
  if (thresholds.size() < 2) throw ConfigError("pck_auc needs at least two thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw ConfigError("thresholds must be ascending");
  }

  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  PckResult r;
  r.curve.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    const auto within = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    r.curve.values.push_back(static_cast<double>(within) / static_cast<double>(sorted.size()));
  }
  double area = 0.0;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    area += 0.5 * (r.curve.values[i] + r.curve.values[i - 1]) * (thresholds[i] - thresholds[i - 1]);
  }
  r.auc = area / (thresholds.back() - thresholds.front());
  return r;
}

PckResult pck_auc(std::span<const double> errors) {
  const auto t = default_pck_thresholds();
  return pck_auc(errors, t);
}

ClassificationReport classification_report(std::span<const int> pred, std::span<const int> gt,
                                            int num_classes) {
  if (pred.size() != gt.size()) throw ShapeError("label count mismatch");
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  ClassificationReport r;
  if (gt.empty()) return r;

  std::vector<long> tp(num_classes, 0), predicted(num_classes, 0), actual(num_classes, 0);
  long correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) {
      throw OutOfRangeError("label outside [0, " + std::to_string(num_classes) + ")");
    }
    ++predicted[p];
    ++actual[g];
    if (p == g) {
      ++tp[g];
      ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(gt.size());
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (actual[c] == 0) continue;
    ++present;
    r.recall += static_cast<double>(tp[c]) / static_cast<double>(actual[c]);
    // A class present in gt but never predicted has precision 0.
    if (predicted[c] > 0) r.precision += static_cast<double>(tp[c]) / static_cast<double>(predicted[c]);
  }
  r.precision /= present;
  r.recall /= present;
  return r;
}

nlohmann::json to_json(const PckResult& result) {
  return {{"thresholds", result.curve.thresholds},
          {"pck", result.curve.values},
          {"auc", result.auc}};
}

nlohmann::json to_json(const ClassificationReport& report) {
  return {{"accuracy", report.accuracy}, {"precision", report.precision}, {"recall", report.recall}};
}

void write_pck_csv(const std::filesystem::path& file, const PckCurve& curve) {
  std::ofstream out(file);
  if (!out) throw LoadError("cannot write " + file.string());
  out << "threshold,pck\n" << std::setprecision(10);
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    out << curve.thresholds[i] << ',' << curve.values[i] << '\n';
  }
}

}  // namespace handgcn::eval
