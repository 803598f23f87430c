#include "handgcn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "handgcn/errors.hpp"

namespace handgcn {

const std::array<std::pair<int, int>, 20>& bones() {
  static const std::array<std::pair<int, int>, 20> kBones = [] {
    std::array<std::pair<int, int>, 20> b{};
    int k = 0;
    for (int f = 0; f < 5; ++f) {
      const auto finger = static_cast<Finger>(f);
      b[k++] = {kWrist, joint_index(finger, Phalanx::Mcp)};
      b[k++] = {joint_index(finger, Phalanx::Mcp), joint_index(finger, Phalanx::Pip)};
      b[k++] = {joint_index(finger, Phalanx::Pip), joint_index(finger, Phalanx::Dip)};
      b[k++] = {joint_index(finger, Phalanx::Dip), joint_index(finger, Phalanx::Tip)};
    }
    return b;
  }();
  return kBones;
}

std::optional<Finger> finger_of(int joint) {
  if (joint <= kWrist || joint >= kNumJoints) return std::nullopt;
  return static_cast<Finger>((joint - 1) / 4);
}

void validate(const HandPose2D& pose) {
  for (int i = 0; i < kNumJoints; ++i) {
    if (!std::isfinite(pose[i].x) || !std::isfinite(pose[i].y)) {
      throw InvalidPoseError("joint " + std::to_string(i) + " has a non-finite 2D coordinate");
    }
  }
}

void validate(const HandPose3D& pose) {
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& p = pose[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw InvalidPoseError("joint " + std::to_string(i) + " has a non-finite 3D coordinate");
    }
  }
}

namespace {

void widen_to_min_side(double& lo, double& hi) {
  if (hi - lo >= kMinCropSide) return;
  const double centre = 0.5 * (lo + hi);
  lo = centre - 0.5 * kMinCropSide;
  hi = centre + 0.5 * kMinCropSide;
}

}  // namespace

CropBox crop_box_from_joints(const HandPose2D& pose, double margin,
                             std::optional<ImageBounds> bounds) {
  validate(pose);
  if (!(margin >= 0.0)) throw InvalidPoseError("crop margin must be non-negative");

  CropBox box{pose[0].x, pose[0].y, pose[0].x, pose[0].y};
  for (const auto& p : pose) {
    box.min_x = std::min(box.min_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_x = std::max(box.max_x, p.x);
    box.max_y = std::max(box.max_y, p.y);
  }
  box.min_x -= margin;
  box.min_y -= margin;
  box.max_x += margin;
  box.max_y += margin;
  widen_to_min_side(box.min_x, box.max_x);
  widen_to_min_side(box.min_y, box.max_y);

  if (bounds) {
    box.min_x = std::max(box.min_x, 0.0);
    box.min_y = std::max(box.min_y, 0.0);
    box.max_x = std::min(box.max_x, bounds->width);
    box.max_y = std::min(box.max_y, bounds->height);
  }
  return box;
}

CropBox square_box(const CropBox& box) {
  const double side = std::max(box.width(), box.height());
  const double cx = 0.5 * (box.min_x + box.max_x);
  const double cy = 0.5 * (box.min_y + box.max_y);
  return {cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side};
}

HandPose3D root_relative(const HandPose3D& pose) {
  validate(pose);
  const Point3 root = pose[kWrist];
  HandPose3D out;
  for (int i = 0; i < kNumJoints; ++i) {
    out[i] = {pose[i].x - root.x, pose[i].y - root.y, pose[i].z - root.z};
  }
  return out;
}

HandPose3D translate(const HandPose3D& pose, const Point3& t) {
  HandPose3D out;
  for (int i = 0; i < kNumJoints; ++i) {
    out[i] = {pose[i].x + t.x, pose[i].y + t.y, pose[i].z + t.z};
  }
  return out;
}

HandPose3D scale(const HandPose3D& pose, double s) {
  HandPose3D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = {pose[i].x * s, pose[i].y * s, pose[i].z * s};
  return out;
}

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double distance(const Point3& a, const Point3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

double reference_bone_length(const HandPose3D& pose) {
  return distance(pose[kWrist], pose[kMiddleMcp]);
}

NormalizedPose3D normalize_3d(const HandPose3D& pose) {
  const HandPose3D centred = root_relative(pose);
  const double length = reference_bone_length(centred);
  if (!(length > 0.0) || !std::isfinite(length)) {
    throw InvalidPoseError("reference bone (wrist to middle mcp) has zero length");
  }
  return {scale(centred, 1.0 / length), length};
}

HandPose3D denormalize_3d(const HandPose3D& normalized, double bone_length) {
  return scale(normalized, bone_length);
}

nlohmann::json to_json(const HandPose2D& pose) {
  auto rows = nlohmann::json::array();
  for (const auto& p : pose) rows.push_back({p.x, p.y});
  return rows;
}

nlohmann::json to_json(const HandPose3D& pose) {
  auto rows = nlohmann::json::array();
  for (const auto& p : pose) rows.push_back({p.x, p.y, p.z});
  return rows;
}

namespace {

void check_rows(const nlohmann::json& j, std::size_t width) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(kNumJoints)) {
    throw InvalidPoseError("pose JSON must be an array of 21 rows");
  }
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != width) {
      throw InvalidPoseError("pose JSON rows must have " + std::to_string(width) + " numbers");
    }
  }
}

}  // namespace

HandPose2D pose2d_from_json(const nlohmann::json& j) {
  check_rows(j, 2);
  HandPose2D pose;
  for (int i = 0; i < kNumJoints; ++i) pose[i] = {j[i][0].get<double>(), j[i][1].get<double>()};
  validate(pose);
  return pose;
}

HandPose3D pose3d_from_json(const nlohmann::json& j) {
  check_rows(j, 3);
  HandPose3D pose;
  for (int i = 0; i < kNumJoints; ++i) {
    pose[i] = {j[i][0].get<double>(), j[i][1].get<double>(), j[i][2].get<double>()};
  }
  validate(pose);
  return pose;
}

}  // namespace handgcn
