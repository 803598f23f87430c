#pragma once

// 21-joint hand model shared by every stage of the pipeline.
//
// Joint 0 is the wrist. Joints 1..20 cover thumb, index, middle, ring and
// pinky, four joints per finger ordered tip, dip, pip, mcp. All adjacency
// matrices in the project index joints in this order.

#include <array>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace handgcn {

inline constexpr int kNumJoints = 21;
inline constexpr int kWrist = 0;

enum class Finger { Thumb = 0, Index, Middle, Ring, Pinky };
enum class Phalanx { Tip = 0, Dip, Pip, Mcp };

constexpr int joint_index(Finger f, Phalanx p) {
  return 1 + 4 * static_cast<int>(f) + static_cast<int>(p);
}

// Reference bone for 3D normalization: wrist -> middle mcp.
inline constexpr int kMiddleMcp = joint_index(Finger::Middle, Phalanx::Mcp);

// Parent/child pairs of the kinematic tree (wrist->mcp, mcp->pip->dip->tip).
const std::array<std::pair<int, int>, 20>& bones();

// Finger owning a joint; std::nullopt for the wrist.
std::optional<Finger> finger_of(int joint);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Point3&, const Point3&) = default;
};

template <typename P>
struct HandPose {
  std::array<P, kNumJoints> joints{};

  P& operator[](std::size_t i) { return joints[i]; }
  const P& operator[](std::size_t i) const { return joints[i]; }
  auto begin() { return joints.begin(); }
  auto end() { return joints.end(); }
  auto begin() const { return joints.begin(); }
  auto end() const { return joints.end(); }
  friend bool operator==(const HandPose&, const HandPose&) = default;
};

using HandPose2D = HandPose<Point2>;
using HandPose3D = HandPose<Point3>;

struct CropBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  bool contains(const Point2& p) const {
    return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
  }
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct ImageBounds {
  double width = 0.0;
  double height = 0.0;
};

// Smallest side a crop box may have; coincident joints are expanded to it.
inline constexpr double kMinCropSide = 4.0;

// Throws InvalidPoseError on any non-finite coordinate.
void validate(const HandPose2D& pose);
void validate(const HandPose3D& pose);

// Axis-aligned joint extent grown by `margin` on every side, clamped to
// `bounds` when given. Boxes thinner than kMinCropSide are widened around
// their centre.
CropBox crop_box_from_joints(const HandPose2D& pose, double margin,
                             std::optional<ImageBounds> bounds = std::nullopt);

// The same box padded to a square around its centre (not clamped).
CropBox square_box(const CropBox& box);

// Subtracts the wrist from every joint.
HandPose3D root_relative(const HandPose3D& pose);

HandPose3D translate(const HandPose3D& pose, const Point3& t);
HandPose3D scale(const HandPose3D& pose, double s);

double distance(const Point2& a, const Point2& b);
double distance(const Point3& a, const Point3& b);

// Length of the wrist -> middle-mcp bone.
double reference_bone_length(const HandPose3D& pose);

struct NormalizedPose3D {
  HandPose3D pose;     // root-relative, reference bone has unit length
  double bone_length;  // in the units of the input pose
};

// Root-centres and rescales so the reference bone has length one.
// Throws InvalidPoseError when the reference bone is degenerate.
NormalizedPose3D normalize_3d(const HandPose3D& pose);
HandPose3D denormalize_3d(const HandPose3D& normalized, double bone_length);

// Poses serialize as a plain array of 21 [x, y] or [x, y, z] rows.
nlohmann::json to_json(const HandPose2D& pose);
nlohmann::json to_json(const HandPose3D& pose);
HandPose2D pose2d_from_json(const nlohmann::json& j);
HandPose3D pose3d_from_json(const nlohmann::json& j);

}  // namespace handgcn
