#pragma once

// Ground-truth block classes for the joint classifiers.
//
// The crop (2D) or the pose's own bounding box (3D) is cut into a regular
// grid and each joint is labelled with the index of the cell containing it.
// Cells are closed on both ends, so a joint sitting on a grid line belongs
// to two cells; the lower class index wins.

#include <array>
#include <vector>

#include "handgcn/skeleton.hpp"

namespace handgcn {

struct QuantizerConfig {
  int splits_2d = 4;   // n x n grid, N = n^2 classes
  int splits_3d = 3;   // k x k x k grid, K = k^3 classes
  int image_size = 256;

  int classes_2d() const { return splits_2d * splits_2d; }
  int classes_3d() const { return splits_3d * splits_3d * splits_3d; }
  void validate() const;
};

struct JointClassLabels {
  std::array<int, kNumJoints> labels{};
  int num_classes = 0;

  // 21 x C rows with a single one each.
  std::vector<std::vector<int>> one_hot() const;
  friend bool operator==(const JointClassLabels&, const JointClassLabels&) = default;
};

// Per-axis extent added on both sides of a zero-width 3D axis.
inline constexpr double kDegenerateAxisPad = 1e-6;

// Joints must lie in [0, size]^2 (crop pixels). Throws OutOfRangeError for
// joints no cell covers, including the strip left uncovered when `size` is
// not a multiple of `splits`.
JointClassLabels create_classes_2d(const HandPose2D& pose, int splits, int size);

// Same, for a width x height crop; non-square crops are rejected.
JointClassLabels create_classes_2d(const HandPose2D& pose, int splits, int width, int height);

// Grid spans the pose's own min/max on each axis; label = ix*k^2 + iy*k + iz.
JointClassLabels create_classes_3d(const HandPose3D& pose, int splits);

}  // namespace handgcn
