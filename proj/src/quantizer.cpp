#include "handgcn/quantizer.hpp"

#include <algorithm>
#include <string>

#include "handgcn/errors.hpp"

namespace handgcn {

void QuantizerConfig::validate() const {
  if (splits_2d < 1 || splits_3d < 1) throw ConfigError("quantizer splits must be >= 1");
  if (image_size < splits_2d) throw ConfigError("image size must be at least splits_2d");
}

std::vector<std::vector<int>> JointClassLabels::one_hot() const {
  std::vector<std::vector<int>> rows(kNumJoints, std::vector<int>(num_classes, 0));
  for (int j = 0; j < kNumJoints; ++j) rows[j][labels[j]] = 1;
  return rows;
}

namespace {

struct Interval {
  double lo;
  double hi;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

}  // namespace

JointClassLabels create_classes_2d(const HandPose2D& pose, int splits, int size) {
  validate(pose);
  if (splits < 1) throw ConfigError("splits must be >= 1");
  if (size < splits) throw ConfigError("image size must be at least the number of splits");

  const int block = size / splits;
  std::vector<double> parts;
  for (int i = 0; i <= splits; ++i) parts.push_back(static_cast<double>(i * block));

  // Cell k covers x-interval j and y-interval i with k = j*splits + i.
  std::vector<std::pair<Interval, Interval>> cells;
  for (int j = 0; j < splits; ++j) {
    for (int i = 0; i < splits; ++i) {
      cells.push_back({{parts[j], parts[j + 1]}, {parts[i], parts[i + 1]}});
    }
  }

  JointClassLabels out;
  out.num_classes = splits * splits;
  for (int joint = 0; joint < kNumJoints; ++joint) {
    const auto& p = pose[joint];
    const auto hit = std::find_if(cells.begin(), cells.end(), [&](const auto& cell) {
      return cell.first.contains(p.x) && cell.second.contains(p.y);
    });
    if (hit == cells.end()) {
      throw OutOfRangeError("joint " + std::to_string(joint) + " at (" + std::to_string(p.x) +
                            ", " + std::to_string(p.y) + ") lies outside every 2D block");
    }
    out.labels[joint] = static_cast<int>(hit - cells.begin());
  }
  return out;
}

JointClassLabels create_classes_2d(const HandPose2D& pose, int splits, int width, int height) {
  if (width != height) throw ConfigError("2D quantization needs a square crop");
  return create_classes_2d(pose, splits, width);
}

JointClassLabels create_classes_3d(const HandPose3D& pose, int splits) {
  validate(pose);
  if (splits < 1) throw ConfigError("splits must be >= 1");

  std::array<std::vector<double>, 3> parts;
  for (int axis = 0; axis < 3; ++axis) {
    auto coord = [axis](const Point3& p) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; };
    double lo = coord(pose[0]);
    double hi = lo;
    for (const auto& p : pose) {
      lo = std::min(lo, coord(p));
      hi = std::max(hi, coord(p));
    }
    if (hi - lo <= 0.0) {
      lo -= kDegenerateAxisPad;
      hi += kDegenerateAxisPad;
    }
    const double step = (hi - lo) / splits;
    for (int i = 0; i < splits; ++i) parts[axis].push_back(lo + i * step);
    parts[axis].push_back(hi);  // exact, so the max corner stays covered
  }

  struct Cell {
    Interval x, y, z;
  };
  std::vector<Cell> cells;
  for (int j = 0; j < splits; ++j) {
    for (int i = 0; i < splits; ++i) {
      for (int p = 0; p < splits; ++p) {
        cells.push_back({{parts[0][j], parts[0][j + 1]},
                         {parts[1][i], parts[1][i + 1]},
                         {parts[2][p], parts[2][p + 1]}});
      }
    }
  }

  JointClassLabels out;
  out.num_classes = splits * splits * splits;
  for (int joint = 0; joint < kNumJoints; ++joint) {
    const auto& q = pose[joint];
    const auto hit = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
      return c.x.contains(q.x) && c.y.contains(q.y) && c.z.contains(q.z);
    });
    // Unreachable for finite poses: every joint lies inside its own bounding box.
    if (hit == cells.end()) throw OutOfRangeError("joint outside every 3D block");
    out.labels[joint] = static_cast<int>(hit - cells.begin());
  }
  return out;
}

}  // namespace handgcn
