#pragma once

// Loaders for the RHD and STB dataset layouts.
//
// RHD: <root>/{training,evaluation}/color/%05d.png and anno_{split}.pickle
// (per sample: xyz (42,3) metres, uv_vis (42,3), K (3,3); left hand first).
// STB: <root>/images/<seq>/BB_{left,right}_<i>.png and
// <root>/labels/<seq>_BB.mat (handPara 3x21xN, mm, left-camera frame).

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "handgcn/data.hpp"

namespace handgcn {

inline constexpr std::size_t kRhdTrainCount = 41258;
inline constexpr std::size_t kRhdTestCount = 2728;
inline constexpr std::size_t kStbTrainCount = 30000;
inline constexpr std::size_t kStbTestCount = 6000;

enum class Split { Train, Test };
Split split_from_string(const std::string& name);  // train|training, test|evaluation

struct RhdRecord {
  std::size_t image_id = 0;
  HandPose2D uv;       // image pixels
  HandPose3D xyz_mm;   // camera frame
  CameraIntrinsics intrinsics;
  bool left = false;   // chosen hand is the left one (mirrored on load)
};

// Picks the hand with more visible keypoints (ties go to the right hand).
std::vector<RhdRecord> read_rhd_annotations(const std::filesystem::path& pickle_file);

class RhdSource : public SampleSource {
 public:
  RhdSource(const std::filesystem::path& root, Split split, const QuantizerConfig& quantizer,
            double margin = kRhdCropMargin);
  std::size_t size() const override { return records_.size(); }
  Sample get(std::size_t index) const override;
  const std::vector<RhdRecord>& records() const { return records_; }

 private:
  std::filesystem::path image_dir_;
  std::string split_name_;
  QuantizerConfig quantizer_;
  double margin_;
  std::vector<RhdRecord> records_;
};

// STB joint order (palm, then little..thumb each mcp->tip) to ours. The palm
// centre stands in for the wrist.
HandPose3D stb_to_canonical(const HandPose3D& stb);

inline constexpr CameraIntrinsics kStbBumblebee{822.79041, 822.79041, 318.47345, 250.31296};
inline constexpr double kStbBaselineMm = 120.054;

// Sequences B1Counting and B1Random are the test split; B2..B6 the train split.
std::vector<std::string> stb_sequences(Split split);

class StbSource : public SampleSource {
 public:
  StbSource(const std::filesystem::path& root, Split split, const QuantizerConfig& quantizer,
            double margin = kStbCropMargin);
  std::size_t size() const override { return entries_.size(); }
  Sample get(std::size_t index) const override;

  struct Entry {
    std::string sequence;
    int frame = 0;
    bool right_camera = false;
    HandPose3D xyz_mm;  // in the frame of the camera that took the image
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::filesystem::path root_;
  QuantizerConfig quantizer_;
  double margin_;
  std::vector<Entry> entries_;
};

// Mirrors a pose and intrinsics about the vertical image axis of a frame
// `width` pixels wide (x -> -x in 3D, u -> width - 1 - u in 2D).
HandPose3D mirror_3d(const HandPose3D& pose);
HandPose2D mirror_2d(const HandPose2D& pose, int width);
CameraIntrinsics mirror_intrinsics(const CameraIntrinsics& k, int width);

}  // namespace handgcn
