#pragma once

// Samples, crop geometry, synthetic hands and batching.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "handgcn/quantizer.hpp"
#include "handgcn/skeleton.hpp"

namespace handgcn {

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;  // fx, fy > 0
};

// Pinhole projection u = fx x / z + cx, v = fy y / z + cy.
// Throws ProjectionError when a joint has z <= 0.
HandPose2D project_3d_to_2d(const HandPose3D& pose, const CameraIntrinsics& k);

// Maps original-image pixels into a square size x size crop and back.
struct CropTransform {
  CropBox box;  // square, in original-image pixels
  int size = 256;

  double scale() const { return size / box.width(); }
  Point2 to_crop(const Point2& p) const;
  Point2 to_image(const Point2& p) const;
  HandPose2D to_crop(const HandPose2D& pose) const;
  HandPose2D to_image(const HandPose2D& pose) const;
};

// Joint bounding box grown by `margin`, clamped to `bounds` when given,
// padded square.
CropTransform make_crop_transform(const HandPose2D& pose_px, double margin, int size,
                                  std::optional<ImageBounds> bounds = std::nullopt);

// Crops and resizes an RGB image; pixels outside the source are black.
cv::Mat crop_image(const cv::Mat& image, const CropTransform& crop);

inline constexpr double kRhdCropMargin = 10.0;
inline constexpr double kStbCropMargin = 20.0;

struct SampleMeta {
  std::string source;  // e.g. "synth:17", "rhd/training:00042"
  std::optional<CameraIntrinsics> intrinsics;
  bool mirrored = false;  // left hand flipped into right-hand form
  CropBox crop;           // square crop in original-image pixels
};

struct Sample {
  cv::Mat image;               // size x size, CV_8UC3, RGB
  HandPose2D pose_2d_px;       // crop pixels
  HandPose2D pose_2d_norm;     // crop-relative, [0, 1]
  HandPose3D pose_3d_mm;       // camera frame
  HandPose3D pose_3d_norm;     // root-relative, unit reference bone
  double bone_length_mm = 0.0;
  JointClassLabels labels_2d;
  JointClassLabels labels_3d;
  SampleMeta meta;
};

// Builds a Sample from a full RGB frame with 2D (image px) and 3D (mm) joints.
Sample make_sample(const cv::Mat& image_rgb, const HandPose2D& pose_2d_image,
                   const HandPose3D& pose_3d_mm, const QuantizerConfig& quantizer, double margin,
                   SampleMeta meta);

// Checks the Sample invariants: joints inside the crop, labels in range and
// equal to freshly computed ones, wrist at origin, unit reference bone.
// Returns an empty string when the sample is consistent, else the reason.
std::string check_sample(const Sample& sample, const QuantizerConfig& quantizer);

// Random-access view over samples; implementations must be thread-safe for get().
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index) const = 0;
};

class InMemorySource : public SampleSource {
 public:
  explicit InMemorySource(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t index) const override { return samples_.at(index); }
  const std::vector<Sample>& samples() const { return samples_; }

 private:
  std::vector<Sample> samples_;
};

// ---------------------------------------------------------------------------
// Synthetic hands

struct SynthOptions {
  int image_size = 256;
  QuantizerConfig quantizer;
  CameraIntrinsics camera{600.0, 600.0, 320.0, 240.0};
  double margin = kRhdCropMargin;
};

// Skeleton with randomized palm orientation, hand size and per-finger flexion,
// placed in front of the camera (mm).
HandPose3D synth_hand(std::uint64_t seed);

// Stick-figure rendering of a hand given its crop-pixel joints; brightness
// encodes relative depth.
cv::Mat render_stick_figure(const HandPose2D& crop_px, const HandPose3D& pose_3d, int size);

Sample synth_sample(std::uint64_t seed, const SynthOptions& options);

// `count` samples from `seed`; sample i uses seed mixed with i, so streams
// are bit-identical per seed.
std::vector<Sample> synth_dataset(std::size_t count, std::uint64_t seed,
                                  const SynthOptions& options = {});

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  torch::Tensor images;       // (B, 3, S, S) float in [0, 1]
  torch::Tensor pose_2d;      // (B, 21, 2) crop-relative
  torch::Tensor pose_3d;      // (B, 21, 3) normalized
  torch::Tensor labels_2d;    // (B, 21) int64
  torch::Tensor labels_3d;    // (B, 21) int64
  torch::Tensor bone_length;  // (B) mm
  std::int64_t size() const { return images.size(0); }
};

torch::Tensor image_to_tensor(const cv::Mat& rgb);
Batch collate(std::span<const Sample> samples);
Batch collate(const SampleSource& source, std::span<const std::size_t> indices);

torch::Tensor pose_to_tensor(const HandPose2D& pose);
torch::Tensor pose_to_tensor(const HandPose3D& pose);
HandPose2D pose2d_from_tensor(const torch::Tensor& t);  // (21, 2)
HandPose3D pose3d_from_tensor(const torch::Tensor& t);  // (21, 3)

// ---------------------------------------------------------------------------
// On-disk cache of preprocessed samples: <dir>/manifest.json plus one binary
// blob per sample. Writers hold an exclusive lock on <dir>/manifest.lock.

std::filesystem::path default_cache_dir();  // $HANDGCN_CACHE_DIR or ./.handgcn_cache

void write_sample_blob(const std::filesystem::path& file, const Sample& sample);
Sample read_sample_blob(const std::filesystem::path& file);

class SampleCache : public SampleSource {
 public:
  // Opens <root>/<dataset>-<config_key>; `complete()` is false until a
  // writer has finished filling it.
  SampleCache(const std::filesystem::path& root, const std::string& dataset,
              const std::string& config_key);

  bool complete() const { return complete_; }
  const std::filesystem::path& directory() const { return dir_; }

  // Writes every sample from `source` and the manifest, under the lock.
  void fill(const SampleSource& source);

  std::size_t size() const override { return count_; }
  Sample get(std::size_t index) const override;

 private:
  std::filesystem::path blob_path(std::size_t index) const;
  void read_manifest();

  std::filesystem::path dir_;
  std::string dataset_;
  std::string config_key_;
  std::size_t count_ = 0;
  bool complete_ = false;
};

}  // namespace handgcn
