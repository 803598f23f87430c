#include "handgcn/data.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "handgcn/errors.hpp"

namespace handgcn {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
}

HandPose2D project_3d_to_2d(const HandPose3D& pose, const CameraIntrinsics& k) {
  validate(pose);
  k.validate();
  HandPose2D out;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& p = pose[i];
    if (!(p.z > 0.0)) {
      throw ProjectionError("joint " + std::to_string(i) + " has non-positive depth " +
                            std::to_string(p.z));
    }
    out[i] = {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
  }
  return out;
}

Point2 CropTransform::to_crop(const Point2& p) const {
  const double s = scale();
  return {(p.x - box.min_x) * s, (p.y - box.min_y) * s};
}

Point2 CropTransform::to_image(const Point2& p) const {
  const double s = scale();
  return {p.x / s + box.min_x, p.y / s + box.min_y};
}

HandPose2D CropTransform::to_crop(const HandPose2D& pose) const {
  HandPose2D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = to_crop(pose[i]);
  return out;
}

HandPose2D CropTransform::to_image(const HandPose2D& pose) const {
  HandPose2D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = to_image(pose[i]);
  return out;
}

CropTransform make_crop_transform(const HandPose2D& pose_px, double margin, int size,
                                  std::optional<ImageBounds> bounds) {
  if (size <= 0) throw ConfigError("crop size must be positive");
  return {square_box(crop_box_from_joints(pose_px, margin, bounds)), size};
}

cv::Mat crop_image(const cv::Mat& image, const CropTransform& crop) {
  const double s = crop.scale();
  cv::Mat affine = (cv::Mat_<double>(2, 3) << s, 0.0, -crop.box.min_x * s, 0.0, s,
                    -crop.box.min_y * s);
  cv::Mat out;
  cv::warpAffine(image, out, affine, cv::Size(crop.size, crop.size), cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return out;
}

namespace {

// Joints sit inside the crop mathematically; absorb the rounding of the
// affine map so labels see [0, size].
HandPose2D clamp_to_crop(const HandPose2D& pose, int size) {
  HandPose2D out = pose;
  const double hi = static_cast<double>(size);
  for (auto& p : out) {
    p.x = std::clamp(p.x, 0.0, hi);
    p.y = std::clamp(p.y, 0.0, hi);
  }
  return out;
}

HandPose2D scale_2d(const HandPose2D& pose, double s) {
  HandPose2D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = {pose[i].x * s, pose[i].y * s};
  return out;
}

Sample assemble(cv::Mat crop_rgb, const HandPose2D& crop_px, const HandPose3D& pose_3d_mm,
                const QuantizerConfig& quantizer, SampleMeta meta) {
  Sample s;
  s.image = std::move(crop_rgb);
  s.pose_2d_px = clamp_to_crop(crop_px, quantizer.image_size);
  s.pose_2d_norm = scale_2d(s.pose_2d_px, 1.0 / quantizer.image_size);
  s.pose_3d_mm = pose_3d_mm;
  const auto normalized = normalize_3d(pose_3d_mm);
  s.pose_3d_norm = normalized.pose;
  s.bone_length_mm = normalized.bone_length;
  s.labels_2d = create_classes_2d(s.pose_2d_px, quantizer.splits_2d, quantizer.image_size);
  s.labels_3d = create_classes_3d(s.pose_3d_norm, quantizer.splits_3d);
  s.meta = std::move(meta);
  return s;
}

}  // namespace

Sample make_sample(const cv::Mat& image_rgb, const HandPose2D& pose_2d_image,
                   const HandPose3D& pose_3d_mm, const QuantizerConfig& quantizer, double margin,
                   SampleMeta meta) {
  quantizer.validate();
  // Clamping to the frame is only safe when no joint lies outside it;
  // otherwise the crop extends into black padding.
  const ImageBounds frame{static_cast<double>(image_rgb.cols), static_cast<double>(image_rgb.rows)};
  const bool inside = std::all_of(pose_2d_image.begin(), pose_2d_image.end(), [&](const Point2& p) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= frame.width && p.y <= frame.height;
  });
  const auto crop = make_crop_transform(pose_2d_image, margin, quantizer.image_size,
                                        inside ? std::optional(frame) : std::nullopt);
  meta.crop = crop.box;
  return assemble(crop_image(image_rgb, crop), crop.to_crop(pose_2d_image), pose_3d_mm, quantizer,
                  std::move(meta));
}

std::string check_sample(const Sample& sample, const QuantizerConfig& quantizer) {
  const double size = quantizer.image_size;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& p = sample.pose_2d_px[i];
    if (p.x < 0.0 || p.y < 0.0 || p.x > size || p.y > size) {
      return "joint " + std::to_string(i) + " lies outside the crop";
    }
  }
  for (const auto* labels : {&sample.labels_2d, &sample.labels_3d}) {
    for (int l : labels->labels) {
      if (l < 0 || l >= labels->num_classes) return "class label out of range";
    }
  }
  if (create_classes_2d(sample.pose_2d_px, quantizer.splits_2d, quantizer.image_size) !=
      sample.labels_2d) {
    return "stored 2D labels differ from recomputed ones";
  }
  if (create_classes_3d(sample.pose_3d_norm, quantizer.splits_3d) != sample.labels_3d) {
    return "stored 3D labels differ from recomputed ones";
  }
  const auto& wrist = sample.pose_3d_norm[kWrist];
  if (std::abs(wrist.x) > 1e-9 || std::abs(wrist.y) > 1e-9 || std::abs(wrist.z) > 1e-9) {
    return "normalized wrist is not at the origin";
  }
  if (std::abs(reference_bone_length(sample.pose_3d_norm) - 1.0) > 1e-9) {
    return "normalized reference bone does not have unit length";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Synthetic hands

namespace {

struct FingerModel {
  Point3 mcp;                     // on the palm, in palm-length units
  std::array<double, 3> lengths;  // mcp->pip, pip->dip, dip->tip
  double spread;                  // rotation of the finger direction in the palm plane
};

// Right hand, palm in the xy-plane, fingers along +y, wrist at the origin,
// middle mcp at unit distance.
constexpr std::array<FingerModel, 5> kFingers{{
    {{-0.35, 0.25, 0.10}, {0.45, 0.32, 0.28}, -0.90},
    {{-0.22, 0.95, 0.00}, {0.45, 0.27, 0.20}, -0.15},
    {{0.00, 1.00, 0.00}, {0.50, 0.30, 0.22}, 0.00},
    {{0.20, 0.93, 0.00}, {0.45, 0.28, 0.21}, 0.15},
    {{0.37, 0.85, 0.00}, {0.36, 0.22, 0.19}, 0.32},
}};

using Mat3 = std::array<std::array<double, 3>, 3>;

Point3 rotate(const Mat3& m, const Point3& p) {
  return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
          m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
          m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z};
}

// Rodrigues rotation about a unit axis.
Mat3 axis_angle(const Point3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis.x, y = axis.y, z = axis.z;
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

Mat3 quaternion_matrix(double a, double b, double c, double d) {
  return {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
           {2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)},
           {2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d}}};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const std::array<cv::Scalar, 5> kFingerColors{
    cv::Scalar(255, 70, 70), cv::Scalar(70, 255, 70), cv::Scalar(70, 120, 255),
    cv::Scalar(255, 230, 70), cv::Scalar(230, 70, 255)};

}  // namespace

HandPose3D synth_hand(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  HandPose3D local;
  local[kWrist] = {0.0, 0.0, 0.0};
  for (int f = 0; f < 5; ++f) {
    const auto& model = kFingers[f];
    const double spread = model.spread + uniform(-0.12, 0.12);
    const Point3 lateral{std::cos(spread), -std::sin(spread), 0.0};
    const Point3 forward{std::sin(spread), std::cos(spread), 0.0};
    std::array<Point3, 4> chain{model.mcp};  // mcp, pip, dip, tip
    double flex = 0.0;
    for (int b = 0; b < 3; ++b) {
      flex += uniform(0.0, 1.2);
      const Point3 dir = rotate(axis_angle(lateral, flex), forward);
      const double len = model.lengths[b];
      chain[b + 1] = {chain[b].x + len * dir.x, chain[b].y + len * dir.y, chain[b].z + len * dir.z};
    }
    const auto finger = static_cast<Finger>(f);
    local[joint_index(finger, Phalanx::Mcp)] = chain[0];
    local[joint_index(finger, Phalanx::Pip)] = chain[1];
    local[joint_index(finger, Phalanx::Dip)] = chain[2];
    local[joint_index(finger, Phalanx::Tip)] = chain[3];
  }

  // Uniform random orientation from a normalized Gaussian quaternion.
  std::normal_distribution<double> gauss(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  for (double& v : q) {
    v = gauss(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  const Mat3 rotation = quaternion_matrix(q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);

  const double palm_mm = uniform(80.0, 100.0);
  const Point3 offset{uniform(-60.0, 60.0), uniform(-60.0, 60.0), uniform(450.0, 650.0)};
  HandPose3D out;
  for (int i = 0; i < kNumJoints; ++i) {
    const Point3 r = rotate(rotation, local[i]);
    out[i] = {palm_mm * r.x + offset.x, palm_mm * r.y + offset.y, palm_mm * r.z + offset.z};
  }
  return out;
}

cv::Mat render_stick_figure(const HandPose2D& crop_px, const HandPose3D& pose_3d, int size) {
  cv::Mat image(size, size, CV_8UC3, cv::Scalar(24, 24, 28));
  double z_min = pose_3d[0].z, z_max = pose_3d[0].z;
  for (const auto& p : pose_3d) {
    z_min = std::min(z_min, p.z);
    z_max = std::max(z_max, p.z);
  }
  const double z_range = std::max(z_max - z_min, 1e-9);
  auto shade = [&](int joint) { return 1.0 - 0.6 * (pose_3d[joint].z - z_min) / z_range; };
  auto pixel = [&](int joint) {
    return cv::Point(static_cast<int>(std::lround(crop_px[joint].x)),
                     static_cast<int>(std::lround(crop_px[joint].y)));
  };

  const int thickness = std::max(1, size / 64);
  for (const auto& [a, b] : bones()) {
    const int f = static_cast<int>(*finger_of(b));
    const double k = 0.5 * (shade(a) + shade(b));
    cv::line(image, pixel(a), pixel(b), kFingerColors[f] * k, thickness, cv::LINE_AA);
  }
  for (int j = 0; j < kNumJoints; ++j) {
    const double k = shade(j);
    cv::circle(image, pixel(j), thickness, cv::Scalar(255, 255, 255) * k, cv::FILLED, cv::LINE_AA);
  }
  return image;
}

Sample synth_sample(std::uint64_t seed, const SynthOptions& options) {
  QuantizerConfig quantizer = options.quantizer;
  quantizer.image_size = options.image_size;
  quantizer.validate();

  const HandPose3D pose_mm = synth_hand(seed);
  const HandPose2D projected = project_3d_to_2d(pose_mm, options.camera);
  const auto crop = make_crop_transform(projected, options.margin, options.image_size);
  const HandPose2D crop_px = clamp_to_crop(crop.to_crop(projected), options.image_size);

  SampleMeta meta;
  meta.source = "synth:" + std::to_string(seed);
  meta.intrinsics = options.camera;
  meta.crop = crop.box;
  return assemble(render_stick_figure(crop_px, pose_mm, options.image_size), crop_px, pose_mm,
                  quantizer, std::move(meta));
}

std::vector<Sample> synth_dataset(std::size_t count, std::uint64_t seed, const SynthOptions& options) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_sample(mix_seed(seed, i), options));
  return out;
}

// ---------------------------------------------------------------------------
// Batching

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  if (rgb.type() != CV_8UC3) throw ShapeError("expected an 8-bit 3-channel image");
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0);
}

torch::Tensor pose_to_tensor(const HandPose2D& pose) {
  auto t = torch::empty({kNumJoints, 2}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < kNumJoints; ++i) {
    a[i][0] = static_cast<float>(pose[i].x);
    a[i][1] = static_cast<float>(pose[i].y);
  }
  return t;
}

torch::Tensor pose_to_tensor(const HandPose3D& pose) {
  auto t = torch::empty({kNumJoints, 3}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < kNumJoints; ++i) {
    a[i][0] = static_cast<float>(pose[i].x);
    a[i][1] = static_cast<float>(pose[i].y);
    a[i][2] = static_cast<float>(pose[i].z);
  }
  return t;
}

HandPose2D pose2d_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 2 || t.size(0) != kNumJoints || t.size(1) != 2) throw ShapeError("expected (21, 2)");
  const auto d = t.detach().to(torch::kDouble).contiguous();
  auto a = d.accessor<double, 2>();
  HandPose2D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = {a[i][0], a[i][1]};
  return out;
}

HandPose3D pose3d_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 2 || t.size(0) != kNumJoints || t.size(1) != 3) throw ShapeError("expected (21, 3)");
  const auto d = t.detach().to(torch::kDouble).contiguous();
  auto a = d.accessor<double, 2>();
  HandPose3D out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = {a[i][0], a[i][1], a[i][2]};
  return out;
}

namespace {

torch::Tensor labels_to_tensor(const JointClassLabels& labels) {
  auto t = torch::empty({kNumJoints}, torch::kLong);
  for (int i = 0; i < kNumJoints; ++i) t[i] = labels.labels[i];
  return t;
}

}  // namespace

Batch collate(std::span<const Sample> samples) {
  if (samples.empty()) throw ShapeError("cannot collate an empty batch");
  std::vector<torch::Tensor> images, p2, p3, l2, l3;
  std::vector<double> bones;
  for (const auto& s : samples) {
    images.push_back(image_to_tensor(s.image));
    p2.push_back(pose_to_tensor(s.pose_2d_norm));
    p3.push_back(pose_to_tensor(s.pose_3d_norm));
    l2.push_back(labels_to_tensor(s.labels_2d));
    l3.push_back(labels_to_tensor(s.labels_3d));
    bones.push_back(s.bone_length_mm);
  }
  return {torch::stack(images), torch::stack(p2), torch::stack(p3), torch::stack(l2),
          torch::stack(l3), torch::tensor(bones, torch::kFloat32)};
}

Batch collate(const SampleSource& source, std::span<const std::size_t> indices) {
  std::vector<Sample> samples;
  samples.reserve(indices.size());
  for (auto i : indices) samples.push_back(source.get(i));
  return collate(samples);
}

// ---------------------------------------------------------------------------
// Cache

namespace fs = std::filesystem;

fs::path default_cache_dir() {
  if (const char* env = std::getenv("HANDGCN_CACHE_DIR"); env && *env) return env;
  return fs::current_path() / ".handgcn_cache";
}

namespace {

constexpr char kBlobMagic[4] = {'H', 'G', 'S', 'B'};
constexpr std::uint32_t kBlobVersion = 1;

class BlobWriter {
 public:
  explicit BlobWriter(const fs::path& file) : out_(file, std::ios::binary | std::ios::trunc) {
    if (!out_) throw LoadError("cannot write " + file.string());
  }
  template <typename T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), n); }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void pose(const HandPose2D& p) {
    for (const auto& j : p) { put(j.x); put(j.y); }
  }
  void pose(const HandPose3D& p) {
    for (const auto& j : p) { put(j.x); put(j.y); put(j.z); }
  }
  void labels(const JointClassLabels& l) {
    put(static_cast<std::int32_t>(l.num_classes));
    for (int v : l.labels) put(static_cast<std::int32_t>(v));
  }
  void finish(const fs::path& file) {
    out_.flush();
    if (!out_) throw LoadError("failed writing " + file.string());
  }

 private:
  std::ofstream out_;
};

class BlobReader {
 public:
  explicit BlobReader(const fs::path& file) : file_(file), in_(file, std::ios::binary) {
    if (!in_) throw LoadError("cannot read " + file.string());
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw LoadError("truncated sample blob " + file_.string());
    return v;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), n);
    if (!in_) throw LoadError("truncated sample blob " + file_.string());
  }
  std::string str() {
    std::string s(get<std::uint32_t>(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  HandPose2D pose2() {
    HandPose2D p;
    for (auto& j : p) { j.x = get<double>(); j.y = get<double>(); }
    return p;
  }
  HandPose3D pose3() {
    HandPose3D p;
    for (auto& j : p) { j.x = get<double>(); j.y = get<double>(); j.z = get<double>(); }
    return p;
  }
  JointClassLabels labels() {
    JointClassLabels l;
    l.num_classes = get<std::int32_t>();
    for (int& v : l.labels) v = get<std::int32_t>();
    return l;
  }

 private:
  fs::path file_;
  std::ifstream in_;
};

// RAII exclusive flock on a lock file.
class FileLock {
 public:
  explicit FileLock(const fs::path& file) {
    fd_ = ::open(file.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) throw LoadError("cannot lock " + file.string());
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

void write_sample_blob(const fs::path& file, const Sample& sample) {
  BlobWriter w(file);
  w.bytes(kBlobMagic, 4);
  w.put(kBlobVersion);
  const cv::Mat image = sample.image.isContinuous() ? sample.image : sample.image.clone();
  w.put(static_cast<std::int32_t>(image.rows));
  w.put(static_cast<std::int32_t>(image.cols));
  w.bytes(image.data, image.total() * image.elemSize());
  w.pose(sample.pose_2d_px);
  w.pose(sample.pose_2d_norm);
  w.pose(sample.pose_3d_mm);
  w.pose(sample.pose_3d_norm);
  w.put(sample.bone_length_mm);
  w.labels(sample.labels_2d);
  w.labels(sample.labels_3d);
  w.str(sample.meta.source);
  w.put(static_cast<std::uint8_t>(sample.meta.mirrored));
  w.put(static_cast<std::uint8_t>(sample.meta.intrinsics.has_value()));
  const auto k = sample.meta.intrinsics.value_or(CameraIntrinsics{});
  w.put(k.fx); w.put(k.fy); w.put(k.cx); w.put(k.cy);
  const auto& c = sample.meta.crop;
  w.put(c.min_x); w.put(c.min_y); w.put(c.max_x); w.put(c.max_y);
  w.finish(file);
}

Sample read_sample_blob(const fs::path& file) {
  BlobReader r(file);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kBlobMagic, 4) != 0) throw LoadError("not a sample blob: " + file.string());
  if (r.get<std::uint32_t>() != kBlobVersion) throw LoadError("unsupported blob version: " + file.string());
  Sample s;
  const auto rows = r.get<std::int32_t>();
  const auto cols = r.get<std::int32_t>();
  s.image = cv::Mat(rows, cols, CV_8UC3);
  r.bytes(s.image.data, s.image.total() * s.image.elemSize());
  s.pose_2d_px = r.pose2();
  s.pose_2d_norm = r.pose2();
  s.pose_3d_mm = r.pose3();
  s.pose_3d_norm = r.pose3();
  s.bone_length_mm = r.get<double>();
  s.labels_2d = r.labels();
  s.labels_3d = r.labels();
  s.meta.source = r.str();
  s.meta.mirrored = r.get<std::uint8_t>() != 0;
  const bool has_k = r.get<std::uint8_t>() != 0;
  CameraIntrinsics k{r.get<double>(), r.get<double>(), r.get<double>(), r.get<double>()};
  if (has_k) s.meta.intrinsics = k;
  s.meta.crop = {r.get<double>(), r.get<double>(), r.get<double>(), r.get<double>()};
  return s;
}

SampleCache::SampleCache(const fs::path& root, const std::string& dataset,
                         const std::string& config_key)
    : dir_(root / (dataset + "-" + config_key)), dataset_(dataset), config_key_(config_key) {
  read_manifest();
}

void SampleCache::read_manifest() {
  const auto manifest = dir_ / "manifest.json";
  complete_ = false;
  count_ = 0;
  if (!fs::exists(manifest)) return;
  std::ifstream in(manifest);
  const auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || j.value("dataset", "") != dataset_ ||
      j.value("config_key", "") != config_key_) {
    return;
  }
  count_ = j.value("count", std::size_t{0});
  complete_ = j.value("complete", false);
}

fs::path SampleCache::blob_path(std::size_t index) const {
  std::ostringstream name;
  name << std::setw(7) << std::setfill('0') << index << ".bin";
  return dir_ / name.str();
}

void SampleCache::fill(const SampleSource& source) {
  fs::create_directories(dir_);
  FileLock lock(dir_ / "manifest.lock");
  read_manifest();
  if (complete_) return;  // another writer finished first
  for (std::size_t i = 0; i < source.size(); ++i) write_sample_blob(blob_path(i), source.get(i));
  nlohmann::json manifest{{"dataset", dataset_},
                          {"config_key", config_key_},
                          {"count", source.size()},
                          {"format", "handgcn-sample-blob-v1"},
                          {"complete", true}};
  const auto tmp = dir_ / "manifest.json.tmp";
  std::ofstream(tmp) << manifest.dump(2);
  fs::rename(tmp, dir_ / "manifest.json");
  count_ = source.size();
  complete_ = true;
}

Sample SampleCache::get(std::size_t index) const {
  if (index >= count_) throw LoadError("cache index out of range");
  return read_sample_blob(blob_path(index));
}

}  // namespace handgcn
