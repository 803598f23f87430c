#include "handgcn/datasets.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "handgcn/errors.hpp"
#include "handgcn/matfile.hpp"
#include "handgcn/pickle.hpp"

namespace handgcn {

namespace fs = std::filesystem;

Split split_from_string(const std::string& name) {
  if (name == "train" || name == "training") return Split::Train;
  if (name == "test" || name == "evaluation" || name == "eval") return Split::Test;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

HandPose3D mirror_3d(const HandPose3D& pose) {
  HandPose3D out = pose;
  for (auto& p : out) p.x = -p.x;
  return out;
}

HandPose2D mirror_2d(const HandPose2D& pose, int width) {
  HandPose2D out = pose;
  for (auto& p : out) p.x = width - 1 - p.x;
  return out;
}

CameraIntrinsics mirror_intrinsics(const CameraIntrinsics& k, int width) {
  return {k.fx, k.fy, width - 1 - k.cx, k.cy};
}

namespace {

cv::Mat read_rgb(const fs::path& file) {
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError("cannot read image " + file.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

std::vector<double> array_field(const pickle::ValuePtr& entry, const char* key,
                                std::vector<std::int64_t> shape, const fs::path& file, std::int64_t id) {
  const auto v = entry ? entry->get(key) : nullptr;
  if (!v || v->kind != pickle::Value::Kind::Array) {
    throw LoadError(file.string() + ": sample " + std::to_string(id) + " lacks array '" + key + "'");
  }
  if (v->array->shape != shape) {
    throw LoadError(file.string() + ": sample " + std::to_string(id) + " field '" + key +
                    "' has an unexpected shape");
  }
  return v->array->to_doubles();
}

}  // namespace

std::vector<RhdRecord> read_rhd_annotations(const fs::path& pickle_file) {
  const auto root = pickle::load_file(pickle_file.string());
  if (root->kind != pickle::Value::Kind::Dict) {
    throw LoadError(pickle_file.string() + ": annotation root is not a dictionary");
  }
  std::vector<std::pair<std::int64_t, pickle::ValuePtr>> entries;
  for (const auto& [k, v] : root->entries) {
    if (k->kind != pickle::Value::Kind::Int) throw LoadError(pickle_file.string() + ": non-integer sample id");
    entries.emplace_back(k->integer, v);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<RhdRecord> records;
  records.reserve(entries.size());
  for (const auto& [id, entry] : entries) {
    const auto xyz = array_field(entry, "xyz", {42, 3}, pickle_file, id);
    const auto uv = array_field(entry, "uv_vis", {42, 3}, pickle_file, id);
    const auto k = array_field(entry, "K", {3, 3}, pickle_file, id);
    int visible_left = 0, visible_right = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      visible_left += uv[j * 3 + 2] > 0.5;
      visible_right += uv[(j + kNumJoints) * 3 + 2] > 0.5;
    }
    RhdRecord r;
    r.image_id = static_cast<std::size_t>(id);
    r.left = visible_left > visible_right;
    const int offset = r.left ? 0 : kNumJoints;
    for (int j = 0; j < kNumJoints; ++j) {
      const int row = (j + offset) * 3;
      r.uv[j] = {uv[row], uv[row + 1]};
      r.xyz_mm[j] = {xyz[row] * 1000.0, xyz[row + 1] * 1000.0, xyz[row + 2] * 1000.0};
    }
    r.intrinsics = {k[0], k[4], k[2], k[5]};
    records.push_back(r);
  }
  return records;
}

RhdSource::RhdSource(const fs::path& root, Split split, const QuantizerConfig& quantizer, double margin)
    : split_name_(split == Split::Train ? "training" : "evaluation"), quantizer_(quantizer), margin_(margin) {
  quantizer_.validate();
  const fs::path dir = root / split_name_;
  const fs::path anno = dir / ("anno_" + split_name_ + ".pickle");
  if (!fs::exists(anno)) throw LoadError("RHD annotation file not found: " + anno.string());
  image_dir_ = dir / "color";
  if (!fs::is_directory(image_dir_)) throw LoadError("RHD image directory not found: " + image_dir_.string());
  records_ = read_rhd_annotations(anno);
}

Sample RhdSource::get(std::size_t index) const {
  const auto& r = records_.at(index);
  char name[32];
  std::snprintf(name, sizeof(name), "%05zu.png", r.image_id);
  cv::Mat image = read_rgb(image_dir_ / name);

  HandPose2D uv = r.uv;
  HandPose3D xyz = r.xyz_mm;
  CameraIntrinsics k = r.intrinsics;
  if (r.left) {
    cv::flip(image, image, 1);
    uv = mirror_2d(uv, image.cols);
    xyz = mirror_3d(xyz);
    k = mirror_intrinsics(k, image.cols);
  }
  SampleMeta meta;
  meta.source = "rhd/" + split_name_ + ":" + std::string(name, 5);
  meta.intrinsics = k;
  meta.mirrored = r.left;
  return make_sample(image, uv, xyz, quantizer_, margin_, std::move(meta));
}

// ---------------------------------------------------------------------------

HandPose3D stb_to_canonical(const HandPose3D& stb) {
  HandPose3D out;
  out[kWrist] = stb[0];
  for (int block = 0; block < 5; ++block) {    // little, ring, middle, index, thumb
    for (int k = 0; k < 4; ++k) {              // mcp, pip, dip, tip
      out[1 + 4 * (4 - block) + (3 - k)] = stb[1 + 4 * block + k];
    }
  }
  return out;
}

std::vector<std::string> stb_sequences(Split split) {
  if (split == Split::Test) return {"B1Counting", "B1Random"};
  std::vector<std::string> out;
  for (int b = 2; b <= 6; ++b) {
    out.push_back("B" + std::to_string(b) + "Counting");
    out.push_back("B" + std::to_string(b) + "Random");
  }
  return out;
}

StbSource::StbSource(const fs::path& root, Split split, const QuantizerConfig& quantizer, double margin)
    : root_(root), quantizer_(quantizer), margin_(margin) {
  quantizer_.validate();
  for (const auto& seq : stb_sequences(split)) {
    const fs::path label_file = root / "labels" / (seq + "_BB.mat");
    if (!fs::exists(label_file)) throw LoadError("STB label file not found: " + label_file.string());
    const auto arrays = mat::load_file(label_file.string());
    const auto it = arrays.find("handPara");
    if (it == arrays.end()) throw LoadError(label_file.string() + ": no handPara array");
    const auto& a = it->second;
    if (a.dims.size() != 3 || a.dims[0] != 3 || a.dims[1] != kNumJoints) {
      throw LoadError(label_file.string() + ": handPara must be 3 x 21 x frames");
    }
    for (std::int64_t f = 0; f < a.dims[2]; ++f) {
      HandPose3D stb;
      for (int j = 0; j < kNumJoints; ++j) stb[j] = {a.at(0, j, f), a.at(1, j, f), a.at(2, j, f)};
      const HandPose3D left = stb_to_canonical(stb);
      HandPose3D right = left;
      for (auto& p : right) p.x -= kStbBaselineMm;
      entries_.push_back({seq, static_cast<int>(f), false, left});
      entries_.push_back({seq, static_cast<int>(f), true, right});
    }
  }
}

Sample StbSource::get(std::size_t index) const {
  const auto& e = entries_.at(index);
  const std::string name =
      std::string(e.right_camera ? "BB_right_" : "BB_left_") + std::to_string(e.frame) + ".png";
  const cv::Mat image = read_rgb(root_ / "images" / e.sequence / name);
  const HandPose2D uv = project_3d_to_2d(e.xyz_mm, kStbBumblebee);
  SampleMeta meta;
  meta.source = "stb/" + e.sequence + ":" + name;
  meta.intrinsics = kStbBumblebee;
  return make_sample(image, uv, e.xyz_mm, quantizer_, margin_, std::move(meta));
}

}  // namespace handgcn
