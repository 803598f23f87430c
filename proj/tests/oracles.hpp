#pragma once

// Test-only reference implementations, written independently of src/.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "handgcn/skeleton.hpp"

namespace oracle {

// Cell index along one axis by floor arithmetic; nullopt when the value is
// within `guard` of a grid line (the interval scan resolves those by tie rule).
inline std::optional<int> floor_cell(double v, double lo, double step, int splits, double guard = 1e-9) {
  const double u = (v - lo) / step;
  const double f = std::floor(u);
  if (u - f < guard || f + 1 - u < guard) return std::nullopt;
  return std::clamp(static_cast<int>(f), 0, splits - 1);
}

// 2D: block = int(size / splits), class = ix * splits + iy.
inline std::optional<int> class_2d(double x, double y, int splits, int size) {
  const double block = static_cast<int>(size / splits);
  const auto ix = floor_cell(x, 0.0, block, splits);
  const auto iy = floor_cell(y, 0.0, block, splits);
  if (!ix || !iy) return std::nullopt;
  return *ix * splits + *iy;
}

// 3D: grid over the pose's own bounding box, class = ix*k^2 + iy*k + iz.
inline std::vector<std::optional<int>> classes_3d(const handgcn::HandPose3D& pose, int k) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& p : pose) {
    const double c[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }
  std::vector<std::optional<int>> out;
  for (const auto& p : pose) {
    const double c[3] = {p.x, p.y, p.z};
    int idx[3];
    bool ok = true;
    for (int a = 0; a < 3; ++a) {
      const double step = (hi[a] - lo[a]) / k;
      if (c[a] == hi[a]) {  // max corner sits in the last cell
        idx[a] = k - 1;
        continue;
      }
      const auto cell = floor_cell(c[a], lo[a], step, k);
      if (!cell) {
        ok = false;
        break;
      }
      idx[a] = *cell;
    }
    out.push_back(ok ? std::optional<int>(idx[0] * k * k + idx[1] * k + idx[2]) : std::nullopt);
  }
  return out;
}

// Brute-force k nearest joints by mean squared coordinate difference,
// ties by index; returns the 21x21 row matrix before symmetrization.
inline std::vector<std::vector<int>> knn_rows(const std::vector<std::vector<double>>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < pts[i].size(); ++c) s += (pts[i][c] - pts[j][c]) * (pts[i][c] - pts[j][c]);
      d.emplace_back(j == i ? -1.0 : s / pts[i].size(), j);
    }
    std::sort(d.begin(), d.end());
    for (int t = 0; t < k; ++t) m[i][d[t].second] = 1;
  }
  return m;
}

// Relative error ||a - n|| / max(||a||, ||n||) between the autograd gradient
// of the scalar f with respect to x and central finite differences.
inline double gradient_error(const std::function<torch::Tensor()>& f, torch::Tensor x,
                             double h = 1e-6, int64_t max_entries = 200) {
  torch::Tensor analytic;
  {
    if (x.grad().defined()) x.mutable_grad().zero_();
    auto y = f();
    analytic = torch::autograd::grad({y}, {x}, {}, false, false, true)[0];
    if (!analytic.defined()) analytic = torch::zeros_like(x);
  }
  analytic = analytic.detach().reshape({-1}).clone();
  auto flat = x.detach().view({-1});
  const int64_t n = std::min<int64_t>(flat.numel(), max_entries);
  std::vector<double> a, num;
  torch::NoGradGuard guard;
  // Sample entries evenly when the tensor is large.
  const int64_t stride = std::max<int64_t>(1, flat.numel() / n);
  for (int64_t i = 0; i < flat.numel() && static_cast<int64_t>(a.size()) < n; i += stride) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double fp = f().item<double>();
    flat[i] = orig - h;
    const double fm = f().item<double>();
    flat[i] = orig;
    num.push_back((fp - fm) / (2 * h));
    a.push_back(analytic[i].item<double>());
  }
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - num[i]) * (a[i] - num[i]);
    na += a[i] * a[i];
    nn += num[i] * num[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

// Replaces every parameter with N(mean, std^2) draws. The default init can
// leave whole channels exactly on a ReLU kink, where one-sided differences
// and autograd legitimately disagree; generic weights avoid that.
inline void generic_weights(torch::nn::Module& module, double mean = 0.1, double std = 0.5) {
  torch::NoGradGuard guard;
  for (auto& p : module.parameters()) p.normal_(mean, std);
}

inline handgcn::HandPose3D random_pose_3d(std::mt19937_64& rng, double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  handgcn::HandPose3D p;
  for (auto& j : p) j = {u(rng), u(rng), u(rng)};
  return p;
}

inline handgcn::HandPose2D random_pose_2d(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  handgcn::HandPose2D p;
  for (auto& j : p) j = {u(rng), u(rng)};
  return p;
}

}  // namespace oracle
