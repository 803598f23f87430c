#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include "handgcn/errors.hpp"
#include "handgcn/evalkit.hpp"
#include "oracles.hpp"

using namespace handgcn;
namespace ev = handgcn::eval;

namespace {

HandPose3D shifted(const HandPose3D& p, Point3 d) { return translate(p, d); }

}  // namespace

TEST_CASE("EPE examples") {
  std::mt19937_64 rng(1);
  const auto gt = oracle::random_pose_3d(rng, 100);
  CHECK(ev::epe(gt, gt) == 0.0);
  CHECK(ev::epe(shifted(gt, {3, 4, 0}), gt) == doctest::Approx(5.0).epsilon(1e-12));
  HandPose3D half = gt;
  for (int j = 0; j < kNumJoints; j += 2) half[j].z += 2;  // 11 of 21 joints
  CHECK(ev::epe(half, gt) == doctest::Approx(2.0 * 11 / 21));

  // half the joints over a batch of two poses: exactly 1.0
  std::vector<HandPose3D> pred{shifted(gt, {0, 2, 0}), gt}, truth{gt, gt};
  CHECK(ev::epe(std::span<const HandPose3D>(pred), std::span<const HandPose3D>(truth)) == doctest::Approx(1.0));

  HandPose3D zero, offset;
  for (auto& j : offset) j = {3, 4, 0};
  CHECK(ev::epe(offset, zero) == 5.0);
}

TEST_CASE("EPE is translation invariant and frame-checked") {
  std::mt19937_64 rng(2);
  const auto a = oracle::random_pose_3d(rng), b = oracle::random_pose_3d(rng);
  CHECK(ev::epe(shifted(a, {8, -4, 2}), shifted(b, {8, -4, 2})) == doctest::Approx(ev::epe(a, b)));
  ev::TaggedPoses<HandPose3D> mm{{a}, ev::Frame::Millimeters}, norm{{b}, ev::Frame::Normalized};
  CHECK_THROWS_AS(ev::epe(mm, norm), ConfigError);
  ev::TaggedPoses<HandPose3D> mm2{{b}, ev::Frame::Millimeters};
  CHECK(ev::epe(mm, mm2) == doctest::Approx(ev::epe(a, b)));
  ev::TaggedPoses<HandPose2D> crop{{HandPose2D{}}, ev::Frame::CropPixels}, img{{HandPose2D{}}, ev::Frame::ImagePixels};
  CHECK_THROWS_AS(ev::epe(crop, img), ConfigError);

  std::vector<HandPose3D> one{a}, two{a, b};
  CHECK_THROWS(ev::epe(std::span<const HandPose3D>(one), std::span<const HandPose3D>(two)));
}

TEST_CASE("PCK and AUC degenerate cases") {
  const std::vector<double> good(210, 5.0), bad(210, 100.0);
  const auto g = ev::pck_auc(good);
  CHECK(g.auc == 1.0);
  for (double v : g.curve.values) CHECK(v == 1.0);
  const auto b = ev::pck_auc(bad);
  CHECK(b.auc == 0.0);
  CHECK(g.curve.thresholds.size() == 31);
  CHECK(g.curve.thresholds.front() == 20.0);
  CHECK(g.curve.thresholds.back() == 50.0);
}

TEST_CASE("AUC of uniform errors over the span is about one half") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(20, 50);
  std::vector<double> e(10000);
  for (auto& x : e) x = u(rng);
  const auto r = ev::pck_auc(e);
  CHECK(std::abs(r.auc - 0.5) < 0.02);
  for (std::size_t i = 1; i < r.curve.values.size(); ++i) CHECK(r.curve.values[i] >= r.curve.values[i - 1]);
}

TEST_CASE("threshold comparison is inclusive") {
  const std::vector<double> e{30.0};
  const std::vector<double> t{29.0, 30.0, 31.0};
  const auto r = ev::pck_auc(e, t);
  CHECK((r.curve.values == std::vector<double>{0.0, 1.0, 1.0}));
  CHECK(r.auc == doctest::Approx(0.75));
}

TEST_CASE("AUC is monotone under improvement") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 80), f(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> e(100), better(100);
    for (int i = 0; i < 100; ++i) {
      e[i] = u(rng);
      better[i] = e[i] * f(rng);
    }
    const double a = ev::pck_auc(e).auc, b = ev::pck_auc(better).auc;
    CHECK(b >= a);
    CHECK(a >= 0.0);
    CHECK(b <= 1.0);
  }
}

TEST_CASE("classification report") {
  const std::vector<int> gt{0, 1, 0, 1, 2, 2};
  const auto perfect = ev::classification_report(gt, gt, 4);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);

  const std::vector<int> two{0, 1, 0, 1}, constant{0, 0, 0, 0};
  const auto r = ev::classification_report(constant, two, 2);
  CHECK(r.accuracy == 0.5);
  CHECK(r.recall == 0.5);       // (1 + 0) / 2
  CHECK(r.precision == 0.25);   // (0.5 + 0) / 2

  // class 3 never appears in gt; predicting it hurts precision of nothing
  const std::vector<int> pred{0, 1, 0, 1, 2, 3};
  const auto s = ev::classification_report(pred, gt, 4);
  CHECK(s.accuracy == doctest::Approx(5.0 / 6));
  CHECK(s.recall == doctest::Approx((1 + 1 + 0.5) / 3));
  CHECK(s.precision == doctest::Approx(1.0));
  CHECK_THROWS(ev::classification_report(pred, two, 4));
}

TEST_CASE("json and csv output") {
  const auto r = ev::pck_auc(std::vector<double>{10, 25, 60});
  const auto j = ev::to_json(r);
  CHECK(j["auc"].get<double>() == doctest::Approx(r.auc));
  CHECK(j["thresholds"].size() == 31);
  const auto file = std::filesystem::temp_directory_path() / "handgcn_pck_test.csv";
  ev::write_pck_csv(file, r.curve);
  std::ifstream in(file);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "threshold,pck");
  CHECK(row.rfind("20", 0) == 0);
  std::filesystem::remove(file);
}
