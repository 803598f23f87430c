#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "handgcn/errors.hpp"
#include "handgcn/evalkit.hpp"
#include "handgcn/training.hpp"

using namespace handgcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("handgcn_test_train_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.image_size = 64;
  c.batch_size = 4;
  c.steps = 6;
  c.seed = 3;
  return c;
}

InMemorySource tiny_data(std::size_t n, int size = 64) {
  SynthOptions opt;
  opt.image_size = size;
  return InMemorySource(synth_dataset(n, 21, opt));
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config text round trips and rejects unknown keys") {
  auto c = TrainConfig::parse("# comment\nsteps = 12\nvariant = D\nlr_schedule = cosine\nseed=9  # trailing\n");
  CHECK(c.steps == 12);
  CHECK(c.variant == "D");
  CHECK(c.lr_schedule == LrSchedule::Cosine);
  CHECK(c.seed == 9);
  const auto again = TrainConfig::parse(c.to_text());
  CHECK(again.to_text() == c.to_text());
  CHECK(again.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::parse("stepz = 3"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("steps = many"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("batch_size = 0"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("variant = Z"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("just words"), ConfigError);
}

TEST_CASE("default training config") {
  const TrainConfig c;
  CHECK(c.lr == 1.0);
  CHECK(c.rho == 0.9);
  CHECK(c.eps == 1e-6);
  CHECK(c.loss_weights.regression == 100.0);
  CHECK(c.loss_weights.classification == 1.0);
  CHECK(c.lr_schedule == LrSchedule::Constant);
  const auto m = model_config_for(c);
  CHECK(m.backbone.input_size == 256);
  CHECK(m.quantizer.classes_2d() == 16);
  CHECK(m.quantizer.classes_3d() == 27);
}

TEST_CASE("config hash is short, stable and content sensitive") {
  const auto a = config_hash("steps = 1\n"), b = config_hash("steps = 2\n");
  CHECK(a.size() == 10);
  CHECK(a == config_hash("steps = 1\n"));
  CHECK(a != b);
}

TEST_CASE("learning rate schedules") {
  auto c = tiny_config();
  CHECK(learning_rate_at(c, 0, 100) == 1.0);
  CHECK(learning_rate_at(c, 99, 100) == 1.0);
  c.lr_schedule = LrSchedule::Cosine;
  CHECK(learning_rate_at(c, 0, 100) == doctest::Approx(1.0));
  CHECK(learning_rate_at(c, 50, 100) == doctest::Approx(0.5));
  CHECK(learning_rate_at(c, 99, 100) < 0.01);
}

TEST_CASE("epoch permutations") {
  const auto p = epoch_permutation(5, 0, 50);
  CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == 50);
  CHECK(*std::max_element(p.begin(), p.end()) == 49);
  CHECK(p == epoch_permutation(5, 0, 50));
  CHECK(p != epoch_permutation(5, 1, 50));
  CHECK(p != epoch_permutation(6, 0, 50));
}

TEST_CASE("checkpoint round trip and schema checks") {
  const auto dir = scratch("ckpt");
  auto cfg = tiny_config();
  const auto mc = model_config_for(cfg);
  torch::manual_seed(1);
  HandPoseNet net(mc);
  save_checkpoint(dir / "a.pt", net, {mc, cfg, Stage::Coarse, 17, 40});
  CHECK_FALSE(fs::exists(dir / "a.pt.tmp"));

  const auto meta = read_checkpoint_meta(dir / "a.pt");
  CHECK(meta.step == 17);
  CHECK(meta.total_steps == 40);
  CHECK(meta.stage == Stage::Coarse);
  CHECK(meta.train.to_text() == cfg.to_text());

  CheckpointMeta loaded_meta;
  auto loaded = load_model(dir / "a.pt", &loaded_meta);
  CHECK(coarse_state_digest(loaded) == coarse_state_digest(net));
  CHECK(loaded->theta().item<double>() == net->theta().item<double>());

  auto other = mc;
  other.regressor_hidden = 32;
  HandPoseNet wrong(other);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.pt", wrong), ConfigError);
  try {
    require_same_config(other, mc);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("regressor_hidden") != std::string::npos);
  }

  // coarse weights load into another refinement mode
  auto knn = mc;
  knn.variant = ModelVariant::from_name("D");
  HandPoseNet d(knn);
  load_coarse_weights(dir / "a.pt", d);
  CHECK(coarse_state_digest(d) == coarse_state_digest(net));

  std::ofstream(dir / "bad.pt") << "garbage";
  CHECK_THROWS(read_checkpoint_meta(dir / "bad.pt"));
  fs::remove_all(dir);
}

TEST_CASE("coarse training writes checkpoint and loss log; reruns are identical") {
  const auto dir = scratch("coarse");
  const auto data = tiny_data(8);
  auto cfg = tiny_config();
  std::vector<double> first, second;
  const auto r1 = train(cfg, data, {dir / "a.pt", dir / "a.csv", false},
                        [&](std::int64_t, double l) { first.push_back(l); });
  const auto r2 = train(cfg, data, {dir / "b.pt", dir / "b.csv", false},
                        [&](std::int64_t, double l) { second.push_back(l); });
  CHECK(r1.steps == 6);
  CHECK(first.size() == 6);
  CHECK(first == second);
  CHECK(r1.final_loss == r2.final_loss);
  const auto lines = read_lines(dir / "a.csv");
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "step,regression_2d,regression_3d,classification_2d,classification_3d,total,lr");
  CHECK(lines[1].rfind("0,", 0) == 0);
  CHECK(read_checkpoint_meta(dir / "a.pt").step == 6);
  fs::remove_all(dir);
}

TEST_CASE("resuming reproduces the remaining losses") {
  const auto dir = scratch("resume");
  const auto data = tiny_data(8);
  auto cfg = tiny_config();
  cfg.checkpoint_every = 3;
  std::vector<double> full, resumed;
  train(cfg, data, {dir / "full.pt", dir / "full.csv", false},
        [&](std::int64_t, double l) { full.push_back(l); });
  REQUIRE(fs::exists(dir / "full-step0000003.pt"));
  fs::copy_file(dir / "full-step0000003.pt", dir / "resume.pt");
  std::int64_t first_step = -1;
  train(cfg, data, {dir / "resume.pt", dir / "resume.csv", true}, [&](std::int64_t s, double l) {
    if (first_step < 0) first_step = s;
    resumed.push_back(l);
  });
  CHECK(first_step == 3);
  REQUIRE(resumed.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(resumed[i] == full[3 + i]);
  fs::remove_all(dir);
}

TEST_CASE("refinement needs a coarse checkpoint") {
  const auto data = tiny_data(4);
  auto cfg = tiny_config();
  cfg.stage = Stage::Refinement;
  CHECK_THROWS_AS(train(cfg, data, {"/nonexistent/x.pt", "/nonexistent/x.csv", false}), TrainingError);
  cfg.coarse_checkpoint = "/nonexistent/coarse.pt";
  CHECK_THROWS_AS(train(cfg, data, {"/nonexistent/x.pt", "/nonexistent/x.csv", false}), TrainingError);
}

TEST_CASE("non-finite losses abort with diagnostics") {
  const auto dir = scratch("nan");
  const auto data = tiny_data(4);
  auto cfg = tiny_config();
  cfg.lr = 1e30;
  cfg.steps = 40;
  try {
    train(cfg, data, {dir / "n.pt", dir / "n.csv", false});
    // a huge step size does not always blow up; nothing to check then
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite loss at step") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("overfit sanity on four samples, then frozen refinement") {
  const auto dir = scratch("overfit");
  const auto data = tiny_data(4);
  auto cfg = tiny_config();
  cfg.steps = 2000;
  cfg.lr_schedule = LrSchedule::Cosine;
  train(cfg, data, {dir / "coarse.pt", dir / "coarse.csv", false});

  auto model = load_model(dir / "coarse.pt");
  const auto pred = predict(model, data);
  std::vector<HandPose2D> pred_norm, gt_norm;
  std::vector<HandPose3D> gt3;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.get(i);
    HandPose2D p = pred.pose_2d_px[i];
    for (auto& j : p) j = {j.x / 64.0, j.y / 64.0};
    pred_norm.push_back(p);
    gt_norm.push_back(s.pose_2d_norm);
    gt3.push_back(s.pose_3d_norm);
    CHECK(pred.labels_2d[i] == s.labels_2d);
    CHECK(pred.labels_3d[i] == s.labels_3d);
  }
  const double e2 = eval::epe(std::span<const HandPose2D>(pred_norm), std::span<const HandPose2D>(gt_norm));
  const double e3 = eval::epe(std::span<const HandPose3D>(pred.pose_3d_coarse), std::span<const HandPose3D>(gt3));
  MESSAGE("2D error " << e2 << ", 3D EPE " << e3);
  CHECK(e2 < 1e-3);
  CHECK(e3 < 1e-2);

  // Refine on a short coarse run so there is a real residual left to fit.
  auto short_cfg = cfg;
  short_cfg.steps = 200;
  train(short_cfg, data, {dir / "short.pt", dir / "short.csv", false});
  auto short_model = load_model(dir / "short.pt");
  const auto coarse_digest = coarse_state_digest(short_model);
  auto rcfg = cfg;
  rcfg.stage = Stage::Refinement;
  rcfg.steps = 100;
  rcfg.lr_schedule = LrSchedule::Constant;
  // At lr 1 the first Adadelta steps overshoot (E[g^2] starts at zero), so
  // the monotone check runs at a reduced rate.
  rcfg.lr = 0.05;
  rcfg.coarse_checkpoint = (dir / "short.pt").string();
  std::vector<double> losses;
  const auto r = train(rcfg, data, {dir / "refine.pt", dir / "refine.csv", false},
                       [&](std::int64_t, double l) { losses.push_back(l); });
  CHECK(r.refined_loss_before == doctest::Approx(r.coarse_equivalent_loss));
  CHECK(r.refined_loss_after <= r.coarse_equivalent_loss);
  MESSAGE("refinement loss " << losses.front() << " -> " << losses.back());
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1]);
  CHECK(read_lines(dir / "refine.csv").front() == "step,refinement,lr");

  auto refined = load_model(dir / "refine.pt");
  CHECK(coarse_state_digest(refined) == coarse_digest);
  fs::remove_all(dir);
}

TEST_CASE("evaluate reports the documented fields") {
  const auto data = tiny_data(3);
  torch::manual_seed(0);
  HandPoseNet net(model_config_for(tiny_config()));
  const auto j = evaluate(net, data);
  for (const char* k : {"samples", "variant", "epe_2d_px", "epe_3d_normalized", "epe_3d_mm", "auc", "pck",
                        "classification"})
    CHECK(j.contains(k));
  CHECK(j["samples"] == 3);
  CHECK(j["auc"].get<double>() >= 0.0);
  CHECK(j["auc"].get<double>() <= 1.0);
  CHECK(j["classification"].contains("2d"));
  CHECK(j["classification"].contains("3d"));
}
