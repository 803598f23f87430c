// Acceptance run: one PASS/FAIL/SKIP line per criterion.
//
//   acceptance [--only 1,4,7] [--out DIR]
//
// Exit status is 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "handgcn/backbone.hpp"
#include "handgcn/commands.hpp"
#include "handgcn/datasets.hpp"
#include "handgcn/evalkit.hpp"
#include "handgcn/graph.hpp"
#include "handgcn/losses.hpp"
#include "handgcn/quantizer.hpp"
#include "handgcn/relations.hpp"
#include "handgcn/training.hpp"
#include "oracles.hpp"

using namespace handgcn;
namespace fs = std::filesystem;
namespace rel = handgcn::relations;

namespace {

const auto kD = torch::TensorOptions().dtype(torch::kDouble);

struct Outcome {
  enum Kind { Pass, Fail, Skip } kind = Pass;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(d)}; }

template <typename... T>
std::string cat(const T&... parts) {
  std::ostringstream s;
  s << std::setprecision(6);
  (s << ... << parts);
  return s.str();
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

fs::path g_out;

// ---------------------------------------------------------------------------

Outcome quantizer_oracle() {
  std::mt19937_64 rng(101);
  std::size_t compared = 0;
  for (int splits : {2, 3, 4, 5}) {
    const int size = 256 % splits == 0 ? 256 : 240;
    std::uniform_real_distribution<double> u(0, size);
    std::size_t n2 = 0, n3 = 0;
    while (n2 < 10000) {
      HandPose2D p;
      for (auto& j : p) j = {u(rng), u(rng)};
      const auto l = create_classes_2d(p, splits, size);
      for (int j = 0; j < kNumJoints && n2 < 10000; ++j) {
        const auto e = oracle::class_2d(p[j].x, p[j].y, splits, size);
        if (!e) continue;
        if (l.labels[j] != *e) return fail(cat("2D splits ", splits, " joint (", p[j].x, ", ", p[j].y, ")"));
        ++n2;
      }
    }
    while (n3 < 10000) {
      const auto p = oracle::random_pose_3d(rng, 3.0);
      const auto l = create_classes_3d(p, splits);
      const auto e = oracle::classes_3d(p, splits);
      for (int j = 0; j < kNumJoints && n3 < 10000; ++j) {
        if (!e[j]) continue;
        if (l.labels[j] != *e[j]) return fail(cat("3D splits ", splits, " joint ", j));
        ++n3;
      }
    }
    compared += n2 + n3;
  }
  return pass(cat(compared, " joints match (2D and 3D, splits 2-5)"));
}

Outcome relation_properties() {
  torch::manual_seed(102);
  for (int b = 0; b < 1000; ++b) {
    const int classes = b % 2 ? 16 : 27;
    // few effective classes so that blocks are non-trivial
    const auto logits = torch::randn({4, classes, 21}) * (b % 3 + 1);
    const auto m = rel::relations_function(logits).to(torch::kLong);
    if (!m.diagonal(0, 1, 2).eq(1).all().item<bool>()) return fail(cat("batch ", b, " not reflexive"));
    if (!m.equal(m.transpose(1, 2))) return fail(cat("batch ", b, " not symmetric"));
    const auto two_hop = torch::matmul(m, m).gt(0).to(torch::kLong);
    if ((two_hop * (1 - m)).sum().item<int64_t>() != 0) return fail(cat("batch ", b, " not transitive"));
  }
  return pass("1000 batches reflexive, symmetric, transitive");
}

Outcome ann_properties() {
  torch::manual_seed(103);
  const auto pose = torch::randn({1000, 21, 3}, kD) * 0.3;
  const auto lo = torch::tensor(0.02, kD), hi = torch::tensor(0.05, kD);
  const auto a = rel::ann_adjacency(pose, lo);
  if (!a.equal(a.transpose(1, 2))) return fail("not symmetric");
  // dyadic offsets keep coordinate differences exact
  const auto shift = torch::tensor({0.25, -0.5, 1.0}, kD).view({1, 1, 3});
  if (!rel::ann_adjacency(pose + shift, lo).equal(a)) return fail("not translation invariant");
  if (!(rel::ann_adjacency(pose, hi) >= a).all().item<bool>()) return fail("not monotone in theta");
  if (rel::ann_adjacency(pose, torch::tensor(-1e-12, kD)).sum().item<double>() != 0)
    return fail("negative theta is not the zero matrix");
  return pass("1000 poses: symmetric, translation invariant, monotone; theta<0 -> 0");
}

Outcome adjacency_normalization() {
  double worst = 0;
  worst = std::max(worst, std::abs(graph::normalize_adjacency(torch::zeros({1, 1}, kD)).item<double>() - 1.0));
  const auto edge = graph::normalize_adjacency(torch::tensor({{0.0, 1.0}, {1.0, 0.0}}, kD));
  worst = std::max(worst, (edge - 0.5).abs().max().item<double>());
  for (int n : {2, 5, 21}) {
    const auto full = graph::normalize_adjacency(torch::ones({n, n}, kD) - torch::eye(n, kD));
    worst = std::max(worst, (full - 1.0 / n).abs().max().item<double>());
  }
  if (worst > 1e-12) return fail(cat("closed-form error ", worst));
  torch::manual_seed(104);
  double lo = 1, hi = -1;
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + t % 20;
    auto a = (torch::rand({n, n}, kD) < (0.1 + 0.8 * (t % 7) / 6.0)).to(torch::kDouble).triu(1);
    a = a + a.transpose(0, 1);
    const auto norm = graph::normalize_adjacency(a);
    if (!norm.equal(norm.transpose(0, 1))) return fail("output not symmetric");
    const auto ev = torch::linalg_eigvalsh(norm, "L");
    lo = std::min(lo, ev.min().item<double>());
    hi = std::max(hi, ev.max().item<double>());
  }
  return check(lo >= -1 - 1e-9 && hi <= 1 + 1e-9,
               cat("closed forms within ", worst, "; spectrum [", lo, ", ", hi, "] on 200 graphs"));
}

Outcome gradient_checks() {
  torch::manual_seed(105);
  double worst = 0;
  graph::DualBranchLayer layer(5, 4);
  layer->to(torch::kDouble);
  auto adj = (torch::eye(21, kD) + 0.1 * torch::randn({21, 21}, kD)).requires_grad_(true);
  const auto r = (torch::rand({3, 21, 21}, kD) < 0.3).to(torch::kDouble);
  auto h = torch::randn({3, 21, 5}, kD).requires_grad_(true);
  auto f = [&] { return layer->forward(h, adj, r).sum(); };
  for (auto* x : {&layer->weight_global(), &layer->weight_relation(), &adj, &h})
    worst = std::max(worst, oracle::gradient_error(f, *x));
  const double dual = worst;

  ModelConfig c;
  c.backbone.input_size = 32;
  c.quantizer.image_size = 32;
  c.backbone.widths = {2, 2, 2, 2, 2};
  c.classifier_hidden = 4;
  c.regressor_hidden = 4;
  c.variant = ModelVariant::from_name("B");
  HandPoseNet net(c);
  net->to(torch::kDouble);
  net->eval();
  oracle::generic_weights(*net->backbone);
  const auto images = torch::rand({2, 3, 32, 32}, kD);
  const auto gt2 = torch::rand({2, 21, 2}, kD), gt3 = torch::randn({2, 21, 3}, kD);
  const auto l2 = torch::randint(0, 16, {2, 21}, torch::kLong), l3 = torch::randint(0, 27, {2, 21}, torch::kLong);
  auto loss = [&] {
    const auto o = net->forward_coarse(images);
    return coarse_loss({regression_loss(o.pose_2d, gt2), regression_loss(o.pose_3d_coarse, gt3),
                        classification_loss(o.logits_2d, l2), classification_loss(o.logits_3d, l3)});
  };
  double model_worst = 0;
  std::size_t tensors = 0;
  for (const auto& p : net->named_parameters()) {
    if (p.key().rfind("backbone.", 0) == 0 && p.key().find("head") == std::string::npos) continue;
    model_worst = std::max(model_worst, oracle::gradient_error(loss, p.value(), 1e-6, 40));
    ++tensors;
  }
  return check(dual < 1e-4 && model_worst < 1e-4,
               cat("dual-branch rel err ", dual, "; coarse loss rel err ", model_worst, " over ", tensors,
                   " tensors"));
}

Outcome shape_contract() {
  torch::NoGradGuard ng;
  Backbone backbone{BackboneConfig{}};
  backbone->eval();
  const auto f = backbone->forward(torch::rand({2, 3, 256, 256}));
  if (f.sizes() != torch::IntArrayRef({2, 21, 64})) return fail(cat("backbone output ", f.sizes()));
  ModelConfig c;
  HandPoseNet net(c);
  const auto params = net->named_parameters();
  const int64_t w2 = params["regressor_2d.layer1.weight_global"].size(0);
  const int64_t w3 = params["regressor_3d.layer1.weight_global"].size(0);
  const bool ok = c.regressor_2d_input_width() == 80 && c.regressor_3d_input_width() == 109 && w2 == 80 && w3 == 109;
  return check(ok, cat("backbone (2, 21, 64); regressor input widths ", w2, " / ", w3));
}

Outcome overfit_run() {
  const fs::path cfg_file = fs::path(HANDGCN_SOURCE_DIR) / "configs" / "synth_overfit.cfg";
  const auto config = TrainConfig::from_file(cfg_file);
  SynthOptions opt;
  opt.image_size = config.image_size;
  opt.quantizer.splits_2d = config.splits_2d;
  opt.quantizer.splits_3d = config.splits_3d;
  const InMemorySource data(synth_dataset(config.synth_samples, config.seed, opt));
  const fs::path dir = g_out / "overfit";
  fs::remove_all(dir);
  fs::create_directories(dir);
  train(config, data, {dir / "coarse.pt", dir / "coarse.csv", false});
  auto model = load_model(dir / "coarse.pt");
  const auto m = evaluate(model, data);
  const double epe = m["epe_3d_coarse_normalized"].get<double>();

  auto rcfg = config;
  rcfg.stage = Stage::Refinement;
  rcfg.coarse_checkpoint = (dir / "coarse.pt").string();
  const auto r = train(rcfg, data, {dir / "refine.pt", dir / "refine.csv", false});
  return check(epe < 1e-2 && r.refined_loss_after <= r.coarse_equivalent_loss,
               cat("coarse EPE ", epe, " (< 0.01) after ", config.steps, " steps; refinement loss ",
                   r.coarse_equivalent_loss, " -> ", r.refined_loss_after));
}

Outcome loss_arithmetic() {
  auto s = [](double v) { return torch::tensor(v, kD); };
  const double combo = coarse_loss({s(0.01), s(0.01), s(0.5), s(0.5)}).item<double>();
  const double weights = coarse_loss({s(0.3), s(0.7), s(2.0), s(5.0)}).item<double>();
  const double ce = classification_loss(torch::zeros({2, 16, 21}, kD), torch::zeros({2, 21}, torch::kLong)).item<double>();
  const double ce27 = classification_loss(torch::zeros({2, 27, 21}, kD), torch::ones({2, 21}, torch::kLong)).item<double>();
  const bool ok = std::abs(combo - 3.0) <= 1e-12 && std::abs(weights - (100.0 * 1.0 + 7.0)) <= 1e-12 &&
                  std::abs(ce - 21 * std::log(16.0)) <= 1e-9 && std::abs(ce27 - 21 * std::log(27.0)) <= 1e-9;
  return check(ok, cat("combined ", combo, " (3.0); uniform CE ", ce, " (21 ln 16 = ", 21 * std::log(16.0), ")"));
}

Outcome metrics() {
  HandPose3D gt, pred;
  for (auto& j : pred) j = {3, 4, 0};
  const double e = eval::epe(pred, gt);
  const double all = eval::pck_auc(std::vector<double>(2100, 5.0)).auc;
  const double none = eval::pck_auc(std::vector<double>(2100, 100.0)).auc;
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> u(20, 50);
  std::vector<double> errs(10000);
  for (auto& x : errs) x = u(rng);
  const double half = eval::pck_auc(errs).auc;
  return check(e == 5.0 && all == 1.0 && none == 0.0 && std::abs(half - 0.5) <= 0.02,
               cat("EPE ", e, "; AUC all-correct ", all, ", none-correct ", none, ", uniform ", half));
}

Outcome ablation() {
  cli::Options o;
  o.config = fs::path(HANDGCN_SOURCE_DIR) / "configs" / "synth_overfit.cfg";
  o.out = g_out / "ablation";
  const auto r = cli::cmd_ablate(o);
  const std::vector<std::string> names{"A", "B", "C", "D", "Full"};
  if (r.rows.size() != 5) return fail(cat(r.rows.size(), " rows"));
  std::ostringstream table;
  for (std::size_t i = 0; i < 5; ++i) {
    if (r.rows[i].variant != names[i]) return fail("unexpected variant " + r.rows[i].variant);
    table << (i ? ", " : "") << names[i] << "=" << std::setprecision(4) << r.rows[i].epe_3d_normalized;
  }
  const double b = r.rows[1].epe_3d_normalized, full = r.rows[4].epe_3d_normalized;
  return check(full <= b, cat("EPE ", table.str(), "; Full <= B"));
}

Outcome rhd_counts() {
  const char* env = std::getenv("HANDGCN_RHD_ROOT");
  if (!env || !*env || !fs::exists(fs::path(env) / "training" / "anno_training.pickle")) {
    return {Outcome::Skip, "set HANDGCN_RHD_ROOT to an RHD copy to run"};
  }
  QuantizerConfig q;
  RhdSource train_src(env, Split::Train, q), test_src(env, Split::Test, q);
  if (train_src.size() != kRhdTrainCount || test_src.size() != kRhdTestCount) {
    return fail(cat("split sizes ", train_src.size(), " / ", test_src.size()));
  }
  for (const SampleSource* src : {static_cast<const SampleSource*>(&train_src), static_cast<const SampleSource*>(&test_src)}) {
    for (std::size_t i = 0; i < src->size(); ++i) {
      const auto why = check_sample(src->get(i), q);
      if (!why.empty()) return fail(cat("sample ", i, ": ", why));
    }
  }
  return pass(cat("split ", kRhdTrainCount, " / ", kRhdTestCount, "; all samples valid"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  app.add_option("--out", out, "scratch directory for training runs");
  CLI11_PARSE(app, argc, argv);
  g_out = out;
  fs::create_directories(g_out);
  torch::set_num_threads(1);

  const std::vector<Criterion> criteria{
      {1, "quantizer oracle equivalence", 5, quantizer_oracle},
      {2, "relation properties", 5, relation_properties},
      {3, "ANN properties", 5, ann_properties},
      {4, "adjacency normalization", 5, adjacency_normalization},
      {5, "gradient checks", 60, gradient_checks},
      {6, "shape contract", 10, shape_contract},
      {7, "overfit run", 900, overfit_run},
      {8, "loss arithmetic", 1, loss_arithmetic},
      {9, "metrics", 5, metrics},
      {10, "ablation harness", 3600, ablation},
      {11, "RHD split and invariants", 3600, rhd_counts},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.kind != Outcome::Skip && secs > c.budget_s) {
      o = fail(cat(o.detail, "; over the ", c.budget_s, " s budget"));
    }
    const char* tag = o.kind == Outcome::Pass ? "PASS" : o.kind == Outcome::Fail ? "FAIL" : "SKIP";
    failures += o.kind == Outcome::Fail;
    std::cout << tag << "  " << std::setw(2) << c.id << "  " << c.name << "  [" << std::fixed
              << std::setprecision(1) << secs << " s]  " << o.detail << std::defaultfloat << std::endl;
  }
  return failures ? 1 : 0;
}
