#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <unistd.h>

#include "handgcn/commands.hpp"
#include "handgcn/errors.hpp"

using namespace handgcn;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  fs::path config;
  Workspace() {
    dir = fs::temp_directory_path() / ("handgcn_test_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "tiny.cfg";
    std::ofstream(config) << "synth_samples = 4\nimage_size = 64\nbatch_size = 4\nsteps = 3\nseed = 5\n";
  }
  ~Workspace() { fs::remove_all(dir); }

  cli::Options options(const std::string& out) const {
    cli::Options o;
    o.config = config;
    o.out = dir / out;
    return o;
  }
};

nlohmann::json read_json(const fs::path& f) {
  std::ifstream in(f);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("resolve_config applies overrides") {
  Workspace ws;
  auto o = ws.options("x");
  o.steps = 9;
  o.seed = 77;
  o.variant = "C";
  o.stage = "refinement";
  const auto c = cli::resolve_config(o);
  CHECK(c.steps == 9);
  CHECK(c.seed == 77);
  CHECK(c.variant == "C");
  CHECK(c.stage == Stage::Refinement);
  CHECK(c.image_size == 64);
  o.variant = "nope";
  CHECK_THROWS_AS(cli::resolve_config(o), ConfigError);
}

TEST_CASE("train, eval and inspect on generated hands") {
  Workspace ws;
  auto o = ws.options("run");
  const auto coarse = cli::cmd_train(o);
  CHECK(fs::exists(coarse.checkpoint));
  CHECK(fs::exists(coarse.loss_csv));
  CHECK(coarse.checkpoint.filename().string().rfind("checkpoint-coarse-Full-", 0) == 0);

  // same seed, same losses
  auto again = ws.options("run2");
  CHECK(cli::cmd_train(again).result.final_loss == coarse.result.final_loss);

  auto r = ws.options("run");
  r.stage = "refinement";
  CHECK_THROWS_AS(cli::cmd_train(r), ConfigError);
  r.checkpoint = coarse.checkpoint;
  const auto refined = cli::cmd_train(r);
  CHECK(refined.checkpoint != coarse.checkpoint);
  CHECK(refined.result.refined_loss_after <= refined.result.coarse_equivalent_loss);

  auto bad = ws.options("run");
  bad.checkpoint = coarse.checkpoint;
  CHECK_THROWS_AS(cli::cmd_train(bad), ConfigError);

  auto e = ws.options("run");
  e.checkpoint = refined.checkpoint;
  const auto ev = cli::cmd_eval(e);
  CHECK(fs::exists(ev.metrics_json));
  CHECK(fs::exists(ev.pck_csv));
  CHECK(fs::exists(ev.pck_png));
  const auto m = read_json(ev.metrics_json);
  CHECK(m["auc"].get<double>() >= 0.0);
  CHECK(m["auc"].get<double>() <= 1.0);
  CHECK(m["classification"]["2d"].contains("accuracy"));
  CHECK(m["classification"]["3d"].contains("precision"));
  e.split = "test";
  CHECK(cli::cmd_eval(e).metrics_json != ev.metrics_json);

  auto i = ws.options("inspect");
  i.checkpoint = refined.checkpoint;
  i.index = 2;
  const auto in = cli::cmd_inspect(i);
  REQUIRE(in.images.size() == 8);
  for (const auto& f : in.images) CHECK_FALSE(cv::imread(f.string()).empty());
  const auto j = read_json(in.json);
  for (const char* k : {"relations_2d", "relations_3d", "relations_refine"}) {
    REQUIRE(j[k].size() == 21);
    for (int a = 0; a < 21; ++a) {
      REQUIRE(j[k][a].size() == 21);
      for (int b = 0; b < 21; ++b) {
        const int v = j[k][a][b].get<int>();
        CHECK((v == 0 || v == 1));
      }
    }
  }
  for (int a = 0; a < 21; ++a) CHECK(j["relations_refine"][a][a].get<int>() == 1);
  CHECK(j["theta"].get<double>() > 0);
  CHECK(fs::is_empty(ws.dir / "inspect") == false);

  auto mismatch = ws.options("run");
  mismatch.checkpoint = refined.checkpoint;
  std::ofstream(ws.dir / "other.cfg") << "synth_samples = 4\nimage_size = 96\n";
  mismatch.config = ws.dir / "other.cfg";
  CHECK_THROWS_AS(cli::cmd_eval(mismatch), ConfigError);
}

TEST_CASE("output directory lock") {
  Workspace ws;
  cli::OutputLock first(ws.dir / "locked");
  CHECK(fs::exists(ws.dir / "locked"));
  CHECK_THROWS(cli::OutputLock(ws.dir / "locked"));
}

TEST_CASE("ablation writes five rows") {
  Workspace ws;
  auto o = ws.options("ablate");
  const auto a = cli::cmd_ablate(o);
  REQUIRE(a.rows.size() == 5);
  const std::vector<std::string> names{"A", "B", "C", "D", "Full"};
  for (int k = 0; k < 5; ++k) CHECK(a.rows[k].variant == names[k]);
  std::ifstream in(a.csv);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 6);
  CHECK(a.csv.filename().string().rfind("ablation-", 0) == 0);
}

TEST_CASE("real datasets need a root") {
  Workspace ws;
  auto o = ws.options("rhd");
  o.dataset = "rhd";
  o.data_root = ws.dir / "nothing-here";
  o.cache_dir = ws.dir / "cache";
  CHECK_THROWS_AS(cli::cmd_train(o), LoadError);
}
