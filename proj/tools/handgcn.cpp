// Command-line entry point: train, eval, inspect, ablate.

#include <iostream>

#include <CLI11.hpp>

#include "handgcn/commands.hpp"
#include "handgcn/errors.hpp"

namespace {

void add_common(CLI::App* cmd, handgcn::cli::Options& o) {
  cmd->add_option("--dataset", o.dataset, "synth, rhd or stb")->check(CLI::IsMember({"synth", "rhd", "stb"}));
  cmd->add_option("--data-root", o.data_root, "dataset root directory");
  cmd->add_option("--config", o.config, "key = value training config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--cache-dir", o.cache_dir, "preprocessed sample cache");
  cmd->add_option("--seed", o.seed, "random seed override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand pose estimation with classification-guided graph networks"};
  app.require_subcommand(1);
  handgcn::cli::Options o;
  o.log = &std::cerr;

  auto* train = app.add_subcommand("train", "train the coarse or refinement stage");
  add_common(train, o);
  train->add_option("--stage", o.stage, "coarse or refinement");
  train->add_option("--variant", o.variant, "A, B, C, D or Full");
  train->add_option("--steps", o.steps, "number of optimizer steps (overrides epochs)");
  train->add_option("--checkpoint", o.checkpoint, "coarse checkpoint (refinement stage)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--split", o.split, "train or test");

  auto* inspect = app.add_subcommand("inspect", "render every intermediate output for one sample");
  add_common(inspect, o);
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint to run")->required();
  inspect->add_option("--split", o.split, "train or test");
  inspect->add_option("--index", o.index, "sample index");

  auto* ablate = app.add_subcommand("ablate", "train and compare variants A, B, C, D and Full");
  add_common(ablate, o);
  ablate->add_option("--steps", o.steps, "optimizer steps per stage");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) handgcn::cli::cmd_train(o);
    else if (*eval) handgcn::cli::cmd_eval(o);
    else if (*inspect) handgcn::cli::cmd_inspect(o);
    else if (*ablate) {
      const auto result = handgcn::cli::cmd_ablate(o);
      for (const auto& r : result.rows) {
        std::cout << r.variant << " epe_3d_normalized=" << r.epe_3d_normalized << " auc=" << r.auc << '\n';
      }
    }
  } catch (const handgcn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
