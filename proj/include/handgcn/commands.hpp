#pragma once

// Subcommand implementations behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handgcn/data.hpp"
#include "handgcn/datasets.hpp"
#include "handgcn/training.hpp"

namespace handgcn::cli {

struct Options {
  std::string dataset = "synth";  // synth | rhd | stb
  std::filesystem::path data_root;
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "out";
  std::filesystem::path cache_dir;  // empty: $HANDGCN_CACHE_DIR or ./.handgcn_cache
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stage;
  std::optional<std::string> variant;
  std::optional<std::int64_t> steps;
  std::string split = "train";
  std::size_t index = 0;  // inspect: sample index
  std::ostream* log = nullptr;
};

// Config file (or defaults) with command-line overrides applied.
TrainConfig resolve_config(const Options& options);

// Training-ready sample source for the configured dataset and split.
std::unique_ptr<SampleSource> open_source(const Options& options, const TrainConfig& config, Split split);

// Exclusive lock on <out>/.handgcn.lock; throws if another process holds it.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  int fd_ = -1;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  TrainResult result;
};
TrainOutputs cmd_train(const Options& options);

struct EvalOutputs {
  std::filesystem::path metrics_json;
  std::filesystem::path pck_csv;
  std::filesystem::path pck_png;
  nlohmann::json metrics;
};
EvalOutputs cmd_eval(const Options& options);

struct InspectOutputs {
  std::vector<std::filesystem::path> images;  // eight panels
  std::filesystem::path json;
};
InspectOutputs cmd_inspect(const Options& options);

struct AblationRow {
  std::string variant;
  double epe_3d_normalized = 0.0;
  double epe_3d_mm = 0.0;
  double auc = 0.0;
  double epe_2d_px = 0.0;
};
struct AblateOutputs {
  std::filesystem::path csv;
  std::vector<AblationRow> rows;  // A, B, C, D, Full
};
AblateOutputs cmd_ablate(const Options& options);

}  // namespace handgcn::cli
