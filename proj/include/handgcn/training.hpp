#pragma once

// Two-stage training: the coarse stage fits backbone, classifiers and
// regressors; the refinement stage freezes them and fits the refinement head.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "handgcn/adadelta.hpp"
#include "handgcn/data.hpp"
#include "handgcn/losses.hpp"
#include "handgcn/posenet.hpp"

namespace handgcn {

enum class Stage { Coarse, Refinement };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

enum class LrSchedule { Constant, Cosine };

// Plain "key = value" text; '#' starts a comment. Unknown keys are errors.
struct TrainConfig {
  int epochs = 400;
  int batch_size = 64;
  std::int64_t steps = 0;  // > 0 overrides epochs
  std::uint64_t seed = 1234;
  Stage stage = Stage::Coarse;
  std::string variant = "Full";

  double lr = 1.0;
  double rho = 0.9;
  double eps = 1e-6;
  LrSchedule lr_schedule = LrSchedule::Constant;
  LossWeights loss_weights;

  int image_size = 256;
  int splits_2d = 4;
  int splits_3d = 3;

  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::string coarse_checkpoint;      // required by the refinement stage

  // Synthetic dataset size when training on generated hands.
  int synth_samples = 32;

  void validate() const;
  std::string to_text() const;  // canonical, round-trips through parse
  nlohmann::json to_json() const;

  static TrainConfig parse(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& file);
  // Applies one key/value; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
};

// Model configuration matching a training config.
ModelConfig model_config_for(const TrainConfig& config);

// Short stable hex digest used in output file names.
std::string config_hash(const std::string& text);

double learning_rate_at(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

// Sample order for an epoch; depends only on (seed, epoch, count).
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::size_t count);

// ---------------------------------------------------------------------------
// Checkpoints: a torch archive with every parameter and buffer by full name,
// optional optimizer state, the step counter and a JSON meta record.

inline constexpr const char* kCheckpointFormat = "handgcn-ckpt-v1";

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  Stage stage = Stage::Coarse;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
};

void save_checkpoint(const std::filesystem::path& file, HandPoseNet& model,
                     const CheckpointMeta& meta, const torch::optim::Optimizer* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

// Builds the model recorded in the checkpoint and loads all of its weights.
HandPoseNet load_model(const std::filesystem::path& file, CheckpointMeta* meta = nullptr);

// Loads all weights into an existing model whose configuration must equal
// the recorded one; restores optimizer state when given.
void load_checkpoint(const std::filesystem::path& file, HandPoseNet& model,
                     torch::optim::Optimizer* optimizer = nullptr, CheckpointMeta* meta = nullptr);

// Copies only coarse-stage weights. The recorded model must agree with
// `model` on everything except the refinement mode.
void load_coarse_weights(const std::filesystem::path& file, HandPoseNet& model);

// Throws ConfigError naming the first field where the two configs differ.
void require_same_config(const ModelConfig& expected, const ModelConfig& recorded,
                         bool ignore_refinement = false);

// Digest over every coarse-stage parameter and buffer value.
std::string coarse_state_digest(HandPoseNet& model);

// ---------------------------------------------------------------------------

struct TrainPaths {
  std::filesystem::path checkpoint;  // final checkpoint; periodic ones get a step suffix
  std::filesystem::path loss_csv;
  bool resume = true;                // continue from `checkpoint` when present
};

struct TrainResult {
  std::int64_t steps = 0;
  double final_loss = 0.0;
  // Refinement stage only: 3D L2 of the frozen coarse pose and of the refined
  // pose over the whole training set, before and after training.
  double coarse_equivalent_loss = 0.0;
  double refined_loss_before = 0.0;
  double refined_loss_after = 0.0;
};

using StepCallback = std::function<void(std::int64_t step, double loss)>;

TrainResult train(const TrainConfig& config, const SampleSource& data, const TrainPaths& paths,
                  const StepCallback& on_step = {});

// ---------------------------------------------------------------------------
// Inference over a source, batched, in eval mode.

struct Predictions {
  std::vector<HandPose2D> pose_2d_px;       // crop pixels
  std::vector<HandPose3D> pose_3d_coarse;   // normalized
  std::vector<HandPose3D> pose_3d_refined;  // normalized; empty without refinement
  std::vector<JointClassLabels> labels_2d;  // empty without classification
  std::vector<JointClassLabels> labels_3d;

  const std::vector<HandPose3D>& final_3d() const {
    return pose_3d_refined.empty() ? pose_3d_coarse : pose_3d_refined;
  }
};

Predictions predict(HandPoseNet& model, const SampleSource& data, int batch_size = 16);

// 2D EPE (crop px), 3D EPE (normalized and mm), PCK/AUC over 20-50 mm and
// per-space classification reports, as JSON.
nlohmann::json evaluate(HandPoseNet& model, const SampleSource& data, int batch_size = 16);

}  // namespace handgcn
