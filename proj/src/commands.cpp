#include "handgcn/commands.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <iomanip>
#include <ostream>

#include "handgcn/errors.hpp"
#include "handgcn/evalkit.hpp"
#include "handgcn/render.hpp"

namespace handgcn::cli {

namespace fs = std::filesystem;

TrainConfig resolve_config(const Options& options) {
  TrainConfig c = options.config.empty() ? TrainConfig{} : TrainConfig::from_file(options.config);
  if (options.seed) c.seed = *options.seed;
  if (options.stage) c.stage = stage_from_string(*options.stage);
  if (options.variant) c.variant = ModelVariant::from_name(*options.variant).name();
  if (options.steps) c.steps = *options.steps;
  c.validate();
  return c;
}

namespace {

constexpr std::uint64_t kSynthTestSeedOffset = 0x5EED5EED;

QuantizerConfig quantizer_of(const TrainConfig& c) { return model_config_for(c).quantizer; }

std::string run_hash(const Options& options, const TrainConfig& config) {
  return config_hash(config.to_text() + "dataset = " + options.dataset + "\n");
}

void say(const Options& options, const std::string& line) {
  if (options.log) *options.log << line << std::endl;
}

StepCallback progress(const Options& options, const std::string& label) {
  if (!options.log) return {};
  return [&options, label](std::int64_t step, double loss) {
    if ((step + 1) % 100 == 0) {
      *options.log << label << " step " << (step + 1) << " loss " << loss << std::endl;
    }
  };
}

void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file);
  if (!out) throw LoadError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

}  // namespace

std::unique_ptr<SampleSource> open_source(const Options& options, const TrainConfig& config, Split split) {
  const auto quantizer = quantizer_of(config);
  if (options.dataset == "synth") {
    SynthOptions synth;
    synth.image_size = config.image_size;
    synth.quantizer = quantizer;
    const std::uint64_t seed = split == Split::Train ? config.seed : config.seed + kSynthTestSeedOffset;
    return std::make_unique<InMemorySource>(synth_dataset(config.synth_samples, seed, synth));
  }
  if (options.dataset != "rhd" && options.dataset != "stb") {
    throw ConfigError("unknown dataset '" + options.dataset + "' (expected synth, rhd or stb)");
  }
  if (options.data_root.empty()) throw ConfigError("--data-root is required for dataset " + options.dataset);

  const std::string split_name = split == Split::Train ? "train" : "test";
  const std::string key = config_hash(options.dataset + "|" + split_name + "|" +
                                      std::to_string(quantizer.image_size) + "|" +
                                      std::to_string(quantizer.splits_2d) + "|" +
                                      std::to_string(quantizer.splits_3d) + "|" +
                                      fs::absolute(options.data_root).string() + "|blob-v1");
  const fs::path cache_root = options.cache_dir.empty() ? default_cache_dir() : options.cache_dir;
  auto cache = std::make_unique<SampleCache>(cache_root, options.dataset + "-" + split_name, key);
  if (!cache->complete()) {
    say(options, "preprocessing " + options.dataset + "/" + split_name + " into " + cache->directory().string());
    if (options.dataset == "rhd") cache->fill(RhdSource(options.data_root, split, quantizer));
    else cache->fill(StbSource(options.data_root, split, quantizer));
  }
  return cache;
}

OutputLock::OutputLock(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto file = out_dir / ".handgcn.lock";
  fd_ = ::open(file.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd_ < 0) throw ConfigError("cannot create lock file " + file.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError("output directory " + out_dir.string() + " is in use by another process");
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------------------------------------------------------

TrainOutputs cmd_train(const Options& options) {
  TrainConfig config = resolve_config(options);
  if (config.stage == Stage::Refinement) {
    if (!options.checkpoint.empty()) config.coarse_checkpoint = fs::absolute(options.checkpoint).string();
    if (config.coarse_checkpoint.empty()) {
      throw ConfigError("train --stage refinement requires --checkpoint <coarse checkpoint>");
    }
  } else if (!options.checkpoint.empty()) {
    throw ConfigError("--checkpoint is only used by the refinement stage");
  }
  OutputLock lock(options.out);
  const auto data = open_source(options, config, Split::Train);
  const std::string tag = to_string(config.stage) + "-" + config.variant + "-" + run_hash(options, config);
  TrainOutputs out;
  out.checkpoint = options.out / ("checkpoint-" + tag + ".pt");
  out.loss_csv = options.out / ("loss-" + tag + ".csv");
  say(options, "training " + tag + " on " + std::to_string(data->size()) + " samples");
  out.result = train(config, *data, {out.checkpoint, out.loss_csv, true}, progress(options, tag));
  say(options, "checkpoint: " + out.checkpoint.string());
  say(options, "loss curve: " + out.loss_csv.string());
  return out;
}

EvalOutputs cmd_eval(const Options& options) {
  if (options.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  CheckpointMeta meta;
  HandPoseNet model = load_model(options.checkpoint, &meta);
  TrainConfig config = meta.train;
  if (!options.config.empty()) {
    config = resolve_config(options);
    require_same_config(model_config_for(config), meta.model);
  } else if (options.seed) {
    config.seed = *options.seed;
  }
  OutputLock lock(options.out);
  const auto data = open_source(options, config, split_from_string(options.split));
  EvalOutputs out;
  out.metrics = evaluate(model, *data);
  out.metrics["checkpoint"] = fs::absolute(options.checkpoint).string();
  out.metrics["dataset"] = options.dataset;
  out.metrics["split"] = options.split;
  const std::string tag = meta.model.variant.name() + "-" +
                          config_hash(run_hash(options, config) + options.split + meta.train.to_text());
  out.metrics_json = options.out / ("metrics-" + tag + ".json");
  out.pck_csv = options.out / ("pck-" + tag + ".csv");
  out.pck_png = options.out / ("pck-" + tag + ".png");
  write_json(out.metrics_json, out.metrics);
  eval::PckCurve curve{out.metrics["pck"]["thresholds"].get<std::vector<double>>(),
                       out.metrics["pck"]["pck"].get<std::vector<double>>()};
  eval::write_pck_csv(out.pck_csv, curve);
  render::write_png(out.pck_png, render::plot_pck(curve));
  say(options, out.metrics.dump(2));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_json(const torch::Tensor& m) {
  nlohmann::json rows = nlohmann::json::array();
  const auto c = m.detach().to(torch::kInt64).contiguous();
  for (int i = 0; i < kNumJoints; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < kNumJoints; ++j) row.push_back(c[i][j].item<std::int64_t>());
    rows.push_back(row);
  }
  return rows;
}

template <typename Pose>
nlohmann::json pose_json(const Pose& p) {
  return to_json(p);
}

}  // namespace

InspectOutputs cmd_inspect(const Options& options) {
  if (options.checkpoint.empty()) throw ConfigError("inspect requires --checkpoint");
  CheckpointMeta meta;
  HandPoseNet model = load_model(options.checkpoint, &meta);
  TrainConfig config = meta.train;
  if (options.seed) config.seed = *options.seed;
  OutputLock lock(options.out);
  const auto data = open_source(options, config, split_from_string(options.split));
  if (options.index >= data->size()) {
    throw ConfigError("sample index " + std::to_string(options.index) + " out of range (" +
                      std::to_string(data->size()) + " samples)");
  }
  const Sample sample = data->get(options.index);
  const std::vector<Sample> one{sample};

  torch::NoGradGuard guard;
  model->eval();
  const auto out = model->forward(collate(one).images);
  const double size = meta.model.backbone.input_size;
  const auto zeros = torch::zeros({kNumJoints, kNumJoints});
  auto first = [&](const torch::Tensor& t) { return t.defined() ? t[0] : zeros; };
  const auto r2d = first(out.relations_2d), r3d = first(out.relations_3d), rref = first(out.relations_refine);
  const HandPose2D pred_2d = pose2d_from_tensor(out.pose_2d[0] * size);
  const HandPose3D coarse = pose3d_from_tensor(out.pose_3d_coarse[0]);
  const HandPose3D refined = out.pose_3d_refined.defined() ? pose3d_from_tensor(out.pose_3d_refined[0]) : coarse;

  const std::string tag = "inspect-" + meta.model.variant.name() + "-" +
                          config_hash(run_hash(options, config) + options.split + std::to_string(options.index));
  InspectOutputs result;
  auto emit = [&](const std::string& name, const cv::Mat& image) {
    const auto file = options.out / (tag + "-" + name + ".png");
    render::write_png(file, image);
    result.images.push_back(file);
  };
  const cv::Mat overlay = render::draw_skeleton_2d(
      render::draw_skeleton_2d(sample.image, sample.pose_2d_px, cv::Scalar(60, 220, 60)), pred_2d,
      cv::Scalar(240, 60, 60));
  emit("1_input", sample.image);
  emit("2_relations_2d", render::relation_heatmap(r2d));
  emit("3_pose_2d", overlay);
  emit("4_relations_3d", render::relation_heatmap(r3d));
  emit("5_coarse_3d", render::plot_skeleton_3d(coarse));
  emit("6_relations_refine", render::relation_heatmap(rref));
  emit("7_refined_3d", render::plot_skeleton_3d(refined));
  emit("8_gt_3d", render::plot_skeleton_3d(sample.pose_3d_norm));

  nlohmann::json j{
      {"sample", sample.meta.source},
      {"variant", meta.model.variant.name()},
      {"refinement", to_string(meta.model.variant.refinement)},
      {"relations_2d", matrix_json(r2d)},
      {"relations_3d", matrix_json(r3d)},
      {"relations_refine", matrix_json(rref)},
      {"pose_2d_pred_px", pose_json(pred_2d)},
      {"pose_2d_gt_px", pose_json(sample.pose_2d_px)},
      {"pose_3d_coarse", pose_json(coarse)},
      {"pose_3d_refined", pose_json(refined)},
      {"pose_3d_gt", pose_json(sample.pose_3d_norm)},
  };
  if (meta.model.variant.refinement == RefinementMode::Ann) j["theta"] = model->theta().item<double>();
  result.json = options.out / (tag + ".json");
  write_json(result.json, j);
  for (const auto& f : result.images) say(options, f.string());
  say(options, result.json.string());
  return result;
}

// ---------------------------------------------------------------------------

AblateOutputs cmd_ablate(const Options& options) {
  const TrainConfig base = resolve_config(options);
  OutputLock lock(options.out);
  const auto data = open_source(options, base, Split::Train);
  const std::string hash = run_hash(options, base);
  const fs::path dir = options.out / ("ablation-" + hash);
  fs::create_directories(dir);

  auto row_of = [](const std::string& variant, const nlohmann::json& m) {
    return AblationRow{variant, m["epe_3d_normalized"].get<double>(), m["epe_3d_mm"].get<double>(),
                       m["auc"].get<double>(), m["epe_2d_px"].get<double>()};
  };
  auto run = [&](const std::string& variant, Stage stage, const fs::path& coarse) {
    TrainConfig c = base;
    c.variant = variant;
    c.stage = stage;
    c.coarse_checkpoint = coarse.empty() ? "" : coarse.string();
    const std::string tag = to_string(stage) + "-" + variant;
    const fs::path ckpt = dir / ("checkpoint-" + tag + ".pt");
    say(options, "ablation: training " + tag);
    train(c, *data, {ckpt, dir / ("loss-" + tag + ".csv"), true}, progress(options, tag));
    return ckpt;
  };
  auto measure = [&](const std::string& variant, const fs::path& ckpt) {
    HandPoseNet model = load_model(ckpt);
    const auto m = evaluate(model, *data);
    write_json(dir / ("metrics-" + variant + ".json"), m);
    say(options, "ablation: " + variant + " epe_3d_normalized " + std::to_string(m["epe_3d_normalized"].get<double>()));
    return row_of(variant, m);
  };

  AblateOutputs out;
  out.rows.push_back(measure("A", run("A", Stage::Coarse, {})));
  // B, C, D and Full share one coarse network: with a fixed seed their coarse
  // stages are the same computation, so it is trained once.
  const fs::path coarse_b = run("B", Stage::Coarse, {});
  out.rows.push_back(measure("B", coarse_b));
  for (const char* v : {"C", "D", "Full"}) out.rows.push_back(measure(v, run(v, Stage::Refinement, coarse_b)));

  out.csv = options.out / ("ablation-" + hash + ".csv");
  std::ofstream csv(out.csv);
  if (!csv) throw LoadError("cannot write " + out.csv.string());
  csv << "variant,epe_3d_normalized,epe_3d_mm,auc,epe_2d_px\n" << std::setprecision(10);
  for (const auto& r : out.rows) {
    csv << r.variant << ',' << r.epe_3d_normalized << ',' << r.epe_3d_mm << ',' << r.auc << ',' << r.epe_2d_px << '\n';
  }
  say(options, "ablation table: " + out.csv.string());
  return out;
}

}  // namespace handgcn::cli
