#include "handgcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "handgcn/errors.hpp"
#include "handgcn/evalkit.hpp"

namespace handgcn {

namespace fs = std::filesystem;

std::string to_string(Stage stage) { return stage == Stage::Coarse ? "coarse" : "refinement"; }

Stage stage_from_string(const std::string& name) {
  if (name == "coarse") return Stage::Coarse;
  if (name == "refinement" || name == "refine") return Stage::Refinement;
  throw ConfigError("unknown stage '" + name + "' (expected coarse or refinement)");
}

// ---------------------------------------------------------------------------
// TrainConfig

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ConfigError(key + ": expected an integer, got '" + value + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return v;
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "stage") stage = stage_from_string(value);
  else if (key == "variant") variant = ModelVariant::from_name(value).name();
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "rho") rho = parse_double(key, value);
  else if (key == "eps") eps = parse_double(key, value);
  else if (key == "lr_schedule") {
    if (value == "constant" || value == "none") lr_schedule = LrSchedule::Constant;
    else if (value == "cosine") lr_schedule = LrSchedule::Cosine;
    else throw ConfigError("lr_schedule: expected constant or cosine, got '" + value + "'");
  } else if (key == "regression_weight") loss_weights.regression = parse_double(key, value);
  else if (key == "classification_weight") loss_weights.classification = parse_double(key, value);
  else if (key == "image_size") image_size = static_cast<int>(parse_int(key, value));
  else if (key == "splits_2d") splits_2d = static_cast<int>(parse_int(key, value));
  else if (key == "splits_3d") splits_3d = static_cast<int>(parse_int(key, value));
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key == "coarse_checkpoint") coarse_checkpoint = value;
  else if (key == "synth_samples") synth_samples = static_cast<int>(parse_int(key, value));
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(loss_weights.regression > 0.0) || !(loss_weights.classification > 0.0)) {
    throw ConfigError("loss weights must be positive");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (synth_samples <= 0) throw ConfigError("synth_samples must be positive");
  model_config_for(*this).validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream s;
  s << "epochs = " << epochs << '\n'
    << "batch_size = " << batch_size << '\n'
    << "steps = " << steps << '\n'
    << "seed = " << seed << '\n'
    << "stage = " << to_string(stage) << '\n'
    << "variant = " << variant << '\n'
    << "lr = " << format_double(lr) << '\n'
    << "rho = " << format_double(rho) << '\n'
    << "eps = " << format_double(eps) << '\n'
    << "lr_schedule = " << (lr_schedule == LrSchedule::Cosine ? "cosine" : "constant") << '\n'
    << "regression_weight = " << format_double(loss_weights.regression) << '\n'
    << "classification_weight = " << format_double(loss_weights.classification) << '\n'
    << "image_size = " << image_size << '\n'
    << "splits_2d = " << splits_2d << '\n'
    << "splits_3d = " << splits_3d << '\n'
    << "checkpoint_every = " << checkpoint_every << '\n'
    << "synth_samples = " << synth_samples << '\n';
  if (!coarse_checkpoint.empty()) s << "coarse_checkpoint = " << coarse_checkpoint << '\n';
  return s.str();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    j[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return j;
}

ModelConfig model_config_for(const TrainConfig& config) {
  ModelConfig m;
  m.backbone.input_size = config.image_size;
  m.quantizer.image_size = config.image_size;
  m.quantizer.splits_2d = config.splits_2d;
  m.quantizer.splits_3d = config.splits_3d;
  m.variant = ModelVariant::from_name(config.variant);
  return m;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str().substr(0, 10);
}

double learning_rate_at(const TrainConfig& config, std::int64_t step, std::int64_t total_steps) {
  if (config.lr_schedule == LrSchedule::Constant || total_steps <= 0) return config.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
  // Fisher-Yates with explicit modulo draws: std::shuffle's use of the
  // engine is implementation defined.
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  return {{"format", kCheckpointFormat},
          {"stage", to_string(meta.stage)},
          {"step", meta.step},
          {"total_steps", meta.total_steps},
          {"variant", meta.model.variant.name()},
          {"model", meta.model.to_json()},
          {"train", meta.train.to_text()}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j, const fs::path& file) {
  if (j.value("format", "") != kCheckpointFormat) {
    throw LoadError(file.string() + ": unsupported checkpoint format '" + j.value("format", "") + "'");
  }
  CheckpointMeta meta;
  meta.model = ModelConfig::from_json(j.at("model"));
  meta.train = TrainConfig::parse(j.at("train").get<std::string>());
  meta.stage = stage_from_string(j.at("stage").get<std::string>());
  meta.step = j.at("step").get<std::int64_t>();
  meta.total_steps = j.at("total_steps").get<std::int64_t>();
  return meta;
}

torch::serialize::InputArchive open_archive(const fs::path& file) {
  if (!fs::exists(file)) throw LoadError("checkpoint not found: " + file.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file.string());
  } catch (const c10::Error& e) {
    throw LoadError(file.string() + ": not a readable checkpoint");
  }
  return archive;
}

CheckpointMeta read_meta(torch::serialize::InputArchive& archive, const fs::path& file) {
  c10::IValue value;
  if (!archive.try_read("meta", value) || !value.isString()) {
    throw LoadError(file.string() + ": checkpoint has no meta record");
  }
  try {
    return meta_from_json(nlohmann::json::parse(value.toStringRef()), file);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(file.string() + ": malformed meta record: " + e.what());
  }
}

void copy_tensor(torch::serialize::InputArchive& archive, const std::string& key,
                 torch::Tensor& target, const fs::path& file) {
  torch::Tensor stored;
  if (!archive.try_read(key, stored)) throw LoadError(file.string() + ": missing " + key);
  if (stored.sizes() != target.sizes()) {
    throw LoadError(file.string() + ": " + key + " has a different shape than the model expects");
  }
  torch::NoGradGuard guard;
  target.copy_(stored);
}

void load_tensors(torch::serialize::InputArchive& archive, HandPoseNet& model, const fs::path& file,
                  bool coarse_only) {
  for (auto& item : model->named_parameters()) {
    if (coarse_only && HandPoseNetImpl::is_refinement_parameter(item.key())) continue;
    copy_tensor(archive, "param/" + item.key(), item.value(), file);
  }
  for (auto& item : model->named_buffers()) {
    if (coarse_only && HandPoseNetImpl::is_refinement_parameter(item.key())) continue;
    copy_tensor(archive, "buffer/" + item.key(), item.value(), file);
  }
}

}  // namespace

void save_checkpoint(const fs::path& file, HandPoseNet& model, const CheckpointMeta& meta,
                     const torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive archive;
  for (const auto& item : model->named_parameters()) archive.write("param/" + item.key(), item.value());
  for (const auto& item : model->named_buffers()) {
    archive.write("buffer/" + item.key(), item.value(), /*is_buffer=*/true);
  }
  archive.write("meta", c10::IValue(meta_to_json(meta).dump()));
  if (optimizer) {
    torch::serialize::OutputArchive state;
    optimizer->save(state);
    archive.write("optimizer", state);
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, file);
}

CheckpointMeta read_checkpoint_meta(const fs::path& file) {
  auto archive = open_archive(file);
  return read_meta(archive, file);
}

HandPoseNet load_model(const fs::path& file, CheckpointMeta* meta_out) {
  auto archive = open_archive(file);
  const auto meta = read_meta(archive, file);
  HandPoseNet model(meta.model);
  load_tensors(archive, model, file, false);
  if (meta_out) *meta_out = meta;
  return model;
}

void require_same_config(const ModelConfig& expected, const ModelConfig& recorded,
                         bool ignore_refinement) {
  ModelConfig a = expected, b = recorded;
  if (ignore_refinement) b.variant.refinement = a.variant.refinement;
  const auto fa = a.to_json().flatten();
  const auto fb = b.to_json().flatten();
  for (const auto& [key, value] : fa.items()) {
    if (!fb.contains(key) || fb.at(key) != value) {
      throw ConfigError("checkpoint schema mismatch at " + key + ": expected " + value.dump() +
                        ", checkpoint has " + (fb.contains(key) ? fb.at(key).dump() : "nothing"));
    }
  }
  if (fa.size() != fb.size()) throw ConfigError("checkpoint schema mismatch: differing field sets");
}

void load_checkpoint(const fs::path& file, HandPoseNet& model, torch::optim::Optimizer* optimizer,
                     CheckpointMeta* meta_out) {
  auto archive = open_archive(file);
  const auto meta = read_meta(archive, file);
  require_same_config(model->config(), meta.model);
  load_tensors(archive, model, file, false);
  if (optimizer) {
    torch::serialize::InputArchive state;
    if (!archive.try_read("optimizer", state)) {
      throw LoadError(file.string() + ": checkpoint has no optimizer state to resume from");
    }
    optimizer->load(state);
  }
  if (meta_out) *meta_out = meta;
}

void load_coarse_weights(const fs::path& file, HandPoseNet& model) {
  auto archive = open_archive(file);
  const auto meta = read_meta(archive, file);
  require_same_config(model->config(), meta.model, /*ignore_refinement=*/true);
  load_tensors(archive, model, file, true);
}

std::string coarse_state_digest(HandPoseNet& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto add = [&](const std::string& name, const torch::Tensor& t) {
    if (HandPoseNetImpl::is_refinement_parameter(name)) return;
    mix(name.data(), name.size());
    const auto c = t.detach().contiguous();
    mix(c.data_ptr(), c.numel() * c.element_size());
  };
  for (const auto& item : model->named_parameters()) add(item.key(), item.value());
  for (const auto& item : model->named_buffers()) add(item.key(), item.value());
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

class LossLog {
 public:
  // Keeps rows for steps before `start` when resuming, drops the rest.
  LossLog(const fs::path& file, const std::string& header, std::int64_t start) : file_(file) {
    std::vector<std::string> kept;
    if (start > 0 && fs::exists(file)) {
      std::ifstream in(file);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < start) kept.push_back(line);
      }
    }
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    out_.open(file, std::ios::trunc);
    if (!out_) throw LoadError("cannot write " + file.string());
    out_ << header << '\n';
    for (const auto& line : kept) out_ << line << '\n';
    out_ << std::setprecision(10);
  }

  void row(std::int64_t step, std::initializer_list<double> values) {
    out_ << step;
    for (double v : values) out_ << ',' << v;
    out_ << '\n';
    out_.flush();
  }

 private:
  fs::path file_;
  std::ofstream out_;
};

struct Schedule {
  std::int64_t steps_per_epoch;
  std::int64_t total;
  std::size_t batch;
};

// Partial trailing batches are dropped so batch statistics never see a
// single sample.
Schedule make_schedule(const TrainConfig& config, std::size_t count) {
  Schedule s;
  s.batch = std::min<std::size_t>(config.batch_size, count);
  s.steps_per_epoch = static_cast<std::int64_t>(count / s.batch);
  s.total = config.steps > 0 ? config.steps : config.epochs * s.steps_per_epoch;
  return s;
}

std::vector<std::size_t> batch_indices(const TrainConfig& config, const Schedule& schedule,
                                       std::size_t count, std::int64_t step,
                                       std::vector<std::size_t>& perm, std::int64_t& perm_epoch) {
  const std::int64_t epoch = step / schedule.steps_per_epoch;
  if (epoch != perm_epoch) {
    perm = epoch_permutation(config.seed, epoch, count);
    perm_epoch = epoch;
  }
  const auto first = static_cast<std::size_t>(step % schedule.steps_per_epoch) * schedule.batch;
  return {perm.begin() + first, perm.begin() + first + schedule.batch};
}

void set_lr(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);
}

fs::path periodic_path(const fs::path& file, std::int64_t step) {
  std::ostringstream name;
  name << file.stem().string() << "-step" << std::setw(7) << std::setfill('0') << step
       << file.extension().string();
  return file.parent_path() / name.str();
}

void abort_non_finite(std::int64_t step, double lr, const std::string& details) {
  std::ostringstream msg;
  msg << "non-finite loss at step " << step << " (lr " << lr << "): " << details;
  throw TrainingError(msg.str());
}

std::string describe(const CoarseLossTerms& t) {
  std::ostringstream s;
  s << "reg2d=" << t.regression_2d.item<double>() << " reg3d=" << t.regression_3d.item<double>()
    << " cls2d=" << t.classification_2d.item<double>()
    << " cls3d=" << t.classification_3d.item<double>();
  return s.str();
}

TrainResult train_coarse(const TrainConfig& config, const SampleSource& data, const TrainPaths& paths,
                         const StepCallback& on_step) {
  const ModelConfig model_config = model_config_for(config);
  HandPoseNet model(model_config);
  model->train();
  Adadelta optimizer(model->coarse_parameters(),
                     AdadeltaOptions(config.lr).rho(config.rho).eps(config.eps));

  const Schedule schedule = make_schedule(config, data.size());
  std::int64_t start = 0;
  if (paths.resume && fs::exists(paths.checkpoint)) {
    CheckpointMeta meta;
    load_checkpoint(paths.checkpoint, model, &optimizer, &meta);
    if (meta.stage != Stage::Coarse) throw TrainingError("cannot resume: checkpoint is not a coarse-stage one");
    start = meta.step;
  }

  LossLog log(paths.loss_csv, "step,regression_2d,regression_3d,classification_2d,classification_3d,total,lr",
              start);
  CheckpointMeta meta{model_config, config, Stage::Coarse, start, schedule.total};
  const auto zero = torch::zeros({});
  std::vector<std::size_t> perm;
  std::int64_t perm_epoch = -1;
  TrainResult result;

  for (std::int64_t step = start; step < schedule.total; ++step) {
    const auto indices = batch_indices(config, schedule, data.size(), step, perm, perm_epoch);
    const Batch batch = collate(data, indices);
    const double lr = learning_rate_at(config, step, schedule.total);
    set_lr(optimizer, lr);

    optimizer.zero_grad();
    const auto out = model->forward_coarse(batch.images);
    CoarseLossTerms terms{regression_loss(out.pose_2d, batch.pose_2d),
                          regression_loss(out.pose_3d_coarse, batch.pose_3d), zero, zero};
    if (model_config.variant.use_classification) {
      terms.classification_2d = classification_loss(out.logits_2d, batch.labels_2d);
      terms.classification_3d = classification_loss(out.logits_3d, batch.labels_3d);
    }
    const auto loss = coarse_loss(terms, config.loss_weights);
    const double value = loss.item<double>();
    log.row(step, {terms.regression_2d.item<double>(), terms.regression_3d.item<double>(),
                   terms.classification_2d.item<double>(), terms.classification_3d.item<double>(),
                   value, lr});
    if (!std::isfinite(value)) abort_non_finite(step, lr, describe(terms));
    loss.backward();
    optimizer.step();

    result.final_loss = value;
    if (on_step) on_step(step, value);
    meta.step = step + 1;
    if (config.checkpoint_every > 0 && meta.step % config.checkpoint_every == 0 &&
        meta.step < schedule.total) {
      save_checkpoint(periodic_path(paths.checkpoint, meta.step), model, meta, &optimizer);
    }
  }
  meta.step = std::max(start, schedule.total);
  save_checkpoint(paths.checkpoint, model, meta, &optimizer);
  result.steps = meta.step;
  return result;
}

// Coarse 3D poses of the frozen model for every sample, plus targets.
std::pair<torch::Tensor, torch::Tensor> frozen_coarse_poses(HandPoseNet& model, const SampleSource& data) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> coarse, target;
  constexpr std::size_t kChunk = 32;
  for (std::size_t first = 0; first < data.size(); first += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(data.size(), first + kChunk); ++i) idx.push_back(i);
    const Batch batch = collate(data, idx);
    coarse.push_back(model->forward_coarse(batch.images).pose_3d_coarse);
    target.push_back(batch.pose_3d);
  }
  return {torch::cat(coarse), torch::cat(target)};
}

double full_set_refinement_loss(HandPoseNet& model, const torch::Tensor& coarse, const torch::Tensor& target) {
  torch::NoGradGuard guard;
  return refinement_loss(model->refine(coarse, nullptr, relations::ThresholdMode::Hard), target)
      .item<double>();
}

TrainResult train_refinement(const TrainConfig& config, const SampleSource& data,
                             const TrainPaths& paths, const StepCallback& on_step) {
  if (config.coarse_checkpoint.empty()) {
    throw TrainingError("the refinement stage requires a coarse checkpoint (coarse_checkpoint / --checkpoint)");
  }
  if (!fs::exists(config.coarse_checkpoint)) {
    throw TrainingError("coarse checkpoint not found: " + config.coarse_checkpoint);
  }
  const ModelConfig model_config = model_config_for(config);
  if (model_config.variant.refinement == RefinementMode::None) {
    throw ConfigError("variant " + model_config.variant.name() + " has no refinement stage");
  }
  HandPoseNet model(model_config);
  load_coarse_weights(config.coarse_checkpoint, model);
  for (auto& p : model->coarse_parameters()) p.set_requires_grad(false);
  model->eval();

  Adadelta optimizer(model->refinement_parameters(),
                     AdadeltaOptions(config.lr).rho(config.rho).eps(config.eps));
  const Schedule schedule = make_schedule(config, data.size());
  std::int64_t start = 0;
  if (paths.resume && fs::exists(paths.checkpoint)) {
    CheckpointMeta meta;
    load_checkpoint(paths.checkpoint, model, &optimizer, &meta);
    if (meta.stage != Stage::Refinement) {
      throw TrainingError("cannot resume: checkpoint is not a refinement-stage one");
    }
    start = meta.step;
  }

  const auto [coarse, target] = frozen_coarse_poses(model, data);
  TrainResult result;
  result.coarse_equivalent_loss = regression_loss(coarse, target).item<double>();
  result.refined_loss_before = full_set_refinement_loss(model, coarse, target);

  LossLog log(paths.loss_csv, "step,refinement,lr", start);
  CheckpointMeta meta{model_config, config, Stage::Refinement, start, schedule.total};
  std::vector<std::size_t> perm;
  std::int64_t perm_epoch = -1;

  for (std::int64_t step = start; step < schedule.total; ++step) {
    const auto indices = batch_indices(config, schedule, data.size(), step, perm, perm_epoch);
    const auto idx = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()));
    const double lr = learning_rate_at(config, step, schedule.total);
    set_lr(optimizer, lr);

    optimizer.zero_grad();
    const auto refined = model->refine(coarse.index_select(0, idx), nullptr,
                                       relations::ThresholdMode::StraightThrough);
    const auto loss = refinement_loss(refined, target.index_select(0, idx));
    const double value = loss.item<double>();
    log.row(step, {value, lr});
    if (!std::isfinite(value)) abort_non_finite(step, lr, "refinement=" + std::to_string(value));
    loss.backward();
    optimizer.step();

    result.final_loss = value;
    if (on_step) on_step(step, value);
    meta.step = step + 1;
    if (config.checkpoint_every > 0 && meta.step % config.checkpoint_every == 0 &&
        meta.step < schedule.total) {
      save_checkpoint(periodic_path(paths.checkpoint, meta.step), model, meta, &optimizer);
    }
  }
  meta.step = std::max(start, schedule.total);
  save_checkpoint(paths.checkpoint, model, meta, &optimizer);
  result.refined_loss_after = full_set_refinement_loss(model, coarse, target);
  result.steps = meta.step;
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const SampleSource& data, const TrainPaths& paths,
                  const StepCallback& on_step) {
  config.validate();
  if (data.size() == 0) throw TrainingError("training set is empty");
  torch::manual_seed(config.seed);
  return config.stage == Stage::Coarse ? train_coarse(config, data, paths, on_step)
                                       : train_refinement(config, data, paths, on_step);
}

// ---------------------------------------------------------------------------
// Inference

namespace {

JointClassLabels argmax_labels(const torch::Tensor& logits) {  // (C, 21)
  JointClassLabels l;
  l.num_classes = static_cast<int>(logits.size(0));
  const auto a = logits.argmax(0);
  for (int j = 0; j < kNumJoints; ++j) l.labels[j] = static_cast<int>(a[j].item<std::int64_t>());
  return l;
}

}  // namespace

Predictions predict(HandPoseNet& model, const SampleSource& data, int batch_size) {
  torch::NoGradGuard guard;
  model->eval();
  Predictions p;
  const double size = model->config().backbone.input_size;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(data.size(), first + batch_size); ++i) idx.push_back(i);
    const Batch batch = collate(data, idx);
    const auto out = model->forward(batch.images);
    for (std::int64_t b = 0; b < batch.size(); ++b) {
      p.pose_2d_px.push_back(pose2d_from_tensor(out.pose_2d[b] * size));
      p.pose_3d_coarse.push_back(pose3d_from_tensor(out.pose_3d_coarse[b]));
      if (out.pose_3d_refined.defined()) p.pose_3d_refined.push_back(pose3d_from_tensor(out.pose_3d_refined[b]));
      if (out.logits_2d.defined()) {
        p.labels_2d.push_back(argmax_labels(out.logits_2d[b]));
        p.labels_3d.push_back(argmax_labels(out.logits_3d[b]));
      }
    }
  }
  return p;
}

nlohmann::json evaluate(HandPoseNet& model, const SampleSource& data, int batch_size) {
  if (data.size() == 0) throw ShapeError("evaluation set is empty");
  const auto p = predict(model, data, batch_size);
  std::vector<HandPose2D> gt_2d;
  std::vector<HandPose3D> gt_3d;
  std::vector<double> bones;
  std::vector<int> gt_l2, gt_l3, pr_l2, pr_l3;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.get(i);
    gt_2d.push_back(s.pose_2d_px);
    gt_3d.push_back(s.pose_3d_norm);
    bones.push_back(s.bone_length_mm);
    if (!p.labels_2d.empty()) {
      for (int j = 0; j < kNumJoints; ++j) {
        gt_l2.push_back(s.labels_2d.labels[j]);
        gt_l3.push_back(s.labels_3d.labels[j]);
        pr_l2.push_back(p.labels_2d[i].labels[j]);
        pr_l3.push_back(p.labels_3d[i].labels[j]);
      }
    }
  }

  auto errors_mm = [&](const std::vector<HandPose3D>& pred) {
    auto e = eval::joint_errors(pred, gt_3d);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] *= bones[i / kNumJoints];
    return e;
  };
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };

  const auto final_mm = errors_mm(p.final_3d());
  const auto pck = eval::pck_auc(final_mm);
  nlohmann::json j{
      {"samples", data.size()},
      {"variant", model->config().variant.name()},
      {"epe_2d_px", eval::epe(std::span(p.pose_2d_px), std::span(gt_2d))},
      {"epe_3d_normalized", eval::epe(std::span(p.final_3d()), std::span(gt_3d))},
      {"epe_3d_mm", mean(final_mm)},
      {"epe_3d_coarse_normalized", eval::epe(std::span(p.pose_3d_coarse), std::span(gt_3d))},
      {"epe_3d_coarse_mm", mean(errors_mm(p.pose_3d_coarse))},
      {"auc", pck.auc},
      {"pck", eval::to_json(pck)},
  };
  if (!p.labels_2d.empty()) {
    const auto& q = model->config().quantizer;
    j["classification"] = {
        {"2d", eval::to_json(eval::classification_report(pr_l2, gt_l2, q.classes_2d()))},
        {"3d", eval::to_json(eval::classification_report(pr_l3, gt_l3, q.classes_3d()))}};
  } else {
    j["classification"] = nullptr;
  }
  return j;
}

}  // namespace handgcn
