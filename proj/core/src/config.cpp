#include "segdiff/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "segdiff/error.hpp"
#include "segdiff/rng.hpp"

namespace segdiff {

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::string codec_mode_name(CodecMode m) { return m == CodecMode::identity ? "identity" : "tiny-autoencoder"; }

CodecMode parse_codec_mode(const std::string& s) {
  if (s == "identity") return CodecMode::identity;
  if (s == "tiny-autoencoder") return CodecMode::tiny_autoencoder;
  throw ConfigError("unknown codec mode '" + s + "' (expected identity or tiny-autoencoder)");
}

nlohmann::json stage_json(const StageConfig& s) {
  return {{"steps", s.steps},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"log_every", s.log_every},
          {"validate_every", s.validate_every},
          {"checkpoint_every", s.checkpoint_every}};
}

void read_stage(const nlohmann::json& j, StageConfig& s) {
  read(j, "steps", s.steps);
  read(j, "batch_size", s.batch_size);
  read(j, "learning_rate", s.learning_rate);
  read(j, "log_every", s.log_every);
  read(j, "validate_every", s.validate_every);
  read(j, "checkpoint_every", s.checkpoint_every);
}

void check_stage(const StageConfig& s, const char* name) {
  if (s.steps < 0 || s.batch_size < 1 || !(s.learning_rate > 0.0)) {
    throw ConfigError(std::string(name) + ": steps must be >= 0, batch_size >= 1, learning_rate > 0");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const SceneSpec& c) {
  j = {{"width", c.width},
       {"height", c.height},
       {"num_classes", c.num_classes},
       {"mix", {{"rectangles", c.mix.rectangles}, {"roads", c.mix.roads}, {"blobs", c.mix.blobs}}},
       {"min_object_size", c.min_object_size},
       {"max_object_size", c.max_object_size},
       {"object_count", c.object_count},
       {"noise_sigma", c.noise_sigma},
       {"shadow_probability", c.shadow_probability},
       {"shadow_factor", c.shadow_factor},
       {"palette_jitter", c.palette_jitter},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& c) {
  read(j, "width", c.width);
  read(j, "height", c.height);
  read(j, "num_classes", c.num_classes);
  if (j.contains("mix")) {
    read(j["mix"], "rectangles", c.mix.rectangles);
    read(j["mix"], "roads", c.mix.roads);
    read(j["mix"], "blobs", c.mix.blobs);
  }
  read(j, "min_object_size", c.min_object_size);
  read(j, "max_object_size", c.max_object_size);
  read(j, "object_count", c.object_count);
  read(j, "noise_sigma", c.noise_sigma);
  read(j, "shadow_probability", c.shadow_probability);
  read(j, "shadow_factor", c.shadow_factor);
  read(j, "palette_jitter", c.palette_jitter);
  read(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const DegradeParams& c) {
  j = {{"jitter_radius", c.jitter_radius}, {"hole_rate", c.hole_rate}, {"flip_rate", c.flip_rate}};
}

void from_json(const nlohmann::json& j, DegradeParams& c) {
  read(j, "jitter_radius", c.jitter_radius);
  read(j, "hole_rate", c.hole_rate);
  read(j, "flip_rate", c.flip_rate);
}

void to_json(nlohmann::json& j, const ScheduleParams& c) {
  j = {{"num_train_timesteps", c.num_train_timesteps},
       {"beta_start", c.beta_start},
       {"beta_end", c.beta_end},
       {"inference_steps", c.inference_steps}};
}

void from_json(const nlohmann::json& j, ScheduleParams& c) {
  read(j, "num_train_timesteps", c.num_train_timesteps);
  read(j, "beta_start", c.beta_start);
  read(j, "beta_end", c.beta_end);
  read(j, "inference_steps", c.inference_steps);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"name", c.name},
       {"seed", c.seed},
       {"num_classes", c.num_classes},
       {"output_dir", c.output_dir},
       {"data",
        {{"root", c.data.root},
         {"scene", c.data.scene},
         {"train_count", c.data.train_count},
         {"val_count", c.data.val_count},
         {"test_count", c.data.test_count},
         {"degrade", c.data.degrade},
         {"rough", c.data.rough},
         {"resample_degradation", c.data.resample_degradation}}},
       {"schedule", c.schedule},
       {"codec_mode", codec_mode_name(c.codec_mode)},
       {"codec",
        {{"steps", c.codec.steps},
         {"learning_rate", c.codec.learning_rate},
         {"noise_variance", c.codec.noise_variance},
         {"batch_size", c.codec.batch_size}}},
       {"autoencoder",
        {{"steps", c.autoencoder.steps},
         {"batch_size", c.autoencoder.batch_size},
         {"learning_rate", c.autoencoder.learning_rate}}},
       {"coarse", c.coarse},
       {"coarse_train",
        {{"steps", c.coarse_train.steps},
         {"batch_size", c.coarse_train.batch_size},
         {"learning_rate", c.coarse_train.learning_rate},
         {"flip", c.coarse_train.flip},
         {"log_every", c.coarse_train.log_every},
         {"validate_every", c.coarse_train.validate_every}}},
       {"refiner", c.refiner},
       {"cubic", c.cubic},
       {"cfg_weight", c.cfg_weight},
       {"clip_clean", c.clip_clean},
       {"condition_dropout", c.condition_dropout},
       {"align_targets", c.align_targets},
       {"warmup", stage_json(c.warmup)},
       {"train", stage_json(c.train)},
       {"val_subset", c.val_subset},
       {"wfm_tolerances", c.wfm_tolerances},
       {"ignore_class", c.ignore_class ? nlohmann::json(*c.ignore_class) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  read(j, "name", c.name);
  read(j, "seed", c.seed);
  read(j, "num_classes", c.num_classes);
  read(j, "output_dir", c.output_dir);
  if (j.contains("data")) {
    const auto& d = j["data"];
    read(d, "root", c.data.root);
    read(d, "scene", c.data.scene);
    read(d, "train_count", c.data.train_count);
    read(d, "val_count", c.data.val_count);
    read(d, "test_count", c.data.test_count);
    read(d, "degrade", c.data.degrade);
    read(d, "rough", c.data.rough);
    read(d, "resample_degradation", c.data.resample_degradation);
  }
  read(j, "schedule", c.schedule);
  if (j.contains("codec_mode")) c.codec_mode = parse_codec_mode(j["codec_mode"].get<std::string>());
  if (j.contains("codec")) {
    const auto& d = j["codec"];
    read(d, "steps", c.codec.steps);
    read(d, "learning_rate", c.codec.learning_rate);
    read(d, "noise_variance", c.codec.noise_variance);
    read(d, "batch_size", c.codec.batch_size);
  }
  if (j.contains("autoencoder")) {
    const auto& d = j["autoencoder"];
    read(d, "steps", c.autoencoder.steps);
    read(d, "batch_size", c.autoencoder.batch_size);
    read(d, "learning_rate", c.autoencoder.learning_rate);
  }
  read(j, "coarse", c.coarse);
  if (j.contains("coarse_train")) {
    const auto& d = j["coarse_train"];
    read(d, "steps", c.coarse_train.steps);
    read(d, "batch_size", c.coarse_train.batch_size);
    read(d, "learning_rate", c.coarse_train.learning_rate);
    read(d, "flip", c.coarse_train.flip);
    read(d, "log_every", c.coarse_train.log_every);
    read(d, "validate_every", c.coarse_train.validate_every);
  }
  read(j, "refiner", c.refiner);
  read(j, "cubic", c.cubic);
  read(j, "cfg_weight", c.cfg_weight);
  read(j, "clip_clean", c.clip_clean);
  read(j, "condition_dropout", c.condition_dropout);
  read(j, "align_targets", c.align_targets);
  if (j.contains("warmup")) read_stage(j["warmup"], c.warmup);
  if (j.contains("train")) read_stage(j["train"], c.train);
  read(j, "val_subset", c.val_subset);
  read(j, "wfm_tolerances", c.wfm_tolerances);
  if (j.contains("ignore_class")) {
    c.ignore_class = j["ignore_class"].is_null() ? std::nullopt : std::optional<int>(j["ignore_class"].get<int>());
  }
}

void ExperimentConfig::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must lie in [2, 255]");
  if (data.root.empty()) {
    data.scene.validate();
    if (data.scene.num_classes != num_classes) throw ConfigError("data.scene.num_classes differs from num_classes");
  }
  if (data.train_count < 1 || data.test_count < 1 || data.val_count < 0) {
    throw ConfigError("data counts must be positive (val_count may be 0)");
  }
  data.degrade.validate();
  if (data.rough != "degrade" && data.rough != "coarse" && data.rough != "files") {
    throw ConfigError("data.rough must be degrade, coarse or files");
  }
  schedule.validate();
  if (coarse.num_classes != num_classes) throw ConfigError("coarse.num_classes differs from num_classes");
  coarse.validate();
  refiner.resolve().validate();
  if (!(cfg_weight >= 0.0)) throw ConfigError("cfg_weight must be >= 0");
  if (condition_dropout < 0.0 || condition_dropout > 1.0) throw ConfigError("condition_dropout must lie in [0, 1]");
  check_stage(warmup, "warmup");
  check_stage(train, "train");
  if (val_subset < 0) throw ConfigError("val_subset must be >= 0");
  if (wfm_tolerances.empty()) throw ConfigError("wfm_tolerances must not be empty");
  for (int t : wfm_tolerances) {
    if (t < 1) throw ConfigError("WFm tolerances must be >= 1");
  }
  if (ignore_class && (*ignore_class < 0 || *ignore_class >= num_classes)) {
    throw ConfigError("ignore_class outside [0, num_classes)");
  }
}

std::filesystem::path ExperimentConfig::output_path() const {
  if (!output_dir.empty()) return output_dir;
  const char* root = std::getenv(kOutputRootEnv);
  return std::filesystem::path(root != nullptr && *root != '\0' ? root : "runs") / name;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json defaults = ExperimentConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << nlohmann::json(config).dump(2) << "\n";
  if (!out) throw IoError("cannot write config " + path.string());
}

ExperimentConfig apply_ablation(ExperimentConfig config, const std::string& preset) {
  config.refiner.use_guidance = true;
  config.refiner.conditions.image = true;
  if (preset == "A") {
    // Image-only baseline: plain conditional diffusion, c_I concatenated at the input.
    config.refiner.use_guidance = false;
    config.refiner.conditions.rough = false;
    config.cubic = false;
  } else if (preset == "B") {
    config.refiner.conditions.rough = true;
    config.cubic = false;
  } else if (preset == "C") {
    config.refiner.conditions.rough = true;
    config.cubic = true;
  } else {
    throw ConfigError("unknown ablation preset '" + preset + "' (expected A, B or C)");
  }
  config.name += "_" + preset;
  if (!config.output_dir.empty()) config.output_dir += "_" + preset;
  return config;
}

std::uint64_t stream_seed(const ExperimentConfig& config, SeedStream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

}  // namespace segdiff
