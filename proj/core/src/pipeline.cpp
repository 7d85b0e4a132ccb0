#include "segdiff/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "segdiff/checkpoint.hpp"
#include "segdiff/dataset.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/error.hpp"
#include "segdiff/log.hpp"
#include "segdiff/tensors.hpp"

namespace segdiff {

namespace {

std::vector<LabelMap> read_rough_dir(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                                     int num_classes) {
  std::vector<LabelMap> out;
  for (const auto& s : samples) {
    const auto path = dir / (s.id + ".png");
    if (!std::filesystem::exists(path)) throw IoError("missing rough map " + path.string());
    auto m = read_mask_png(path);
    if (!m.same_spatial(s.label)) throw ValidationError("rough map " + path.string() + " differs in size from its image");
    check_label_range(m, num_classes, path.string().c_str());
    out.push_back(std::move(m));
  }
  return out;
}

torch::Tensor stack_sample_images(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) {
  std::vector<torch::Tensor> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(to_tensor(samples[i].image));
  return torch::stack(v);
}

torch::Tensor stack_maps(const std::vector<LabelMap>& maps, std::size_t begin, std::size_t end) {
  std::vector<torch::Tensor> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(to_tensor(maps[i]));
  return torch::stack(v);
}

int headline_tolerance(const std::vector<int>& tolerances) {
  for (int t : tolerances) {
    if (t == 3) return t;
  }
  return tolerances.front();
}

}  // namespace

std::vector<LabelMap> degrade_all(const std::vector<Sample>& samples, const DegradeParams& params, std::uint64_t seed) {
  std::vector<LabelMap> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    DegradeParams p = params;
    p.seed = derive_seed(seed, i);
    out.push_back(degrade_label(samples[i].label, p));
  }
  return out;
}

Corpus prepare_corpus(const ExperimentConfig& config) {
  Corpus c;
  const auto& d = config.data;
  if (d.root.empty()) {
    const auto base = stream_seed(config, SeedStream::data);
    SceneSpec spec = d.scene;
    spec.seed = derive_seed(base, 0);
    c.train = generate_corpus(spec, d.train_count, "train_");
    spec.seed = derive_seed(base, 1);
    if (d.val_count > 0) c.val = generate_corpus(spec, d.val_count, "val_");
    spec.seed = derive_seed(base, 2);
    c.test = generate_corpus(spec, d.test_count, "test_");
  } else {
    auto load = [&](const char* split) {
      auto ds = load_dataset(d.root, split, config.num_classes);
      for (const auto& w : ds.report.warnings) log::warn(w);
      return std::move(ds.samples);
    };
    c.train = load("train");
    c.val = load("val");
    c.test = load("test");
    if (c.train.empty()) throw ConfigError("no training samples under " + d.root);
  }

  const auto degrade_seed = stream_seed(config, SeedStream::degrade);
  if (d.rough == "degrade") {
    if (!d.resample_degradation) c.train_rough = degrade_all(c.train, d.degrade, derive_seed(degrade_seed, 0));
    c.val_rough = degrade_all(c.val, d.degrade, derive_seed(degrade_seed, 1));
    c.test_rough = degrade_all(c.test, d.degrade, derive_seed(degrade_seed, 2));
  } else if (d.rough == "files") {
    if (d.root.empty()) throw ConfigError("data.rough = files needs data.root");
    c.train_rough = read_rough_dir(std::filesystem::path(d.root) / "train" / "rough", c.train, config.num_classes);
    c.val_rough = read_rough_dir(std::filesystem::path(d.root) / "val" / "rough", c.val, config.num_classes);
    c.test_rough = read_rough_dir(std::filesystem::path(d.root) / "test" / "rough", c.test, config.num_classes);
  }
  return c;
}

torch::Tensor image_latents(const ImageCodec& image_codec, const torch::Tensor& images) {
  return image_codec.encode(images * 2.0 - 1.0);
}

torch::Tensor label_latents(const ImageCodec& image_codec, LabelCodec codec, const torch::Tensor& labels) {
  return image_codec.encode(codec->embed(labels));
}

std::shared_ptr<ImageCodec> make_image_codec(const ExperimentConfig& config, const std::vector<Sample>& train,
                                             LabelCodec codec) {
  if (config.codec_mode == CodecMode::identity) return std::make_shared<IdentityCodec>(3);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (const auto& s : train) {
    parts.push_back(to_tensor(s.image) * 2.0 - 1.0);
    parts.push_back(codec->embed(to_tensor(s.label).unsqueeze(0))[0]);
  }
  AutoencoderTrainOptions options = config.autoencoder;
  options.seed = stream_seed(config, SeedStream::autoencoder);
  torch::Tensor data = torch::stack(parts);
  torch::GradMode::set_enabled(true);
  auto trained = train_tiny_autoencoder(data, options);
  log::info("tiny autoencoder max reconstruction error ", trained->reconstruction_tolerance());
  return std::shared_ptr<ImageCodec>(std::move(trained));
}

std::shared_ptr<AlignTargetProvider> make_align_targets(const ExperimentConfig& config, CoarseNet coarse) {
  if (!config.refiner.align.enabled) return nullptr;
  if (config.align_targets == "coarse") {
    if (!coarse) throw ConfigError("alignment targets 'coarse' need a trained coarse model");
    return std::make_shared<CoarseFeatureTargets>(coarse, config.refiner.align.grid);
  }
  auto provider = std::make_shared<PrecomputedTargets>(config.align_targets);
  if (provider->grid() != config.refiner.align.grid) {
    throw ConfigError("precomputed alignment targets use grid " + std::to_string(provider->grid()) +
                      ", config asks for " + std::to_string(config.refiner.align.grid));
  }
  return provider;
}

Refiner make_refiner(ExperimentConfig& config, const ImageCodec& image_codec, const AlignTargetProvider* targets) {
  config.refiner.denoiser.latent_channels = image_codec.latent_channels();
  if (targets != nullptr) config.refiner.align_target_dim = targets->dim();
  torch::manual_seed(stream_seed(config, SeedStream::refiner));
  return Refiner(config.refiner);
}

DenoiserUNet warmup_denoiser(const ExperimentConfig& config, LabelCodec codec, const ImageCodec& image_codec,
                             const std::vector<Sample>& train) {
  if (train.empty()) throw ConfigError("warm-up needs training labels");
  DenoiserConfig dc = config.refiner.denoiser;
  dc.latent_channels = image_codec.latent_channels();
  dc.condition_channels = 0;
  const auto seed = stream_seed(config, SeedStream::warmup);
  torch::manual_seed(seed);
  DenoiserUNet net(dc);
  if (config.warmup.steps == 0) return net;

  const auto schedule = make_schedule(config.schedule);
  Rng rng(seed);
  std::vector<torch::Tensor> label_list;
  for (const auto& s : train) label_list.push_back(to_tensor(s.label));
  const auto labels = torch::stack(label_list);
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.warmup.learning_rate));
  std::uniform_int_distribution<std::int64_t> pick(0, labels.size(0) - 1);
  double running = 0.0;
  for (int step = 0; step < config.warmup.steps; ++step) {
    std::vector<std::int64_t> idx(config.warmup.batch_size);
    for (auto& i : idx) i = pick(rng.engine());
    torch::Tensor z0;
    {
      torch::NoGradGuard no_grad;
      z0 = label_latents(image_codec, codec, labels.index_select(0, torch::tensor(idx)));
    }
    auto t = sample_timesteps(config.warmup.batch_size, schedule.num_train_timesteps, false, rng.engine());
    auto eps = torch::randn(z0.sizes(), rng.generator());
    auto loss = noise_mse(net->forward(add_noise(z0, eps, t, schedule), torch::Tensor(), t).eps, eps);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw TrainingError("warm-up loss became non-finite at step " + std::to_string(step), "");
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    running += value;
    if (config.warmup.log_every > 0 && (step + 1) % config.warmup.log_every == 0) {
      log::info("warm-up step ", step + 1, " loss ", running / config.warmup.log_every);
      running = 0.0;
    }
  }
  return net;
}

RefinerTrainer::RefinerTrainer(ExperimentConfig config, LabelCodec codec, std::shared_ptr<ImageCodec> image_codec,
                               Refiner model, std::shared_ptr<AlignTargetProvider> targets)
    : config_(std::move(config)),
      codec_(std::move(codec)),
      image_codec_(std::move(image_codec)),
      model_(std::move(model)),
      targets_(std::move(targets)),
      schedule_(make_schedule(config_.schedule)),
      rng_(stream_seed(config_, SeedStream::refiner)) {
  config_.validate();
  for (auto& p : codec_->parameters()) p.set_requires_grad(false);
  if (config_.refiner.align.enabled && targets_ && targets_->dim() != model_->config().align_target_dim) {
    throw ConfigError("alignment target dimension " + std::to_string(targets_->dim()) +
                      " differs from the projector's " + std::to_string(model_->config().align_target_dim));
  }
  optimizer_ = std::make_unique<torch::optim::Adam>(model_->trainable_parameters(),
                                                    torch::optim::AdamOptions(config_.train.learning_rate));
}

void RefinerTrainer::set_data(std::vector<Sample> train, std::vector<LabelMap> train_rough, std::vector<Sample> val,
                              std::vector<LabelMap> val_rough) {
  if (train.empty()) throw ConfigError("refiner training set is empty");
  if (!train_rough.empty() && train_rough.size() != train.size()) {
    throw ValidationError("training rough maps do not pair with training samples");
  }
  if (val_rough.size() != val.size()) throw ValidationError("validation rough maps do not pair with samples");
  if (train_rough.empty() && config_.data.rough != "degrade") {
    throw ConfigError("training rough maps are required unless data.rough is 'degrade'");
  }
  for (const auto& s : train) check_label_range(s.label, config_.num_classes, s.id.c_str());
  train_ = std::move(train);
  train_rough_ = std::move(train_rough);
  val_ = std::move(val);
  val_rough_ = std::move(val_rough);
}

std::filesystem::path RefinerTrainer::last_good_path() const {
  return (checkpoint_dir_.empty() ? config_.output_path() : checkpoint_dir_) / "last_good.pt";
}

double RefinerTrainer::step() {
  if (train_.empty()) throw ConfigError("RefinerTrainer::set_data must be called before training");
  const int b = config_.train.batch_size;
  std::uniform_int_distribution<std::size_t> pick(0, train_.size() - 1);
  std::vector<std::size_t> idx(b);
  for (auto& i : idx) i = pick(rng_.engine());

  std::vector<torch::Tensor> imgs, gts, roughs;
  std::vector<std::string> ids;
  for (auto i : idx) {
    imgs.push_back(to_tensor(train_[i].image));
    gts.push_back(to_tensor(train_[i].label));
    ids.push_back(train_[i].id);
    if (train_rough_.empty()) {
      DegradeParams p = config_.data.degrade;
      p.seed = rng_.next_u64();
      roughs.push_back(to_tensor(degrade_label(train_[i].label, p)));
    } else {
      roughs.push_back(to_tensor(train_rough_[i]));
    }
  }
  const auto images = torch::stack(imgs);
  torch::Tensor z0, c_image, c_rough;
  {
    torch::NoGradGuard no_grad;
    z0 = label_latents(*image_codec_, codec_, torch::stack(gts));
    c_rough = label_latents(*image_codec_, codec_, torch::stack(roughs));
    c_image = image_latents(*image_codec_, images);
    std::bernoulli_distribution drop(config_.condition_dropout);
    for (int k = 0; k < b; ++k) {
      if (drop(rng_.engine())) {
        c_image[k].zero_();
        c_rough[k].zero_();
      }
    }
  }
  const auto t = sample_timesteps(b, schedule_.num_train_timesteps, config_.cubic, rng_.engine());
  const auto eps = torch::randn(z0.sizes(), rng_.generator());
  const auto z_t = add_noise(z0, eps, t, schedule_);

  auto out = model_->forward(z_t, c_image, c_rough, t);
  auto mse = noise_mse(out.eps, eps);
  const auto& align = config_.refiner.align;
  torch::Tensor repa;
  if (align.enabled && targets_ && step_ < align.stop_step && align.lambda0 > 0.0) {
    auto targets = targets_->targets(ids, images);
    repa = repa_loss(model_->projector->forward(out.hidden), targets).loss;
  }
  auto loss = total_loss(mse, repa, step_, align.lambda0, align.stop_step);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    save(last_good_path());
    throw TrainingError("refiner loss became non-finite at step " + std::to_string(step_),
                        last_good_path().string());
  }
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  ++step_;
  losses_.push_back(value);
  return value;
}

ValidationPoint RefinerTrainer::validate() {
  ValidationPoint p;
  p.step = step_;
  const auto n = std::min<std::size_t>(val_.size(), static_cast<std::size_t>(config_.val_subset));
  if (n == 0) return p;
  std::vector<Sample> subset(val_.begin(), val_.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<LabelMap> rough(val_rough_.begin(), val_rough_.begin() + static_cast<std::ptrdiff_t>(n));
  InferenceOptions options;
  options.cfg_weight = config_.cfg_weight;
  options.clip_clean = config_.clip_clean;
  options.seed = stream_seed(config_, SeedStream::inference);
  options.batch_size = 16;
  const auto result = infer_refine(model_, codec_, *image_codec_, schedule_, subset, rough, options);
  std::vector<LabelMap> gts;
  for (const auto& s : subset) gts.push_back(s.label);
  const auto report = evaluate_corpus(result.labels, gts, eval_options(config_));
  p.miou = report.miou;
  p.wfm = report.wfm.at(headline_tolerance(config_.wfm_tolerances));
  validation_.push_back(p);
  log::info("refiner step ", step_, " val mIoU ", p.miou, " val WFm ", p.wfm ? *p.wfm : -1.0);
  return p;
}

void RefinerTrainer::run(const std::filesystem::path& checkpoint_path) {
  checkpoint_dir_ = checkpoint_path.has_parent_path() ? checkpoint_path.parent_path() : ".";
  std::filesystem::create_directories(checkpoint_dir_);
  const auto& tc = config_.train;
  double running = 0.0;
  int counted = 0;
  while (step_ < tc.steps) {
    running += step();
    ++counted;
    if (tc.log_every > 0 && step_ % tc.log_every == 0) {
      log::info("refiner step ", step_, " loss ", running / counted);
      running = 0.0;
      counted = 0;
    }
    if (tc.validate_every > 0 && step_ % tc.validate_every == 0) validate();
    if (tc.checkpoint_every > 0 && step_ % tc.checkpoint_every == 0 && step_ < tc.steps) save(checkpoint_path);
  }
  save(checkpoint_path);
}

void RefinerTrainer::save(const std::filesystem::path& path) {
  save_refiner_checkpoint(path, config_, model_, codec_, *image_codec_, step_, optimizer_.get(), &rng_, losses_,
                          validation_);
}

void RefinerTrainer::resume(const std::filesystem::path& path) {
  CheckpointReader reader(path, "refiner");
  const auto stored = reader.get_json("config");
  if (stored.at("refiner") != nlohmann::json(model_->config())) {
    throw ConfigError("checkpoint " + path.string() + " was written for a different refiner architecture");
  }
  reader.load_module("model", *model_);
  if (!reader.has("optimizer") || !reader.has("rng")) {
    throw ValidationError("checkpoint " + path.string() + " holds no training state to resume from");
  }
  reader.load_optimizer("optimizer", *optimizer_);
  rng_.restore(reader.get_string("rng"));
  step_ = static_cast<int>(reader.get_int("step"));
  losses_ = reader.get_json("losses").get<std::vector<double>>();
  validation_.clear();
  for (const auto& v : reader.get_json("validation")) {
    ValidationPoint p;
    p.step = v.at("step").get<int>();
    p.miou = v.at("miou").get<double>();
    if (!v.at("wfm").is_null()) p.wfm = v.at("wfm").get<double>();
    validation_.push_back(p);
  }
}

void save_refiner_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, Refiner model,
                             LabelCodec codec, const ImageCodec& image_codec, int step,
                             torch::optim::Optimizer* optimizer, const Rng* rng, const std::vector<double>& losses,
                             const std::vector<ValidationPoint>& validation) {
  CheckpointWriter w("refiner");
  ExperimentConfig stored = config;
  stored.refiner = model->config();
  w.put_json("config", stored);
  w.put_int("step", step);
  w.put_module("model", *model);
  w.put_int("codec_classes", codec->num_classes());
  w.put_int("codec_hidden", codec->hidden_channels());
  w.put_module("codec", *codec);
  w.put_string("image_codec", image_codec.name());
  if (const auto* tiny = dynamic_cast<const TinyAutoencoderCodec*>(&image_codec)) {
    w.put_int("image_codec_latent", tiny->latent_channels());
    w.put_json("image_codec_tolerance", tiny->reconstruction_tolerance());
    w.put_module("image_codec_model", *tiny->model());
  }
  if (optimizer != nullptr) w.put_optimizer("optimizer", *optimizer);
  if (rng != nullptr) w.put_string("rng", rng->serialize());
  w.put_json("losses", losses);
  nlohmann::json val = nlohmann::json::array();
  for (const auto& p : validation) {
    val.push_back({{"step", p.step}, {"miou", p.miou}, {"wfm", p.wfm ? nlohmann::json(*p.wfm) : nlohmann::json()}});
  }
  w.put_json("validation", val);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  w.save(tmp);
  std::filesystem::rename(tmp, path);
}

RefinerBundle load_refiner(const std::filesystem::path& path) {
  CheckpointReader reader(path, "refiner");
  RefinerBundle b;
  b.config = reader.get_json("config").get<ExperimentConfig>();
  b.schedule = make_schedule(b.config.schedule);
  b.model = Refiner(b.config.refiner);
  reader.load_module("model", *b.model);
  b.codec = make_label_codec(static_cast<int>(reader.get_int("codec_classes")), 0,
                             static_cast<int>(reader.get_int("codec_hidden")));
  reader.load_module("codec", *b.codec);
  for (auto& p : b.codec->parameters()) p.set_requires_grad(false);
  const auto kind = reader.get_string("image_codec");
  if (kind == "identity") {
    b.image_codec = std::make_shared<IdentityCodec>(3);
  } else if (kind == "tiny-autoencoder") {
    TinyAutoencoder ae(3, static_cast<int>(reader.get_int("image_codec_latent")));
    reader.load_module("image_codec_model", *ae);
    b.image_codec = std::make_shared<TinyAutoencoderCodec>(ae, reader.get_json("image_codec_tolerance").get<double>());
  } else {
    throw ValidationError("checkpoint " + path.string() + " names unknown image codec '" + kind + "'");
  }
  return b;
}

InferenceResult infer_refine(Refiner model, LabelCodec codec, const ImageCodec& image_codec,
                             const NoiseSchedule& schedule, const std::vector<Sample>& samples,
                             const std::vector<LabelMap>& rough, const InferenceOptions& options) {
  if (samples.size() != rough.size()) throw ValidationError("every image needs one rough map");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (rough[i].height != samples[i].image.height || rough[i].width != samples[i].image.width) {
      throw ValidationError("rough map for '" + samples[i].id + "' differs in size from its image");
    }
    check_label_range(rough[i], codec->num_classes(), "rough map");
  }
  torch::NoGradGuard no_grad;
  InferenceResult result;
  const auto& steps = schedule.inference_timesteps;
  // Label embeddings live in (-1, 1); latents of a learned codec are unbounded.
  const bool clip = options.clip_clean && image_codec.name() == "identity";
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const auto end = std::min(samples.size(), begin + batch);
    const auto c_image = image_latents(image_codec, stack_sample_images(samples, begin, end));
    const auto c_rough = label_latents(image_codec, codec, stack_maps(rough, begin, end));
    std::vector<torch::Tensor> noise;
    for (std::size_t i = begin; i < end; ++i) {
      auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(options.seed, i));
      noise.push_back(torch::randn(c_rough.sizes().slice(1), gen));
    }
    auto z = torch::stack(noise);
    std::vector<Trajectory> traj(end - begin);
    for (std::size_t k = 0; k < traj.size(); ++k) traj[k].id = samples[begin + k].id;

    for (std::size_t i = 0; i < steps.size(); ++i) {
      const int t = steps[i];
      const int t_next = i + 1 < steps.size() ? steps[i + 1] : kCleanTimestep;
      const auto tt = timestep_batch(t, z.size(0));
      auto eps = options.cfg_weight == 1.0 ? model->forward(z, c_image, c_rough, tt).eps
                                           : model->guided_eps(z, c_image, c_rough, tt, options.cfg_weight);
      if (clip) eps = clamp_clean_estimate(z, eps, schedule.alpha_bar(t), 1.0);
      if (options.record_trajectory) {
        const auto x0 = predict_clean(z, eps, schedule.alpha_bar(t));
        for (std::size_t k = 0; k < traj.size(); ++k) {
          const auto kk = static_cast<std::int64_t>(k);
          traj[k].snapshots.push_back({t, z[kk].clone(), x0[kk].clone()});
        }
      }
      z = ddim_step(z, eps, t, t_next, schedule);
    }
    if (options.record_trajectory) {
      for (std::size_t k = 0; k < traj.size(); ++k) {
        const auto kk = static_cast<std::int64_t>(k);
        traj[k].snapshots.push_back({kCleanTimestep, z[kk].clone(), z[kk].clone()});
        result.trajectories.push_back(std::move(traj[k]));
      }
    }
    for (auto& m : labels_from_batch(codec->decode_labels(image_codec.decode(z)))) result.labels.push_back(std::move(m));
  }
  return result;
}

SnapshotDecoder class_probability_decoder(LabelCodec codec, const ImageCodec& image_codec) {
  return [codec, &image_codec](const torch::Tensor& latent) mutable {
    torch::NoGradGuard no_grad;
    return torch::softmax(codec->decode(image_codec.decode(latent.unsqueeze(0))), 1)[0];
  };
}

EvalOptions eval_options(const ExperimentConfig& config) {
  EvalOptions o;
  o.num_classes = config.num_classes;
  o.tolerances = config.wfm_tolerances;
  o.ignore_class = config.ignore_class;
  return o;
}

MetricsReport run_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                       const EvalOptions& options) {
  const auto stems = png_stems(gt_dir);
  if (stems.empty()) throw IoError("no ground-truth masks in " + gt_dir.string());
  std::vector<LabelMap> preds, gts;
  std::vector<std::string> missing;
  for (const auto& stem : stems) {
    const auto pred_path = pred_dir / (stem + ".png");
    if (!std::filesystem::exists(pred_path)) {
      missing.push_back(stem);
      continue;
    }
    preds.push_back(read_mask_png(pred_path));
    gts.push_back(read_mask_png(gt_dir / (stem + ".png")));
  }
  if (preds.empty()) throw ValidationError("no prediction in " + pred_dir.string() + " matches a ground-truth mask");
  auto report = evaluate_corpus(preds, gts, options);
  report.missing = std::move(missing);
  return report;
}

void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::ofstream json(dir / (stem + ".json"));
  json << report_to_json(report).dump(2) << "\n";
  std::ofstream text(dir / (stem + ".txt"));
  text << format_report(report);
  if (!json || !text) throw IoError("cannot write report into " + dir.string());
}

}  // namespace segdiff
