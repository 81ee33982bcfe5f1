#include "linecolor/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/hints.hpp"
#include "linecolor/manifest.hpp"
#include "linecolor/rng.hpp"

namespace linecolor::train {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.scale = "paper";
  c.drop_iteration = 125000;
  c.total_iterations = 250000;
  c.image_side = 512;
  c.checkpoint_every = 5000;
  c.generator = nets::GeneratorConfig::paper_scale();
  c.discriminator = nets::DiscriminatorConfig::paper_scale();
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  const std::string scale = j.value("scale", std::string("desk"));
  if (scale != "desk" && scale != "paper") {
    throw ArgumentError("config: scale must be \"desk\" or \"paper\"");
  }
  const TrainConfig d = scale == "paper" ? paper() : desk();
  TrainConfig c = d;
  try {
    c.lr_initial = j.value("lr_initial", d.lr_initial);
    c.lr_after_drop = j.value("lr_after_drop", d.lr_after_drop);
    c.drop_iteration = j.value("drop_iteration", d.drop_iteration);
    c.total_iterations = j.value("total_iterations", d.total_iterations);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.image_side = j.value("image_side", d.image_side);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.weights = losses::LossWeights::from_json(j.value("weights", nlohmann::json::object()), d.weights);
    auto g = nets::GeneratorConfig::from_json(j.value("generator", nlohmann::json::object()), d.generator);
    auto dc = nets::DiscriminatorConfig::from_json(j.value("discriminator", nlohmann::json::object()),
                                                   d.discriminator);
    c.generator = g;
    c.discriminator = dc;
    c.f1_checkpoint = j.value("f1_checkpoint", d.f1_checkpoint);
    c.f2_checkpoint = j.value("f2_checkpoint", d.f2_checkpoint);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("config: ") + e.what());
  }
  c.generator.image_side = c.image_side;
  c.discriminator.image_side = c.image_side;
  c.validate();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"scale", scale},
          {"lr_initial", lr_initial},
          {"lr_after_drop", lr_after_drop},
          {"drop_iteration", drop_iteration},
          {"total_iterations", total_iterations},
          {"batch_size", batch_size},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"image_side", image_side},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"weights", weights.to_json()},
          {"generator", generator.to_json()},
          {"discriminator", discriminator.to_json()},
          {"f1_checkpoint", f1_checkpoint},
          {"f2_checkpoint", f2_checkpoint}};
}

void TrainConfig::validate() const {
  if (drop_iteration >= total_iterations) {
    throw ArgumentError("config: drop_iteration must be smaller than total_iterations");
  }
  if (batch_size < 1) throw ArgumentError("config: batch_size must be >= 1");
  if (checkpoint_every < 1) throw ArgumentError("config: checkpoint_every must be >= 1");
  if (!(lr_initial > 0.0 && lr_after_drop > 0.0)) {
    throw ArgumentError("config: learning rates must be positive");
  }
  if (image_side % 16 != 0 || image_side < 16) {
    throw ArgumentError("config: image_side must be a positive multiple of 16");
  }
  if (generator.feature_channels != discriminator.cond_channels) {
    throw ArgumentError("config: generator.feature_channels must equal discriminator.cond_channels");
  }
  weights.validate();
  generator.validate();
  discriminator.validate();
}

double TrainConfig::learning_rate(std::int64_t iteration) const {
  return iteration < drop_iteration ? lr_initial : lr_after_drop;
}

nlohmann::json StepRecord::to_json() const {
  auto j = report.to_json();
  j["iteration"] = iteration;
  j["lr"] = lr;
  j["d_real"] = d_real;
  j["d_fake"] = d_fake;
  return j;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config, features::LocalFeatures f1, features::PerceptualFeatures f2)
    : config_(std::move(config)), f1_(std::move(f1)), f2_(std::move(f2)) {
  config_.validate();
  if (!f1_.initialized()) throw NotInitializedError("trainer requires a loaded F1 extractor");
  if (!f2_.initialized()) throw NotInitializedError("trainer requires a loaded F2 extractor");
  if (f1_.channels() != config_.generator.feature_channels) {
    throw ArgumentError("F1 has " + std::to_string(f1_.channels()) +
                        " channels but the generator expects " +
                        std::to_string(config_.generator.feature_channels));
  }
  generator_ = nets::Generator(config_.generator);
  discriminator_ = nets::Discriminator(config_.discriminator);
  nets::initialize_weights(*generator_, mix_seed(config_.seed, 1));
  nets::initialize_weights(*discriminator_, mix_seed(config_.seed, 2));
  rng_ = at::make_generator<at::CPUGeneratorImpl>(mix_seed(config_.seed, 3));
  build_optimizers();
}

void Trainer::build_optimizers() {
  auto options = [&] {
    return torch::optim::AdamOptions(config_.lr_initial)
        .betas(std::make_tuple(config_.adam_beta1, config_.adam_beta2));
  };
  opt_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), options());
  opt_d_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), options());
}

void Trainer::set_learning_rate(double lr) {
  for (auto* opt : {opt_g_.get(), opt_d_.get()}) {
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }
}

Batch Trainer::make_batch(const std::vector<TrainingPair>& pairs) {
  if (pairs.empty()) throw ArgumentError("make_batch: no pairs");
  std::vector<torch::Tensor> lines;
  std::vector<torch::Tensor> colors;
  for (const auto& p : pairs) {
    lines.push_back(p.line.pixels);
    colors.push_back(p.color.pixels);
  }
  Batch b;
  b.line = torch::stack(lines).to(torch::kFloat32);
  b.color = torch::stack(colors).to(torch::kFloat32);
  b.hints = hints::sample_training_hints(b.color, rng_);
  torch::NoGradGuard no_grad;
  b.features = f1_(b.line);
  return b;
}

Batch Trainer::sample_batch(const std::vector<TrainingPair>& dataset) {
  if (dataset.empty()) throw ArgumentError("sample_batch: dataset is empty");
  auto picks = torch::randint(static_cast<std::int64_t>(dataset.size()), {config_.batch_size}, rng_,
                              torch::kLong);
  auto seeds = torch::randint(0, std::int64_t{1} << 62, {config_.batch_size}, rng_, torch::kLong);
  data::AugmentOptions aug;
  aug.side = config_.image_side;
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < config_.batch_size; ++i) {
    Rng item_rng(static_cast<std::uint64_t>(seeds[i].item<std::int64_t>()));
    pairs.push_back(data::augment(dataset[picks[i].item<std::int64_t>()], item_rng, aug));
  }
  return make_batch(pairs);
}

namespace {

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters(true)) p.set_requires_grad(on);
}

void require_finite(const torch::Tensor& t, const char* what, std::int64_t iteration) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NonFiniteError(std::string(what) + " is not finite at iteration " +
                         std::to_string(iteration + 1));
  }
}

}  // namespace

StepRecord Trainer::train_step(const Batch& batch) {
  const double lr = config_.learning_rate(iteration_);
  set_learning_rate(lr);
  generator_->train();
  discriminator_->train();
  const auto& w = config_.weights;
  auto features = batch.features.detach();

  // Discriminator update.
  set_requires_grad(*discriminator_, true);
  auto fake = generator_(batch.line, batch.hints, features);
  auto fake_d = fake.detach();
  auto real_scores = discriminator_(batch.color, features);
  auto fake_scores = discriminator_(fake_d, features);
  auto critic = losses::critic_loss(fake_scores, real_scores);
  auto eps = torch::rand({batch.color.size(0)}, rng_, torch::kFloat32);
  auto interp = losses::interpolate(fake_d, batch.color, eps);
  losses::Critic d_fn = [this](const torch::Tensor& img, const torch::Tensor& f) {
    return discriminator_(img, f);
  };
  auto penalty = losses::penalty_terms(d_fn, interp, features, real_scores, w);
  auto total_d = critic + penalty.total();
  require_finite(total_d, "discriminator loss", iteration_);
  opt_d_->zero_grad();
  total_d.backward();
  opt_d_->step();

  // Generator update against the freshly updated critic.
  set_requires_grad(*discriminator_, false);
  auto adv = losses::adversarial_loss_g(discriminator_(fake, features));
  auto content = losses::content_loss(f2_, fake, batch.color);
  auto total_g = content + w.lambda1 * adv;
  require_finite(total_g, "generator loss", iteration_);
  opt_g_->zero_grad();
  total_g.backward();
  opt_g_->step();
  set_requires_grad(*discriminator_, true);

  ++iteration_;
  StepRecord rec;
  rec.iteration = iteration_;
  rec.lr = lr;
  rec.report.content = content.item<double>();
  rec.report.adv_g = adv.item<double>();
  rec.report.critic = critic.item<double>();
  rec.report.grad_penalty = penalty.gradient_penalty.item<double>();
  rec.report.drift = penalty.drift.item<double>();
  rec.report = losses::finalize(rec.report, w);
  rec.d_real = real_scores.mean().item<double>();
  rec.d_fake = fake_scores.mean().item<double>();
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

void store_optimizer(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  const auto& params = opt.param_groups().at(0).params();
  std::vector<std::int64_t> steps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = opt.state().find(params[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) {
      steps.push_back(-1);
      continue;
    }
    auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
    steps.push_back(s.step());
    ckpt.put(prefix + std::to_string(i) + ".exp_avg", s.exp_avg());
    ckpt.put(prefix + std::to_string(i) + ".exp_avg_sq", s.exp_avg_sq());
  }
  ckpt.put(prefix + "steps", torch::tensor(steps, torch::kLong));
}

void load_optimizer(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  const auto& params = opt.param_groups().at(0).params();
  auto steps = ckpt.get(prefix + "steps");
  if (steps.numel() != static_cast<std::int64_t>(params.size())) {
    throw CheckpointError("optimizer state '" + prefix + "' does not match the network");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto step = steps[static_cast<std::int64_t>(i)].item<std::int64_t>();
    if (step < 0) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step);
    s->exp_avg(ckpt.get(prefix + std::to_string(i) + ".exp_avg").clone());
    s->exp_avg_sq(ckpt.get(prefix + std::to_string(i) + ".exp_avg_sq").clone());
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt(kTrainerTag);
  ckpt.meta()["config"] = config_.to_json();
  ckpt.meta()["iteration"] = iteration_;
  ckpt.meta()["version"] = kVersionTag;
  ckpt.put_module("g.", *generator_);
  ckpt.put_module("d.", *discriminator_);
  f1_.store(ckpt, "f1.");
  f2_.store(ckpt, "f2.");
  store_optimizer(ckpt, "opt_g.", *opt_g_);
  store_optimizer(ckpt, "opt_d.", *opt_d_);
  ckpt.put("rng.state", rng_.get_state());
  return ckpt;
}

Trainer Trainer::from_checkpoint(const Checkpoint& ckpt) {
  ckpt.require_tag(kTrainerTag);
  auto config = TrainConfig::from_json(ckpt.meta().at("config"));
  Trainer t(config, features::LocalFeatures::from_checkpoint(ckpt, "f1."),
            features::PerceptualFeatures::from_checkpoint(ckpt, "f2."));
  ckpt.load_module("g.", *t.generator_);
  ckpt.load_module("d.", *t.discriminator_);
  load_optimizer(ckpt, "opt_g.", *t.opt_g_);
  load_optimizer(ckpt, "opt_d.", *t.opt_d_);
  t.rng_.set_state(ckpt.get("rng.state"));
  t.iteration_ = ckpt.meta().at("iteration").get<std::int64_t>();
  return t;
}

// ---------------------------------------------------------------------------
// fit

namespace {

fs::path save_checkpoint(const Trainer& trainer, const fs::path& dir) {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%08lld.ckpt", static_cast<long long>(trainer.iteration()));
  const auto bytes = trainer.checkpoint().to_bytes();
  write_file_atomic(dir / name, bytes);
  write_file_atomic(dir / "latest.ckpt", bytes);
  return dir / name;
}

bool looks_like_oom(const std::string& what) {
  return what.find("out of memory") != std::string::npos ||
         what.find("DefaultCPUAllocator") != std::string::npos;
}

}  // namespace

FitResult fit(Trainer& trainer, const std::vector<TrainingPair>& dataset, const FitOptions& options) {
  if (dataset.empty()) throw ArgumentError("fit: dataset is empty");
  const auto target = options.until_iteration >= 0 ? options.until_iteration
                                                   : trainer.config().total_iterations;
  fs::create_directories(options.out_dir);
  FitResult result;
  result.last_checkpoint = save_checkpoint(trainer, options.out_dir);
  std::ofstream metrics(options.out_dir / "metrics.jsonl", std::ios::app);
  const auto start = std::chrono::steady_clock::now();

  auto abort_with = [&](const std::string& message, nlohmann::json extra) {
    result.aborted = true;
    result.diagnostic = message;
    extra["error"] = message;
    extra["iteration"] = trainer.iteration() + 1;
    extra["last_good_checkpoint"] = result.last_checkpoint.string();
    write_file_atomic(options.out_dir / "diagnostic.json", extra.dump(2));
    std::cerr << "training aborted: " << message << "\n";
  };

  while (trainer.iteration() < target) {
    StepRecord rec;
    try {
      rec = trainer.train_step(trainer.sample_batch(dataset));
    } catch (const NonFiniteError& e) {
      abort_with(e.what(), nlohmann::json::object());
      break;
    } catch (const std::bad_alloc&) {
      abort_with("out of memory", {{"suggestion", "reduce image_side or generator.block_counts"}});
      break;
    } catch (const c10::Error& e) {
      if (!looks_like_oom(e.what())) throw;
      abort_with(e.what(), {{"suggestion", "reduce image_side or generator.block_counts"}});
      break;
    }
    auto line = rec.to_json();
    line["wall_time"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics << line.dump() << "\n";
    if (options.on_step) options.on_step(rec);
    result.records.push_back(rec);
    if (trainer.iteration() % trainer.config().checkpoint_every == 0 || trainer.iteration() == target) {
      metrics.flush();
      result.last_checkpoint = save_checkpoint(trainer, options.out_dir);
    }
  }
  return result;
}

}  // namespace linecolor::train
