// linecolor command line: data forging, extractor pretraining, training,
// colorization, evaluation and the HTTP service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "linecolor/checkpoint.hpp"
#include "linecolor/errors.hpp"
#include "linecolor/evaluation.hpp"
#include "linecolor/extractors.hpp"
#include "linecolor/image_io.hpp"
#include "linecolor/inference.hpp"
#include "linecolor/manifest.hpp"
#include "linecolor/pipeline.hpp"
#include "linecolor/service.hpp"
#include "linecolor/synthetic.hpp"
#include "linecolor/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace linecolor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 2;
constexpr int kExitModelLoad = 3;
constexpr int kExitDecode = 4;
constexpr int kExitFailure = 1;

struct ExitError : std::runtime_error {
  ExitError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
  int code;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ExitError(kExitBadArgs, "cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ExitError(kExitBadArgs, "config " + path.string() + " is not valid JSON: " + e.what());
  }
}

// Runs a subcommand body, maps exceptions to exit codes and appends the
// run manifest next to the outputs.
int run_command(RunManifest manifest, const fs::path& manifest_dir,
                const std::function<void(RunManifest&)>& body) {
  manifest.started_at = utc_timestamp();
  int code = kExitOk;
  try {
    body(manifest);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = e.code;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = kExitBadArgs;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = kExitModelLoad;
  } catch (const DataValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = kExitDecode;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = kExitFailure;
  }
  manifest.finished_at = utc_timestamp();
  manifest.exit_code = code;
  try {
    if (!manifest_dir.empty()) {
      fs::create_directories(manifest_dir);
      append_run_manifest(manifest_dir, manifest);
    }
  } catch (const std::exception& e) {
    std::cerr << "warning: could not append run manifest: " << e.what() << "\n";
  }
  return code;
}

fs::path parent_or_cwd(const fs::path& p) {
  const auto parent = p.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// Loads F1 or F2 from a standalone extractor checkpoint or from a trainer
// checkpoint, which stores them under "f1." and "f2.".
template <typename Features>
Features load_extractor(const fs::path& path, const std::string& trainer_prefix) {
  const auto ckpt = Checkpoint::load(path);
  if (ckpt.architecture_tag() == train::kTrainerTag) return Features::from_checkpoint(ckpt, trainer_prefix);
  return Features::from_checkpoint(ckpt);
}

// ---------------------------------------------------------------------------

struct ForgeArgs {
  std::string input, output;
  int side = 128;
  std::uint64_t seed = 0;
  double kappa = 4.5, tau = 0.95, phi = 1e9, epsilon = 0.0;
};

void add_forge(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<ForgeArgs>();
  auto* cmd = app.add_subcommand("forge", "Convert illustrations into aligned line-art/colour training pairs");
  cmd->add_option("--input", args->input, "Directory of PNG/JPEG illustrations")->required();
  cmd->add_option("--output", args->output, "Directory for <id>_line.png, <id>_color.png and manifest.json")
      ->required();
  cmd->add_option("--side", args->side, "Resize so the shorter side equals this")->capture_default_str();
  cmd->add_option("--seed", args->seed, "Run seed; per-item seeds derive from it")->capture_default_str();
  cmd->add_option("--kappa", args->kappa, "XDoG scale ratio of the wide Gaussian")->capture_default_str();
  cmd->add_option("--tau", args->tau, "XDoG weight of the wide Gaussian")->capture_default_str();
  cmd->add_option("--phi", args->phi, "XDoG soft-threshold sharpness")->capture_default_str();
  cmd->add_option("--epsilon", args->epsilon, "XDoG threshold")->capture_default_str();
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "forge";
    m.seed = args->seed;
    m.inputs = {args->input};
    m.outputs = {args->output};
    return run_command(m, args->output, [&](RunManifest& man) {
      if (!fs::is_directory(args->input)) throw ExitError(kExitBadArgs, "input directory not found: " + args->input);
      data::ForgeOptions opt;
      opt.side = args->side;
      opt.seed = args->seed;
      opt.xdog.kappa = args->kappa;
      opt.xdog.tau = args->tau;
      opt.xdog.phi = args->phi;
      opt.xdog.epsilon = args->epsilon;
      opt.xdog.validate();
      man.config = {{"side", opt.side}, {"xdog", {{"kappa", args->kappa}, {"tau", args->tau},
                                                   {"phi", args->phi}, {"epsilon", args->epsilon}}}};
      const auto manifest = data::forge_directory(args->input, args->output, opt);
      std::cout << "forged " << manifest["files"].size() << " pairs, skipped " << manifest["skipped"].size()
                << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int count = 200;
  int side = 128;
  std::uint64_t seed = 0;
};

void add_synth(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<SynthArgs>();
  auto* cmd = app.add_subcommand("synth", "Write a procedural illustration corpus for smoke tests");
  cmd->add_option("--out", args->out, "Output directory")->required();
  cmd->add_option("--count", args->count, "Number of images")->capture_default_str();
  cmd->add_option("--side", args->side, "Image side in pixels")->capture_default_str();
  cmd->add_option("--seed", args->seed, "Generator seed")->capture_default_str();
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "synth";
    m.seed = args->seed;
    m.outputs = {args->out};
    m.config = {{"count", args->count}, {"side", args->side}};
    return run_command(m, args->out, [&](RunManifest&) {
      const auto paths = data::write_synthetic_corpus(args->out, args->count, args->side, args->seed);
      std::cout << "wrote " << paths.size() << " images to " << args->out << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string data, out, config;
  std::optional<int> channels, side, iterations, batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

void add_pretrain(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<PretrainArgs>();
  auto* cmd = app.add_subcommand(
      "pretrain-f1", "Pretrain the local feature extractor (f1.ckpt) and the perceptual extractor (f2.ckpt)");
  cmd->add_option("--data", args->data, "Directory written by forge")->required();
  cmd->add_option("--out", args->out, "Output directory for f1.ckpt, f2.ckpt and pretrain.json")->required();
  cmd->add_option("--config", args->config, "JSON config; flags override its keys");
  cmd->add_option("--channels", args->channels, "Output feature channels (default 128)");
  cmd->add_option("--side", args->side, "Training crop side (default 64)");
  cmd->add_option("--iterations", args->iterations, "Optimizer steps per extractor (default 300)");
  cmd->add_option("--batch", args->batch, "Batch size (default 16)");
  cmd->add_option("--lr", args->lr, "Adam learning rate (default 1e-3)");
  cmd->add_option("--seed", args->seed, "Seed (default 0)");
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "pretrain-f1";
    m.inputs = {args->data};
    const fs::path out = args->out;
    m.outputs = {(out / "f1.ckpt").string(), (out / "f2.ckpt").string()};
    return run_command(m, out, [&](RunManifest& man) {
      json cfg = args->config.empty() ? json::object() : read_json_file(args->config);
      if (args->channels) cfg["channels"] = *args->channels;
      if (args->side) cfg["side"] = *args->side;
      if (args->iterations) cfg["iterations"] = *args->iterations;
      if (args->batch) cfg["batch_size"] = *args->batch;
      if (args->lr) cfg["learning_rate"] = *args->lr;
      if (args->seed) cfg["seed"] = *args->seed;
      const auto config = features::PretrainConfig::from_json(cfg);
      man.config = config.to_json();
      man.seed = config.seed;
      const auto corpus = data::load_forged_pairs(args->data);
      fs::create_directories(out);
      auto f1 = features::pretrain_local(corpus, config);
      f1.checkpoint.save(out / "f1.ckpt");
      auto f2 = features::pretrain_perceptual(corpus, config);
      f2.checkpoint.save(out / "f2.ckpt");
      const json report{{"config", man.config},
                        {"corpus_size", corpus.size()},
                        {"f1_held_out_loss", f1.held_out_loss},
                        {"f2_held_out_loss", f2.held_out_loss}};
      write_file_atomic(out / "pretrain.json", report.dump(2));
      std::cout << "f1 held-out loss " << f1.held_out_loss.front() << " -> " << f1.held_out_loss.back() << "\n"
                << "f2 held-out loss " << f2.held_out_loss.front() << " -> " << f2.held_out_loss.back() << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume;
  std::string f1, f2, scale;
  std::optional<std::int64_t> iterations, drop, checkpoint_every;
  std::optional<int> batch, side;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
};

void add_train(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<TrainArgs>();
  auto* cmd = app.add_subcommand("train", "Train the colorization generator and critic");
  cmd->add_option("--config", args->config, "JSON training config; flags override its keys");
  cmd->add_option("--data", args->data, "Directory written by forge")->required();
  cmd->add_option("--out", args->out, "Run directory for checkpoints, metrics.jsonl and config.json")->required();
  cmd->add_option("--resume", args->resume, "Trainer checkpoint to continue from");
  cmd->add_option("--scale", args->scale, "Default set: desk or paper");
  cmd->add_option("--f1", args->f1, "Local feature extractor checkpoint (config key f1_checkpoint)");
  cmd->add_option("--f2", args->f2, "Perceptual extractor checkpoint (config key f2_checkpoint)");
  cmd->add_option("--iterations", args->iterations, "Total iterations (config key total_iterations)");
  cmd->add_option("--drop", args->drop, "Iteration of the learning-rate drop (config key drop_iteration)");
  cmd->add_option("--checkpoint-every", args->checkpoint_every, "Checkpoint period in iterations");
  cmd->add_option("--batch", args->batch, "Batch size (config key batch_size)");
  cmd->add_option("--side", args->side, "Training crop side (config key image_side)");
  cmd->add_option("--lr", args->lr, "Initial learning rate (config key lr_initial)");
  cmd->add_option("--seed", args->seed, "Run seed");
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "train";
    m.inputs = {args->data};
    if (!args->resume.empty()) m.inputs.push_back(args->resume);
    const fs::path out = args->out;
    m.outputs = {out.string()};
    return run_command(m, out, [&](RunManifest& man) {
      json overrides = json::object();
      if (!args->scale.empty()) overrides["scale"] = args->scale;
      if (!args->f1.empty()) overrides["f1_checkpoint"] = args->f1;
      if (!args->f2.empty()) overrides["f2_checkpoint"] = args->f2;
      if (args->iterations) overrides["total_iterations"] = *args->iterations;
      if (args->drop) overrides["drop_iteration"] = *args->drop;
      if (args->checkpoint_every) overrides["checkpoint_every"] = *args->checkpoint_every;
      if (args->batch) overrides["batch_size"] = *args->batch;
      if (args->side) overrides["image_side"] = *args->side;
      if (args->lr) overrides["lr_initial"] = *args->lr;
      if (args->seed) overrides["seed"] = *args->seed;

      const auto dataset = data::load_forged_pairs(args->data);
      std::optional<train::Trainer> trainer;
      std::int64_t until = -1;
      if (!args->resume.empty()) {
        trainer.emplace(train::Trainer::from_checkpoint(Checkpoint::load(args->resume)));
        // Only the schedule length may change on resume; everything else is
        // fixed by the checkpoint.
        if (args->iterations) until = *args->iterations;
        std::cout << "resumed at iteration " << trainer->iteration() << "\n";
      } else {
        json cfg = args->config.empty() ? json::object() : read_json_file(args->config);
        cfg.merge_patch(overrides);
        auto config = train::TrainConfig::from_json(cfg);
        if (config.f1_checkpoint.empty() || config.f2_checkpoint.empty()) {
          throw ExitError(kExitBadArgs, "train needs f1_checkpoint and f2_checkpoint (config or --f1/--f2)");
        }
        auto f1 = load_extractor<features::LocalFeatures>(config.f1_checkpoint, "f1.");
        auto f2 = load_extractor<features::PerceptualFeatures>(config.f2_checkpoint, "f2.");
        trainer.emplace(config, std::move(f1), std::move(f2));
      }
      man.config = trainer->config().to_json();
      man.seed = trainer->config().seed;
      fs::create_directories(out);
      write_file_atomic(out / "config.json", man.config.dump(2));

      train::FitOptions options;
      options.out_dir = out;
      options.until_iteration = until;
      options.on_step = [](const train::StepRecord& r) {
        if (r.iteration % 50 == 0) {
          std::cout << "iter " << r.iteration << " content " << r.report.content << " critic "
                    << r.report.critic << " gp " << r.report.grad_penalty << "\n";
        }
      };
      const auto result = train::fit(*trainer, dataset, options);
      man.outputs.push_back(result.last_checkpoint.string());
      if (result.aborted) throw std::runtime_error("training aborted: " + result.diagnostic);
      std::cout << "finished at iteration " << trainer->iteration() << ", checkpoint "
                << result.last_checkpoint.string() << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct ColorizeArgs {
  std::string line, strokes, checkpoint, out;
};

void add_colorize(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<ColorizeArgs>();
  auto* cmd = app.add_subcommand("colorize", "Colorize one line art, optionally guided by RGBA colour strokes");
  cmd->add_option("--line", args->line, "Line-art PNG/JPEG")->required();
  cmd->add_option("--strokes", args->strokes, "RGBA PNG of colour strokes, same size as the line art");
  cmd->add_option("--checkpoint", args->checkpoint, "Trainer checkpoint")->required();
  cmd->add_option("--out", args->out, "Output PNG path")->required();
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "colorize";
    m.inputs = {args->line, args->checkpoint};
    if (!args->strokes.empty()) m.inputs.push_back(args->strokes);
    m.outputs = {args->out};
    m.config = {{"strokes", !args->strokes.empty()}};
    return run_command(m, parent_or_cwd(args->out), [&](RunManifest&) {
      if (!fs::is_regular_file(args->line)) throw ExitError(kExitBadArgs, "line art not found: " + args->line);
      if (!args->strokes.empty() && !fs::is_regular_file(args->strokes)) {
        throw ExitError(kExitBadArgs, "strokes not found: " + args->strokes);
      }
      std::shared_ptr<inference::ColorModel> model;
      try {
        model = inference::ColorModel::load(args->checkpoint, fs::path(args->checkpoint).stem().string());
      } catch (const std::exception& e) {
        throw ExitError(kExitModelLoad, "cannot load model " + args->checkpoint + ": " + e.what());
      }
      const auto line = io::read_file(args->line);
      std::optional<io::Bytes> strokes;
      if (!args->strokes.empty()) strokes = io::read_file(args->strokes);
      std::optional<std::span<const std::uint8_t>> view;
      if (strokes) view = std::span<const std::uint8_t>(*strokes);
      const auto png = inference::colorize_png(*model, line, view);
      write_file_atomic(args->out, png);
      std::cout << "wrote " << args->out << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct AutoArgs {
  std::string input, checkpoint, out;
};

void add_auto_colorize(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<AutoArgs>();
  auto* cmd = app.add_subcommand("auto-colorize", "Colorize every line art in a directory without hints");
  cmd->add_option("--input", args->input, "Directory of line-art PNG/JPEG files")->required();
  cmd->add_option("--checkpoint", args->checkpoint, "Trainer checkpoint")->required();
  cmd->add_option("--out", args->out, "Output directory for <stem>_auto.png and manifest.json")->required();
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "auto-colorize";
    m.inputs = {args->input, args->checkpoint};
    m.outputs = {args->out};
    return run_command(m, args->out, [&](RunManifest&) {
      if (!fs::is_directory(args->input)) throw ExitError(kExitBadArgs, "input directory not found: " + args->input);
      std::shared_ptr<inference::ColorModel> model;
      try {
        model = inference::ColorModel::load(args->checkpoint, fs::path(args->checkpoint).stem().string());
      } catch (const std::exception& e) {
        throw ExitError(kExitModelLoad, "cannot load model " + args->checkpoint + ": " + e.what());
      }
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(args->input)) {
        if (e.is_regular_file() && io::is_image_file(e.path())) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      const auto report = eval::auto_colorize_set(files, *model, args->out);
      std::cout << "colorized " << report.outputs.size() << ", skipped " << report.skipped.size() << "\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct FidArgs {
  std::string set_a, set_b, embed = "f2", out, extractor;
};

void add_fid(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<FidArgs>();
  auto* cmd = app.add_subcommand("fid", "Frechet distance between two image sets under a named embedding");
  cmd->add_option("--set-a", args->set_a, "First image directory")->required();
  cmd->add_option("--set-b", args->set_b, "Second image directory")->required();
  cmd->add_option("--embed", args->embed, "Embedding: f1, f2 or external (reads <dir>/embeddings.json)")
      ->check(CLI::IsMember({"f1", "f2", "external"}))
      ->capture_default_str();
  cmd->add_option("--out", args->out, "Report JSON path")->required();
  cmd->add_option("--extractor", args->extractor,
                  "Extractor checkpoint for f1/f2: f1.ckpt, f2.ckpt or a trainer checkpoint");
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "fid";
    m.inputs = {args->set_a, args->set_b};
    m.outputs = {args->out};
    m.config = {{"embed", args->embed}};
    return run_command(m, parent_or_cwd(args->out), [&](RunManifest&) {
      for (const auto& d : {args->set_a, args->set_b}) {
        if (!fs::is_directory(d)) throw ExitError(kExitBadArgs, "image directory not found: " + d);
      }
      eval::GaussianSummary a, b;
      if (args->embed == "external") {
        a = eval::summarize(eval::load_external_embeddings(args->set_a), "external");
        b = eval::summarize(eval::load_external_embeddings(args->set_b), "external");
      } else {
        if (args->extractor.empty()) throw ExitError(kExitBadArgs, "--extractor is required for --embed " + args->embed);
        eval::Embedder embed;
        std::string tag;
        try {
          if (args->embed == "f1") {
            auto f1 = load_extractor<features::LocalFeatures>(args->extractor, "f1.");
            tag = f1.tag();
            embed = eval::local_embedder(f1);
          } else {
            auto f2 = load_extractor<features::PerceptualFeatures>(args->extractor, "f2.");
            tag = f2.tag();
            embed = eval::perceptual_embedder(f2);
          }
        } catch (const std::exception& e) {
          throw ExitError(kExitModelLoad, "cannot load extractor " + args->extractor + ": " + e.what());
        }
        a = eval::embed_set(eval::load_image_set(args->set_a), embed, tag);
        b = eval::embed_set(eval::load_image_set(args->set_b), embed, tag);
      }
      const auto result = eval::frechet_distance(a, b);
      json report = result.to_json();
      report["set_a"] = args->set_a;
      report["set_b"] = args->set_b;
      write_file_atomic(args->out, report.dump(2));
      std::cout << "fid " << result.value << " (" << result.embed_tag << ")\n";
    });
  });
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string models, bind;
  std::optional<int> max_side;
  std::size_t cache = 2;
};

service::ColorizeService* g_service = nullptr;

void add_serve(CLI::App& app, std::vector<std::function<int()>>& runners) {
  auto args = std::make_shared<ServeArgs>();
  auto* cmd = app.add_subcommand("serve", "Serve the colorization HTTP API");
  cmd->add_option("--models", args->models, "Directory of *.ckpt models (env MODEL_DIR)");
  cmd->add_option("--bind", args->bind, "HOST:PORT to listen on (env BIND_ADDR, default 127.0.0.1:8080)");
  cmd->add_option("--max-side", args->max_side, "Largest accepted image side (env MAX_SIDE, default 1024)");
  cmd->add_option("--cache", args->cache, "Models kept in memory")->capture_default_str();
  runners.push_back([cmd, args]() -> int {
    if (!*cmd) return -1;
    RunManifest m;
    m.command = "serve";
    return run_command(m, fs::path(), [&](RunManifest& man) {
      auto config = service::ServiceConfig::from_env();
      if (!args->models.empty()) config.model_dir = args->models;
      if (!args->bind.empty()) std::tie(config.host, config.port) = service::parse_bind_address(args->bind);
      if (args->max_side) config.max_side = *args->max_side;
      config.cache_capacity = args->cache;
      man.inputs = {config.model_dir.string()};
      man.config = {{"host", config.host}, {"port", config.port}, {"max_side", config.max_side}};
      if (!fs::is_directory(config.model_dir)) {
        throw ExitError(kExitBadArgs, "model directory not found: " + config.model_dir.string());
      }
      service::ColorizeService svc(config);
      g_service = &svc;
      std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
      });
      svc.models().preload_async();
      std::cout << "listening on " << config.host << ":" << config.port << "\n" << std::flush;
      const bool ok = svc.listen();
      g_service = nullptr;
      if (!ok) throw std::runtime_error("could not listen on " + config.host + ":" + std::to_string(config.port));
    });
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linecolor: line-art colorization with optional colour hints"};
  app.set_version_flag("--version", std::string(kVersionTag));
  app.require_subcommand(1);
  std::vector<std::function<int()>> runners;
  add_forge(app, runners);
  add_synth(app, runners);
  add_pretrain(app, runners);
  add_train(app, runners);
  add_colorize(app, runners);
  add_auto_colorize(app, runners);
  add_fid(app, runners);
  add_serve(app, runners);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadArgs;
  }
  for (auto& run : runners) {
    const int code = run();
    if (code >= 0) return code;
  }
  return kExitBadArgs;
}
