// zebravit command-line tool: generate, validate, train, evaluate, decide, plot.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "zebravit/pipeline.hpp"

namespace {

using zebravit::KeyValues;
using zebravit::RunConfig;
namespace fs = std::filesystem;
namespace pipeline = zebravit::pipeline;

// Layers, lowest precedence first: a trained run's config, --config, flags.
struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  KeyValues flags;
};

void merge(KeyValues& into, const KeyValues& from) {
  for (const auto& [k, v] : from.entries()) into.set(k, v);
}

RunConfig resolve(const Overrides& o, bool use_run_base) {
  KeyValues kv;
  std::optional<std::string> run;
  if (o.flags.contains("run")) run = o.flags.get("run");
  if (use_run_base && run) {
    const auto base = fs::path(*run) / pipeline::kTrainConfigFile;
    if (fs::exists(base)) {
      const auto trained = KeyValues::load(base);
      for (const auto& [k, v] : trained.entries())
        if (k != "out") kv.set(k, v);
    }
  }
  if (!o.config_file.empty()) {
    if (!fs::exists(o.config_file)) throw std::runtime_error("config file not found: " + o.config_file);
    merge(kv, KeyValues::load(o.config_file));
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  merge(kv, o.flags);
  return RunConfig::resolve(kv);
}

template <class T>
void flag(CLI::App* app, Overrides& o, const std::string& name, const std::string& key, const std::string& help) {
  app->add_option_function<T>(
         name, [&o, key](const T& v) { o.flags.set(key, v); }, help)
      ->trigger_on_parse();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal ViT for zebrafish embryo phenotyping on synthetic time-lapse data"};
  app.fallthrough();
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_file, "key=value configuration file");
  app.add_option("--set", o.sets, "override one configuration key (key=value), repeatable");
  flag<unsigned long long>(&app, o, "--seed", "seed", "global random seed");
  flag<std::string>(&app, o, "--out", "out", "output directory");
  flag<std::string>(&app, o, "--task", "task", "fertility | toxicity");

  auto* gen = app.add_subcommand("generate", "render a synthetic dataset and its manifest");
  flag<int>(gen, o, "--runs", "generate.runs", "number of 96-well runs");
  flag<double>(gen, o, "--separability", "generate.separability", "class separability in [0, 1]");
  flag<double>(gen, o, "--noise", "generate.noise_std", "pixel noise standard deviation");
  flag<int>(gen, o, "--width", "generate.image_width", "image width in pixels");
  flag<int>(gen, o, "--height", "generate.image_height", "image height in pixels");

  auto* val = app.add_subcommand("validate", "check a manifest against the task's rules");
  flag<std::string>(val, o, "--manifest", "manifest", "manifest CSV");

  auto* trn = app.add_subcommand("train", "train a model and write a run directory");
  flag<std::string>(trn, o, "--manifest", "manifest", "manifest CSV");
  flag<int>(trn, o, "--epochs", "train.max_epochs", "maximum epochs");
  flag<long long>(trn, o, "--max-steps", "train.max_steps", "optimizer step cap (0: none)");
  flag<int>(trn, o, "--batch-size", "train.batch_size", "frames per batch");

  auto* evl = app.add_subcommand("evaluate", "frame and final-frame sequence accuracy of a trained run");
  flag<std::string>(evl, o, "--run", "run", "run directory");
  flag<std::string>(evl, o, "--manifest", "manifest", "manifest CSV");
  flag<std::string>(evl, o, "--split", "evaluate.split", "train | validation | test");
  flag<int>(evl, o, "--window", "decision.window", "causal smoothing window");

  auto* dec = app.add_subcommand("decide", "earliest confident decisions, accuracy over time and calibration");
  flag<std::string>(dec, o, "--run", "run", "run directory");
  flag<std::string>(dec, o, "--manifest", "manifest", "manifest CSV");
  flag<std::string>(dec, o, "--split", "evaluate.split", "train | validation | test");
  flag<int>(dec, o, "--window", "decision.window", "causal smoothing window (fixed mode; preferred window otherwise)");
  flag<double>(dec, o, "--target-precision", "decision.target_precision", "precision target for fitted thresholds");
  auto* threshold = dec->add_option_function<double>(
      "--threshold", [&o](double v) {
        o.flags.set("decision.threshold", v);
        o.flags.set("decision.mode", "threshold");
      },
      "fixed confidence threshold");
  auto* optimized = dec->add_flag_function(
      "--optimized", [&o](std::int64_t) { o.flags.set("decision.mode", "optimized"); },
      "fit window and per-step thresholds on the validation split");
  threshold->excludes(optimized);

  auto* plt = app.add_subcommand("plot", "render SVG figures from decide outputs");
  flag<std::string>(plt, o, "--run", "run", "directory holding decide outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const bool from_run = command == "evaluate" || command == "decide" || command == "plot";
    const RunConfig rc = resolve(o, from_run);
    if (command == "generate") {
      const auto report = pipeline::generate(rc, &std::cout);
      return report.valid() ? 0 : 1;
    }
    if (command == "validate") {
      const auto report = pipeline::validate(rc);
      pipeline::print_report(report, std::cout);
      return report.valid() ? 0 : 1;
    }
    if (command == "train") {
      const auto result = pipeline::train(rc, &std::cout);
      std::cout << "best epoch " << result.best_epoch << ", checkpoint in "
                << (rc.out_dir / pipeline::kCheckpointDir).string() << '\n';
      return 0;
    }
    if (command == "evaluate") {
      const auto ev = pipeline::evaluate(rc);
      std::cout << ev.split << ": frame accuracy " << ev.frames.accuracy() << " (" << ev.frames.correct << '/'
                << ev.frames.total << "), sequence accuracy " << ev.sequence_accuracy << " over " << ev.n_sequences
                << " sequences\n";
      return 0;
    }
    if (command == "decide") {
      pipeline::decide(rc, &std::cout);
      return 0;
    }
    if (command == "plot") {
      for (const auto& f : pipeline::plot(rc)) std::cout << "wrote " << f.string() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
