#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>

#include "zebravit/checkpoint.hpp"
#include "zebravit/data_model.hpp"
#include "zebravit/keyvalue.hpp"
#include "zebravit/synthetic.hpp"
#include "zebravit/task.hpp"
#include "zebravit/training.hpp"
#include "zebravit/vit.hpp"

namespace zebravit {

enum class DecisionMode { fixed_threshold, optimized };

/// Every setting of a run. Built from key=value text (config file plus
/// command-line overrides) and persisted in resolved form so a run can be
/// replayed with `--config <run>/run_config.txt`.
struct RunConfig {
  TaskKind task = TaskKind::fertility;
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::filesystem::path run_dir;  // trained run consumed by evaluate/decide/plot
  std::string eval_split = "test";

  ModelConfig model = ModelConfig::for_task(fertility_task());
  TrainConfig train;
  SplitRatios split;

  DecisionMode decision_mode = DecisionMode::fixed_threshold;
  double threshold = 0.9;
  int window = 13;
  double target_precision = 0.9;

  int runs = 1;
  double separability = 1.0;
  double noise_std = 0.02;
  PixelSize image_size{224, 224};

  TaskSpec task_spec() const { return task_spec_for(task); }

  static TaskSpec task_spec_for(TaskKind kind) { return zebravit::task_spec(kind); }

  SynthConfig synth_config() const {
    SynthConfig s;
    s.spec = task_spec();
    s.n_runs = runs;
    s.image_size = image_size;
    s.separability = separability;
    s.noise_std = noise_std;
    s.seed = seed;
    return s;
  }

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "task", "seed", "manifest", "out", "run", "evaluate.split",
        "model.image_height", "model.image_width", "model.channels", "model.patch_size", "model.hidden_dim",
        "model.n_layers", "model.n_heads", "model.mlp_ratio", "model.dropout", "model.n_timesteps",
        "model.n_classes", "model.head",
        "train.learning_rate", "train.weight_decay", "train.dropout", "train.batch_size", "train.max_epochs",
        "train.max_steps", "train.eval_every", "train.selection_metric", "train.selection_window",
        "train.beta1", "train.beta2", "train.epsilon",
        "split.train", "split.validation", "split.test",
        "decision.mode", "decision.threshold", "decision.window", "decision.target_precision",
        "generate.runs", "generate.separability", "generate.noise_std", "generate.image_width",
        "generate.image_height"};
    return keys;
  }

  /// Resolves defaults + overrides, then validates everything.
  static RunConfig resolve(const KeyValues& kv) {
    for (const auto& [key, value] : kv.entries())
      if (!known_keys().count(key)) throw std::invalid_argument("unknown configuration key '" + key + "'");
    RunConfig rc;
    if (kv.contains("task")) rc.task = parse_task_kind(kv.get("task"));
    kv.read_into("seed", rc.seed);
    if (kv.contains("manifest")) rc.manifest = kv.get("manifest");
    if (kv.contains("out")) rc.out_dir = kv.get("out");
    if (kv.contains("run")) rc.run_dir = kv.get("run");
    kv.read_into("evaluate.split", rc.eval_split);

    rc.model = ModelConfig::for_task(rc.task_spec());
    read_model_config(kv, rc.model, "model.");

    kv.read_into("train.learning_rate", rc.train.adam.learning_rate);
    kv.read_into("train.weight_decay", rc.train.adam.weight_decay);
    kv.read_into("train.beta1", rc.train.adam.beta1);
    kv.read_into("train.beta2", rc.train.adam.beta2);
    kv.read_into("train.epsilon", rc.train.adam.epsilon);
    kv.read_into("train.dropout", rc.train.dropout);
    kv.read_into("train.batch_size", rc.train.batch_size);
    kv.read_into("train.max_epochs", rc.train.max_epochs);
    kv.read_into("train.max_steps", rc.train.max_steps);
    kv.read_into("train.eval_every", rc.train.eval_every);
    kv.read_into("train.selection_window", rc.train.selection_window);
    if (kv.contains("train.selection_metric")) {
      const auto& m = kv.get("train.selection_metric");
      if (m == "sequence_accuracy") rc.train.selection_metric = SelectionMetric::sequence_accuracy;
      else if (m == "frame_accuracy") rc.train.selection_metric = SelectionMetric::frame_accuracy;
      else throw std::invalid_argument("unknown selection metric '" + m + "'");
    }
    rc.train.seed = rc.seed;
    if (kv.contains("model.dropout") && !kv.contains("train.dropout")) rc.train.dropout = rc.model.dropout;
    rc.model.dropout = rc.train.dropout;

    kv.read_into("split.train", rc.split.train);
    kv.read_into("split.validation", rc.split.validation);
    kv.read_into("split.test", rc.split.test);

    if (kv.contains("decision.mode")) {
      const auto& m = kv.get("decision.mode");
      if (m == "threshold") rc.decision_mode = DecisionMode::fixed_threshold;
      else if (m == "optimized") rc.decision_mode = DecisionMode::optimized;
      else throw std::invalid_argument("unknown decision mode '" + m + "'");
    }
    kv.read_into("decision.threshold", rc.threshold);
    kv.read_into("decision.window", rc.window);
    kv.read_into("decision.target_precision", rc.target_precision);

    kv.read_into("generate.runs", rc.runs);
    kv.read_into("generate.separability", rc.separability);
    kv.read_into("generate.noise_std", rc.noise_std);
    kv.read_into("generate.image_width", rc.image_size.width);
    kv.read_into("generate.image_height", rc.image_size.height);

    rc.validate();
    return rc;
  }

  void validate() const {
    const auto spec = task_spec();
    model.validate();
    if (model.n_timesteps != spec.frames_per_sequence)
      throw std::invalid_argument("model.n_timesteps must equal the task's " + std::to_string(spec.frames_per_sequence) +
                                  " frames");
    if (model.n_classes != spec.n_output_classes)
      throw std::invalid_argument("model.n_classes must be " + std::to_string(spec.n_output_classes) + " for this task");
    train.validate();
    if (eval_split != "train" && eval_split != "validation" && eval_split != "test")
      throw std::invalid_argument("evaluate.split must be train, validation or test");
    if (std::abs(split.train + split.validation + split.test - 1.0) > 1e-9)
      throw std::invalid_argument("split ratios must sum to 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("decision.threshold must be in [0, 1]");
    if (window < 1 || window % 2 == 0 || window > spec.frames_per_sequence)
      throw std::invalid_argument("decision.window must be odd, positive and at most the sequence length");
    if (!(target_precision > 0.0 && target_precision < 1.0))
      throw std::invalid_argument("decision.target_precision must be in (0, 1)");
    synth_config().validate();
  }

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("task", std::string(to_string(task)));
    kv.set("seed", static_cast<unsigned long long>(seed));
    if (!manifest.empty()) kv.set("manifest", manifest.string());
    if (!out_dir.empty()) kv.set("out", out_dir.string());
    if (!run_dir.empty()) kv.set("run", run_dir.string());
    kv.set("evaluate.split", eval_split);
    write_model_config(kv, model, "model.");
    kv.set("train.learning_rate", train.adam.learning_rate);
    kv.set("train.weight_decay", train.adam.weight_decay);
    kv.set("train.beta1", train.adam.beta1);
    kv.set("train.beta2", train.adam.beta2);
    kv.set("train.epsilon", train.adam.epsilon);
    kv.set("train.dropout", train.dropout);
    kv.set("train.batch_size", train.batch_size);
    kv.set("train.max_epochs", train.max_epochs);
    kv.set("train.max_steps", static_cast<long long>(train.max_steps));
    kv.set("train.eval_every", train.eval_every);
    kv.set("train.selection_metric",
           train.selection_metric == SelectionMetric::sequence_accuracy ? "sequence_accuracy" : "frame_accuracy");
    kv.set("train.selection_window", train.selection_window);
    kv.set("split.train", split.train);
    kv.set("split.validation", split.validation);
    kv.set("split.test", split.test);
    kv.set("decision.mode", decision_mode == DecisionMode::optimized ? "optimized" : "threshold");
    kv.set("decision.threshold", threshold);
    kv.set("decision.window", window);
    kv.set("decision.target_precision", target_precision);
    kv.set("generate.runs", runs);
    kv.set("generate.separability", separability);
    kv.set("generate.noise_std", noise_std);
    kv.set("generate.image_width", image_size.width);
    kv.set("generate.image_height", image_size.height);
    return kv;
  }
};

}  // namespace zebravit
