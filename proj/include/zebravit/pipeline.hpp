#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zebravit/checkpoint.hpp"
#include "zebravit/data_model.hpp"
#include "zebravit/decision.hpp"
#include "zebravit/plot.hpp"
#include "zebravit/run_config.hpp"
#include "zebravit/synthetic.hpp"
#include "zebravit/training.hpp"

// Subcommand bodies shared by the command-line tool and the tests. Every
// function validates its inputs before doing work and throws on failure.
namespace zebravit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr char kSplitFile[] = "split.txt";
inline constexpr char kMetricsFile[] = "metrics.jsonl";
inline constexpr char kCheckpointDir[] = "checkpoint";
inline constexpr char kTrainConfigFile[] = "train.config";
inline constexpr char kDecisionsFile[] = "decisions.jsonl";
inline constexpr char kDecisionMetricsFile[] = "decision_metrics.json";
inline constexpr char kTracesFile[] = "traces.jsonl";

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_config(const RunConfig& rc, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  rc.to_keyvalues().save(dir / (command + ".config"));
}

inline void write_json(const fs::path& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open " + path.string());
  return json::parse(in);
}

inline std::vector<SequenceRecord> load_manifest(const RunConfig& rc) {
  if (rc.manifest.empty()) throw PipelineError("no manifest given");
  if (!fs::exists(rc.manifest)) throw PipelineError("manifest not found: " + rc.manifest.string());
  return parse_manifest(rc.manifest, rc.task_spec());
}

inline FrameStore frame_store(const RunConfig& rc, const ModelConfig& model) {
  return FrameStore::from_directory(rc.manifest.parent_path(), model);
}

inline fs::path require_out(const RunConfig& rc) {
  if (rc.out_dir.empty()) throw PipelineError("no output directory given");
  return rc.out_dir;
}

inline fs::path require_run(const RunConfig& rc) {
  if (rc.run_dir.empty()) throw PipelineError("no run directory given");
  if (!fs::is_directory(rc.run_dir)) throw PipelineError("run directory not found: " + rc.run_dir.string());
  return rc.run_dir;
}

// ---------------------------------------------------------------- generate

inline void print_report(const ValidationReport& report, std::ostream& out) {
  out << "sequences: " << report.n_sequences << "\nframes: " << report.total_frames << '\n';
  for (const auto& [label, count] : report.class_counts) out << "  " << label << ": " << count << '\n';
  out << "violations: " << report.violations.size() << '\n';
  for (const auto& v : report.violations) out << "  " << v << '\n';
}

/// Renders a synthetic dataset into out_dir and returns its validation report.
inline ValidationReport generate(RunConfig rc, std::ostream* log = nullptr) {
  const auto out = require_out(rc);
  rc.manifest = generate_dataset(rc.synth_config(), out);
  write_config(rc, out, "generate");
  const auto report = validate_dataset(parse_manifest(rc.manifest, rc.task_spec()), rc.task_spec());
  if (log) {
    *log << "wrote " << rc.manifest.string() << '\n';
    print_report(report, *log);
  }
  return report;
}

// ---------------------------------------------------------------- validate

/// Parses and checks a manifest. Malformed rows are reported as violations.
inline ValidationReport validate(const RunConfig& rc) {
  std::vector<SequenceRecord> seqs;
  try {
    seqs = load_manifest(rc);
  } catch (const ManifestError& e) {
    ValidationReport report;
    report.violations.push_back(e.what());
    return report;
  }
  auto report = validate_dataset(seqs, rc.task_spec());
  if (!rc.out_dir.empty()) write_config(rc, rc.out_dir, "validate");
  return report;
}

// ------------------------------------------------------------------- split

inline void write_split(const fs::path& path, const DatasetSplit& split) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  for (const auto& s : split.train) out << "train " << s.id() << '\n';
  for (const auto& s : split.validation) out << "validation " << s.id() << '\n';
  for (const auto& s : split.test) out << "test " << s.id() << '\n';
}

/// Rebuilds a persisted split from the manifest's sequences.
inline DatasetSplit read_split(const fs::path& path, const std::vector<SequenceRecord>& sequences) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open " + path.string());
  std::map<std::string, const SequenceRecord*> by_id;
  for (const auto& s : sequences) by_id[s.id()] = &s;
  DatasetSplit split;
  std::string part, id;
  while (in >> part >> id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw PipelineError("split lists sequence " + id + " which is not in the manifest");
    if (part == "train") split.train.push_back(*it->second);
    else if (part == "validation") split.validation.push_back(*it->second);
    else if (part == "test") split.test.push_back(*it->second);
    else throw PipelineError("unknown split '" + part + "' in " + path.string());
  }
  return split;
}

inline const std::vector<SequenceRecord>& split_part(const DatasetSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "validation") return split.validation;
  if (name == "test") return split.test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

// ------------------------------------------------------------------- train

inline json epoch_record(const EpochLog& e) {
  json j{{"epoch", e.epoch}, {"steps", e.steps}, {"train_loss", e.train_loss}};
  j["val_metric"] = e.val_metric ? json(*e.val_metric) : json(nullptr);
  return j;
}

/// Splits the manifest, trains, and fills out_dir with the checkpoint, split,
/// per-epoch metrics and summary.
inline TrainResult train(const RunConfig& rc, std::ostream* log = nullptr) {
  const auto out = require_out(rc);
  const auto spec = rc.task_spec();
  const auto sequences = load_manifest(rc);
  const auto report = validate_dataset(sequences, spec);
  if (!report.valid())
    throw PipelineError("manifest " + rc.manifest.string() + " has " + std::to_string(report.violations.size()) +
                        " violations; first: " + report.violations.front());
  const auto split = split_dataset(definitive_sequences(sequences), spec, rc.split, rc.seed);

  fs::create_directories(out);
  write_config(rc, out, "train");
  write_split(out / kSplitFile, split);
  std::ofstream metrics(out / kMetricsFile);
  if (!metrics) throw PipelineError("cannot write " + (out / kMetricsFile).string());

  auto frames = frame_store(rc, rc.model);
  auto result = zebravit::train(split.train, split.validation, spec, rc.model, rc.train, frames,
                                [&](const EpochLog& e) {
                                  metrics << epoch_record(e).dump() << '\n' << std::flush;
                                  if (log) {
                                    *log << "epoch " << e.epoch << " steps " << e.steps << " loss " << e.train_loss;
                                    if (e.val_metric) *log << " val " << *e.val_metric;
                                    *log << '\n';
                                  }
                                });
  save_checkpoint(out / kCheckpointDir, rc.model, rc.task, rc.seed, result.params);
  json summary{{"best_epoch", result.best_epoch},
               {"steps", result.step_losses.size()},
               {"train_sequences", split.train.size()},
               {"validation_sequences", split.validation.size()},
               {"test_sequences", split.test.size()},
               {"final_train_loss", result.log.empty() ? 0.0 : result.log.back().train_loss}};
  summary["best_val_metric"] = result.best_metric ? json(*result.best_metric) : json(nullptr);
  write_json(out / "train_summary.json", summary);
  return result;
}

// --------------------------------------------------------- trained run I/O

struct LoadedRun {
  Model<float> model;
  std::vector<SequenceRecord> sequences;
  DatasetSplit split;
};

inline LoadedRun load_run(const RunConfig& rc) {
  const auto run = require_run(rc);
  auto ck = load_checkpoint(run / kCheckpointDir);
  if (ck.task != rc.task)
    throw PipelineError("run " + run.string() + " was trained for task " + std::string(to_string(ck.task)));
  ck.config.dropout = 0.0;
  LoadedRun loaded{Model<float>{ck.config, std::move(ck.params)}, load_manifest(rc), {}};
  loaded.split = read_split(run / kSplitFile, loaded.sequences);
  return loaded;
}

// ---------------------------------------------------------------- evaluate

struct Evaluation {
  std::string split;
  FrameAccuracy frames;
  double sequence_accuracy = 0.0;
  std::size_t n_sequences = 0;
};

inline Evaluation evaluate(const RunConfig& rc) {
  const auto loaded = load_run(rc);
  const auto& part = split_part(loaded.split, rc.eval_split);
  auto frames = frame_store(rc, loaded.model.config);
  Evaluation ev{rc.eval_split, evaluate_frames(loaded.model, frames, part, rc.task_spec()), 0.0, part.size()};
  if (!part.empty())
    ev.sequence_accuracy = final_sequence_accuracy(loaded.model, frames, part, rc.task_spec(), rc.window);
  const auto out = rc.out_dir.empty() ? rc.run_dir : rc.out_dir;
  write_config(rc, out, "evaluate");
  write_json(out / "evaluation.json", json{{"split", ev.split},
                                           {"frame_accuracy", ev.frames.accuracy()},
                                           {"frames_correct", ev.frames.correct},
                                           {"frames_total", ev.frames.total},
                                           {"sequence_accuracy", ev.sequence_accuracy},
                                           {"sequences", ev.n_sequences},
                                           {"window", rc.window}});
  return ev;
}

// ------------------------------------------------------------------ decide

/// Frame-level (probability of class 1, target) pairs over included frames.
inline void frame_calibration_pairs(const std::vector<PredictionTrace>& traces,
                                    const std::vector<SequenceRecord>& sequences, const TaskSpec& spec,
                                    std::vector<double>& probs, std::vector<int>& targets) {
  for (std::size_t s = 0; s < sequences.size(); ++s)
    for (const auto& f : sequences[s].frames)
      if (const auto target = frame_target(f.frame_label, spec)) {
        probs.push_back(positive_probability(traces[s].raw[static_cast<std::size_t>(f.frame_index)]));
        targets.push_back(*target);
      }
}

/// Chooses window and thresholds (fixed or fitted on validation traces) and
/// applies causal smoothing to `test` in place.
inline std::pair<int, std::vector<double>> fit_decision_rule(const RunConfig& rc, std::vector<PredictionTrace> validation,
                                                             std::vector<PredictionTrace>& test, int n_frames) {
  int window = rc.window;
  std::vector<double> thresholds(static_cast<std::size_t>(n_frames), rc.threshold);
  if (rc.decision_mode == DecisionMode::optimized) {
    if (validation.empty()) throw PipelineError("optimized thresholds need a non-empty validation split");
    window = select_smoothing_window(validation, default_window_candidates(), rc.window);
    for (auto& tr : validation) apply_smoothing(tr, window, SmoothingMode::causal);
    thresholds = optimize_thresholds(validation, ThresholdOptions{default_threshold_grid(), rc.target_precision});
  }
  for (auto& tr : test) apply_smoothing(tr, window, SmoothingMode::causal);
  return {window, thresholds};
}

inline json vector_json(const std::vector<std::vector<double>>& v) {
  json arr = json::array();
  for (const auto& y : v) arr.push_back(y);
  return arr;
}

inline json report_json(const DecisionReport& report, const RunConfig& rc, const std::string& split) {
  json bins = json::array();
  for (const auto& b : report.calibration.bins)
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_predicted", b.mean_predicted},
                    {"positive_rate", b.positive_rate}});
  std::size_t decided = 0;
  for (const auto& s : report.sequences) decided += s.decision.decided ? 1 : 0;
  return json{{"split", split},
              {"mode", rc.decision_mode == DecisionMode::optimized ? "optimized" : "threshold"},
              {"window", report.window},
              {"thresholds", report.thresholds},
              {"accuracy_vs_time", report.accuracy_vs_time},
              {"final_accuracy", report.final_accuracy},
              {"decided_accuracy", report.decided_accuracy},
              {"mean_decision_time", report.mean_decision_time},
              {"decided_sequences", decided},
              {"sequences", report.sequences.size()},
              {"ece", report.calibration.ece},
              {"reliability_bins", bins}};
}

/// Earliest decisions on the chosen split with thresholds from the
/// validation split (optimized) or a fixed threshold.
inline DecisionReport decide(const RunConfig& rc, std::ostream* log = nullptr) {
  const auto loaded = load_run(rc);
  const auto spec = rc.task_spec();
  auto frames = frame_store(rc, loaded.model.config);
  const auto& part = split_part(loaded.split, rc.eval_split);
  if (part.empty()) throw PipelineError("split '" + rc.eval_split + "' is empty");
  auto test = predict_traces(loaded.model, frames, part, spec);
  std::vector<PredictionTrace> validation;
  if (rc.decision_mode == DecisionMode::optimized)
    validation = predict_traces(loaded.model, frames, loaded.split.validation, spec);
  const auto [window, thresholds] = fit_decision_rule(rc, std::move(validation), test, spec.frames_per_sequence);

  std::vector<double> probs;
  std::vector<int> targets;
  frame_calibration_pairs(test, part, spec, probs, targets);
  auto report = build_report(test, thresholds, window, probs, targets);

  const auto out = rc.out_dir.empty() ? rc.run_dir : rc.out_dir;
  write_config(rc, out, "decide");
  {
    std::ofstream decisions(out / kDecisionsFile);
    std::ofstream traces(out / kTracesFile);
    if (!decisions || !traces) throw PipelineError("cannot write decision outputs in " + out.string());
    for (std::size_t i = 0; i < report.sequences.size(); ++i) {
      const auto& s = report.sequences[i];
      json d{{"id", s.id},
             {"t_star", s.decision.time},
             {"verdict", class_name(s.decision.verdict, spec)},
             {"decided", s.decision.decided}};
      d["label"] = s.label ? json(class_name(*s.label, spec)) : json(nullptr);
      d["correct"] = s.correct();
      decisions << d.dump() << '\n';
      json tr{{"id", test[i].id}, {"raw", vector_json(test[i].raw)}, {"smoothed", vector_json(test[i].smoothed)},
              {"confidence", test[i].confidence}};
      tr["label"] = test[i].label ? json(*test[i].label) : json(nullptr);
      traces << tr.dump() << '\n';
    }
  }
  write_json(out / kDecisionMetricsFile, report_json(report, rc, rc.eval_split));
  if (log)
    *log << "window " << window << ", final accuracy " << report.final_accuracy << ", decided accuracy "
         << report.decided_accuracy << ", mean t* " << report.mean_decision_time << ", ECE " << report.calibration.ece
         << '\n';
  return report;
}

// -------------------------------------------------------------------- plot

/// Renders the four figures from a decide output directory.
inline std::vector<fs::path> plot(const RunConfig& rc) {
  const auto source = rc.run_dir.empty() ? require_out(rc) : require_run(rc);
  const auto metrics = read_json(source / kDecisionMetricsFile);
  std::vector<PredictionTrace> traces;
  {
    std::ifstream in(source / kTracesFile);
    if (!in) throw PipelineError("cannot open " + (source / kTracesFile).string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      PredictionTrace tr;
      tr.id = j.at("id").get<std::string>();
      if (!j.at("label").is_null()) tr.label = j.at("label").get<int>();
      tr.raw = j.at("raw").get<std::vector<std::vector<double>>>();
      tr.smoothed = j.at("smoothed").get<std::vector<std::vector<double>>>();
      tr.confidence = j.at("confidence").get<std::vector<double>>();
      traces.push_back(std::move(tr));
    }
  }
  Calibration cal;
  cal.ece = metrics.at("ece").get<double>();
  for (const auto& b : metrics.at("reliability_bins"))
    cal.bins.push_back({b.at("lower").get<double>(), b.at("upper").get<double>(), b.at("count").get<std::size_t>(),
                        b.at("mean_predicted").get<double>(), b.at("positive_rate").get<double>()});

  // Class 1 is normal development for fertility, anomalous for toxicity.
  const bool positive_is_normal = rc.task == TaskKind::fertility;
  const auto out = rc.out_dir.empty() ? source / "plots" : rc.out_dir;
  fs::create_directories(out);
  write_config(rc, out, "plot");
  std::vector<fs::path> files{out / "probability_traces.svg", out / "accuracy_vs_time.svg", out / "reliability.svg",
                              out / "confidence_vs_time.svg"};
  plot::write_svg(files[0], plot::probability_traces(traces, positive_is_normal));
  plot::write_svg(files[1], plot::accuracy_over_time(metrics.at("accuracy_vs_time").get<std::vector<double>>()));
  plot::write_svg(files[2], plot::reliability_diagram(cal));
  plot::write_svg(files[3], plot::confidence_over_time(traces, positive_is_normal));
  return files;
}

}  // namespace zebravit::pipeline
