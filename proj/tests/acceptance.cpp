// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fixture.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "zebravit/checkpoint.hpp"
#include "zebravit/data_model.hpp"
#include "zebravit/decision.hpp"
#include "zebravit/synthetic.hpp"
#include "zebravit/training.hpp"
#include "zebravit/vit.hpp"

using namespace zebravit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

// ---------------------------------------------------------------- 1
Outcome dataset_arithmetic() {
  const auto start = Clock::now();
  const auto dir = fs::temp_directory_path() / "zebravit_acceptance_data";
  bool ok = true;
  std::ostringstream detail;
  const struct {
    TaskKind kind;
    int runs;
    std::size_t frames, sequences;
  } cases[] = {{TaskKind::fertility, 14, 130368, 1344}, {TaskKind::toxicity, 3, 55296, 288}};
  for (const auto& c : cases) {
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.spec = task_spec(c.kind);
    cfg.n_runs = c.runs;
    cfg.seed = 1;
    cfg.image_size = {8, 8};
    const auto manifest = generate_dataset(cfg, dir);
    const auto report = validate_dataset(parse_manifest(manifest, cfg.spec), cfg.spec);
    ok = ok && report.valid() && report.total_frames == c.frames && report.n_sequences == c.sequences;
    detail << to_string(c.kind) << " " << report.total_frames << " frames / " << report.n_sequences << " sequences, "
           << report.violations.size() << " violations; ";
  }
  fs::remove_all(dir);
  const double elapsed = seconds_since(start);
  detail << fmt("%.0fs of 300s", elapsed);
  return {ok && elapsed < 300.0, detail.str()};
}

// ---------------------------------------------------------------- 2
Outcome split_reproduction() {
  SynthConfig cfg;
  cfg.n_runs = 14;
  cfg.seed = 2;
  std::vector<SequenceRecord> seqs;
  for (const auto& p : sample_sequence_params(cfg)) seqs.push_back(sequence_record(p, cfg.spec));
  const auto a = split_dataset(seqs, cfg.spec, {0.70, 0.15, 0.15}, 7);
  const auto b = split_dataset(seqs, cfg.spec, {0.70, 0.15, 0.15}, 7);
  const bool same = a.train == b.train && a.validation == b.validation && a.test == b.test;
  const bool sizes = seqs.size() == 1344 && a.train.size() == 942 && a.validation.size() == 201 && a.test.size() == 201;
  return {same && sizes, std::to_string(seqs.size()) + " -> " + std::to_string(a.train.size()) + "/" +
                             std::to_string(a.validation.size()) + "/" + std::to_string(a.test.size()) +
                             (same ? ", identical across runs" : ", differs across runs")};
}

// ---------------------------------------------------------------- 3
Outcome gradient_check() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (int target : {0, 1}) worst = std::max(worst, gradcheck::max_error(gradcheck::run(gradcheck::tiny_config(1), 3, target)));
  const double elapsed = seconds_since(start);
  return {worst <= 1e-4 && elapsed < 120.0, fmt("max relative error %.2e", worst) + fmt(", %.1fs of 120s", elapsed)};
}

// ---------------------------------------------------------------- 4
Outcome overfit_sanity() {
  const auto start = Clock::now();
  const auto set = fixture::make_set(TaskKind::fertility, 1, 3, 16);
  const auto spec = set.config.spec;
  const auto train_set = fixture::balanced_subset(set.records, spec, 8);
  const auto mc = fixture::tiny_model(spec);
  auto store = set.store(mc);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.max_epochs = 1000;
  tc.max_steps = 200;
  tc.dropout = 0.0;
  const auto r = train(train_set, {}, spec, mc, tc, store);
  const auto acc = evaluate_frames(Model<float>{mc, r.params}, store, train_set, spec);
  const double elapsed = seconds_since(start);
  return {train_set.size() == 8 && acc.total > 0 && acc.correct == acc.total && elapsed < 180.0,
          std::to_string(acc.correct) + "/" + std::to_string(acc.total) + " train frames after " +
              std::to_string(r.step_losses.size()) + " steps" + fmt(", %.0fs of 180s", elapsed)};
}

// ---------------------------------------------------------------- 5
struct EndToEnd {
  TaskKind kind;
  int runs;
  long steps;
};

Outcome end_to_end(const EndToEnd& e) {
  const auto start = Clock::now();
  const auto set = fixture::make_set(e.kind, e.runs, 11, 64);
  const auto spec = set.config.spec;
  const auto split = split_dataset(definitive_sequences(set.records), spec, {0.70, 0.15, 0.15}, 11);

  auto mc = ModelConfig::for_task(spec);
  mc.image_height = mc.image_width = 64;
  mc.patch_size = 8;
  mc.hidden_dim = 128;
  mc.n_layers = 4;
  mc.n_heads = 4;
  TrainConfig tc;  // default Adam settings, dropout 0.2
  tc.batch_size = 32;
  tc.max_epochs = 1000;
  tc.max_steps = e.steps;
  tc.eval_every = 1000;
  tc.seed = 11;
  auto store = set.store(mc);
  const auto result = train(split.train, split.validation, spec, mc, tc, store);

  mc.dropout = 0.0;
  const Model<float> model{mc, result.params};
  auto validation = predict_traces(model, store, split.validation, spec);
  auto test = predict_traces(model, store, split.test, spec);
  const int window = select_smoothing_window(validation, default_window_candidates());
  for (auto& tr : validation) apply_smoothing(tr, window, SmoothingMode::causal);
  const auto thresholds = optimize_thresholds(validation);
  for (auto& tr : test) apply_smoothing(tr, window, SmoothingMode::causal);
  const auto report = build_report(test, thresholds, window, {}, {});

  const int n = spec.frames_per_sequence;
  const double elapsed = seconds_since(start);
  const bool ok = set.records.size() >= 96 && report.final_accuracy >= 0.95 && report.decided_accuracy >= 0.90 &&
                  report.mean_decision_time < n / 2.0 && elapsed < 900.0;
  std::ostringstream detail;
  detail << to_string(e.kind) << ": " << set.records.size() << " sequences, test final accuracy "
         << fmt("%.3f", report.final_accuracy) << ", decided accuracy " << fmt("%.3f", report.decided_accuracy)
         << ", mean t* " << fmt("%.1f", report.mean_decision_time) << " of " << n << ", window " << window
         << fmt(", %.0fs of 900s", elapsed);
  return {ok, detail.str()};
}

// ---------------------------------------------------------------- 6
std::vector<PredictionTrace> random_set(Rng& rng, int count, int n, int outputs, int window) {
  std::vector<PredictionTrace> traces;
  for (int i = 0; i < count; ++i) {
    auto tr = oracle::random_trace(rng, n, outputs, std::to_string(i));
    apply_smoothing(tr, window, SmoothingMode::causal);
    traces.push_back(std::move(tr));
  }
  return traces;
}

Outcome decision_oracles() {
  Rng rng(606);
  long mismatches[4] = {0, 0, 0, 0};
  double worst_smooth = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const int outputs = 1 + static_cast<int>(rng.below(2));
    const int n = static_cast<int>(rng.between(1, 192));
    auto tr = oracle::random_trace(rng, n, outputs, "r");
    const int w = 2 * static_cast<int>(rng.between(0, (n - 1) / 2)) + 1;
    std::vector<double> series(tr.raw.size());
    for (std::size_t t = 0; t < series.size(); ++t) series[t] = tr.raw[t].back();
    for (auto mode : {SmoothingMode::centered, SmoothingMode::causal}) {
      const auto a = smooth(series, w, mode), b = oracle::smooth(series, w, mode);
      for (std::size_t t = 0; t < a.size(); ++t) worst_smooth = std::max(worst_smooth, std::abs(a[t] - b[t]));
    }

    apply_smoothing(tr, w, SmoothingMode::causal);
    std::vector<double> th(tr.raw.size());
    for (auto& x : th) x = std::round(rng.uniform() * 20) / 20;
    const auto d = earliest_decision(tr, th);
    const auto o = oracle::earliest(tr, th);
    if (d.time != o.time || d.verdict != o.verdict || d.decided != o.decided) ++mismatches[1];

    const int length = static_cast<int>(rng.between(2, 60));
    const int window = 2 * static_cast<int>(rng.below(std::min(3, (length + 1) / 2))) + 1;
    const auto traces = random_set(rng, static_cast<int>(rng.between(1, 32)), length, outputs, window);
    const double p = rng.uniform(0.5, 0.97);
    if (optimize_thresholds(traces, {default_threshold_grid(), p}) !=
        oracle::thresholds(traces, default_threshold_grid(), p))
      ++mismatches[2];

    const auto acc = accuracy_vs_time(traces);
    const auto hits = oracle::correct_counts(traces);
    const auto total = static_cast<double>(traces.size());
    for (std::size_t t = 0; t < acc.size(); ++t)
      if (acc[t] != 1.0 - (total - static_cast<double>(hits[t])) / total) {
        ++mismatches[3];
        break;
      }
  }
  mismatches[0] = worst_smooth <= 1e-12 ? 0 : 1;
  const bool ok = mismatches[0] + mismatches[1] + mismatches[2] + mismatches[3] == 0;
  return {ok, fmt("smoothing max deviation %.1e", worst_smooth) + ", earliest_decision mismatches " +
                  std::to_string(mismatches[1]) + ", optimize_thresholds mismatches " + std::to_string(mismatches[2]) +
                  ", accuracy_vs_time mismatches " + std::to_string(mismatches[3]) + " (1000 cases each)"};
}

// ---------------------------------------------------------------- 7
Outcome calibration_oracle() {
  Rng rng(707);
  std::vector<double> p(10000);
  std::vector<int> y(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform();
    y[i] = rng.bernoulli(p[i]) ? 1 : 0;
  }
  const double ece = calibration(p, y).ece;
  const std::vector<double> sure(500, 1.0);
  const std::vector<int> positive(500, 1);
  const double confident = calibration(sure, positive).ece;
  return {ece < 0.02 && confident == 0.0,
          fmt("Bernoulli ECE %.4f", ece) + fmt(", confident-correct ECE %.1f", confident)};
}

// ---------------------------------------------------------------- 8
Outcome property_suites() {
  constexpr int kCases = 1000;
  Rng rng(808);
  std::vector<std::string> failed;

  {  // temporal locality: only the class-token row depends on t
    bool ok = true;
    for (int c = 0; c < kCases && ok; ++c) {
      ModelConfig cfg;
      cfg.image_height = cfg.image_width = 8;
      cfg.patch_size = 4;
      cfg.hidden_dim = 8;
      cfg.n_heads = 2;
      cfg.n_layers = 0;
      cfg.n_timesteps = 12;
      const auto params = init_parameters<double>(cfg, rng.next_u64());
      Matrix<double> patches(cfg.n_patches(), cfg.patch_dim());
      for (Eigen::Index i = 0; i < patches.size(); ++i) patches.data()[i] = rng.normal();
      const int t1 = static_cast<int>(rng.below(12)), t2 = (t1 + 1 + static_cast<int>(rng.below(11))) % 12;
      const auto a = embed_patches(patches, t1, params, cfg), b = embed_patches(patches, t2, params, cfg);
      ok = a.bottomRows(cfg.n_patches()) == b.bottomRows(cfg.n_patches()) && a.row(0) != b.row(0);
    }
    if (!ok) failed.push_back("temporal locality");
  }
  {  // head activations
    bool softmax_ok = true, sigmoid_ok = true;
    for (int c = 0; c < kCases; ++c) {
      const double scale = std::pow(10.0, rng.uniform(-2, 2.5));
      Matrix<float> one(1, 1), two(1, 2);
      one(0, 0) = static_cast<float>(rng.normal(0, scale));
      two << static_cast<float>(rng.normal(0, scale)), static_cast<float>(rng.normal(0, scale));
      const auto s = activate(one, HeadActivation::sigmoid);
      const auto m = activate(two, HeadActivation::softmax);
      sigmoid_ok = sigmoid_ok && s(0, 0) >= 0.0f && s(0, 0) <= 1.0f;
      softmax_ok = softmax_ok && m.minCoeff() >= 0.0f && std::abs(m.sum() - 1.0f) <= 1e-6f;
    }
    if (!softmax_ok) failed.push_back("softmax normalization");
    if (!sigmoid_ok) failed.push_back("sigmoid range");
  }
  {  // smoothing bounds and affine equivariance
    bool ok = true;
    for (int c = 0; c < kCases; ++c) {
      const int n = static_cast<int>(rng.between(1, 150));
      std::vector<double> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = rng.uniform(-3, 3);
      const int w = 2 * static_cast<int>(rng.between(0, (n - 1) / 2)) + 1;
      const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5);
      std::vector<double> u(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) u[i] = a * v[i] + b;
      const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
      for (auto mode : {SmoothingMode::centered, SmoothingMode::causal}) {
        const auto sv = smooth(v, w, mode), su = smooth(u, w, mode);
        for (std::size_t i = 0; i < v.size(); ++i)
          ok = ok && sv[i] >= lo && sv[i] <= hi && std::abs(su[i] - (a * sv[i] + b)) <= 1e-9;
      }
    }
    if (!ok) failed.push_back("smoothing bounds/equivariance");
  }
  {  // t* non-decreasing in tau
    bool ok = true;
    for (int c = 0; c < kCases; ++c) {
      auto tr = oracle::random_trace(rng, 97, 1 + static_cast<int>(rng.below(2)), "m");
      apply_smoothing(tr, 2 * static_cast<int>(rng.below(7)) + 1, SmoothingMode::causal);
      int previous = -1;
      for (double tau : default_threshold_grid()) {
        const int t = earliest_decision(tr, tau).time;
        ok = ok && t >= previous;
        previous = t;
      }
    }
    if (!ok) failed.push_back("threshold monotonicity");
  }
  {  // checkpoint round trip
    const auto dir = fs::temp_directory_path() / "zebravit_acceptance_checkpoint";
    bool ok = true;
    for (int c = 0; c < kCases && ok; ++c) {
      ModelConfig mc;
      mc.image_height = mc.image_width = 8;
      mc.channels = 3;
      mc.patch_size = 4;
      mc.n_heads = static_cast<int>(rng.between(1, 2));
      mc.hidden_dim = 4 * mc.n_heads;
      mc.n_layers = static_cast<int>(rng.between(0, 2));
      mc.n_timesteps = static_cast<int>(rng.between(1, 192));
      mc.n_classes = static_cast<int>(rng.between(1, 2));
      mc.head = mc.n_classes == 1 ? HeadActivation::sigmoid : HeadActivation::softmax;
      auto params = init_parameters<float>(mc, rng.next_u64());
      for (auto& nt : params.tensors())
        for (Eigen::Index i = 0; i < nt.tensor->size(); ++i) nt.tensor->data()[i] = static_cast<float>(rng.normal());
      save_checkpoint(dir, mc, mc.n_classes == 1 ? TaskKind::fertility : TaskKind::toxicity, c, params);
      const auto back = load_checkpoint(dir, mc).params;
      const auto x = params.tensors();
      const auto y = back.tensors();
      for (std::size_t k = 0; k < x.size(); ++k)
        ok = ok && std::memcmp(x[k].tensor->data(), y[k].tensor->data(), sizeof(float) * x[k].tensor->size()) == 0;
    }
    fs::remove_all(dir);
    if (!ok) failed.push_back("checkpoint round-trip");
  }
  std::string detail = "6 suites x " + std::to_string(kCases) + " cases";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"dataset arithmetic", dataset_arithmetic},
      {"split reproduction", split_reproduction},
      {"gradient check", gradient_check},
      {"overfit sanity", overfit_sanity},
      {"end-to-end",
       [] {
         const auto f = end_to_end({TaskKind::fertility, 1, 150});
         const auto t = end_to_end({TaskKind::toxicity, 3, 300});
         return Outcome{f.pass && t.pass, f.detail + " | " + t.detail};
       }},
      {"decision-engine oracles", decision_oracles},
      {"calibration oracle", calibration_oracle},
      {"property suites", property_suites},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
