#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zebravit {

enum class SmoothingMode { centered, causal };

/// Per-sequence model outputs over time. `raw[t]` holds o probabilities
/// (o = 1: probability of class 1; o = 2: both class probabilities).
/// `label` is the sequence's class index when known.
struct PredictionTrace {
  std::string id;
  std::optional<int> label;
  std::vector<std::vector<double>> raw;
  std::vector<std::vector<double>> smoothed;
  std::vector<double> confidence;

  int length() const { return static_cast<int>(raw.size()); }
};

/// Moving average over a scalar series.
///
/// centered: window shrinks symmetrically near the ends, so position t
/// averages [t - r, t + r] with r = min(w/2, t, N-1-t).
/// causal: averages the most recent min(w, t+1) values.
inline std::vector<double> smooth(std::span<const double> values, int window, SmoothingMode mode) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("smoothing window must be odd and positive");
  const int n = static_cast<int>(values.size());
  if (n > 0 && window > n) throw std::invalid_argument("smoothing window exceeds trace length");
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values[i];
  std::vector<double> out(static_cast<std::size_t>(n));
  const int half = window / 2;
  for (int t = 0; t < n; ++t) {
    int lo, hi;
    if (mode == SmoothingMode::centered) {
      const int r = std::min({half, t, n - 1 - t});
      lo = t - r;
      hi = t + r;
    } else {
      lo = std::max(0, t - window + 1);
      hi = t;
    }
    const double mean = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1);
    out[t] = std::clamp(mean, *std::min_element(values.begin() + lo, values.begin() + hi + 1),
                        *std::max_element(values.begin() + lo, values.begin() + hi + 1));
  }
  return out;
}

/// Component-wise smoothing of a vector-valued series.
inline std::vector<std::vector<double>> smooth(const std::vector<std::vector<double>>& series, int window,
                                               SmoothingMode mode) {
  if (series.empty()) return {};
  const std::size_t dims = series.front().size();
  std::vector<std::vector<double>> out(series.size(), std::vector<double>(dims));
  std::vector<double> column(series.size());
  for (std::size_t k = 0; k < dims; ++k) {
    for (std::size_t t = 0; t < series.size(); ++t) column[t] = series[t][k];
    const auto s = smooth(column, window, mode);
    for (std::size_t t = 0; t < series.size(); ++t) out[t][k] = s[t];
  }
  return out;
}

/// 2|y - 0.5| for one output; 2(max_k y_k - 0.5) for two.
inline double confidence(std::span<const double> y) {
  if (y.size() == 1) return 2.0 * std::abs(y[0] - 0.5);
  const double top = *std::max_element(y.begin(), y.end());
  return std::clamp(2.0 * (top - 0.5), 0.0, 1.0);
}

/// Class index predicted by y: threshold 0.5 for one output (0.5 -> 1),
/// argmax for two with ties going to class 1 (anomalous).
inline int verdict(std::span<const double> y) {
  if (y.size() == 1) return y[0] >= 0.5 ? 1 : 0;
  int best = 0;
  for (int k = 1; k < static_cast<int>(y.size()); ++k)
    if (y[k] >= y[best]) best = k;
  return best;
}

inline int verdict_at(const PredictionTrace& trace, int t) {
  if (t < 0 || t >= static_cast<int>(trace.smoothed.size())) throw std::out_of_range("time index outside trace");
  return verdict(trace.smoothed[static_cast<std::size_t>(t)]);
}

/// Fills `smoothed` and `confidence` from `raw`.
inline void apply_smoothing(PredictionTrace& trace, int window, SmoothingMode mode) {
  trace.smoothed = smooth(trace.raw, window, mode);
  trace.confidence.resize(trace.smoothed.size());
  for (std::size_t t = 0; t < trace.smoothed.size(); ++t) trace.confidence[t] = confidence(trace.smoothed[t]);
}

inline PredictionTrace make_trace(std::string id, std::optional<int> label, std::vector<std::vector<double>> raw,
                                  int window, SmoothingMode mode) {
  PredictionTrace trace{std::move(id), label, std::move(raw), {}, {}};
  apply_smoothing(trace, window, mode);
  return trace;
}

struct Decision {
  int time = 0;
  int verdict = 0;
  bool decided = false;  // false: no threshold crossing, fell back to the final frame
};

/// First t whose smoothed confidence reaches thresholds[t]; undecided
/// traces are scored at the final frame with its verdict.
inline Decision earliest_decision(const PredictionTrace& trace, std::span<const double> thresholds) {
  const int n = trace.length();
  if (n == 0) throw std::invalid_argument("empty trace");
  if (static_cast<int>(thresholds.size()) != n) throw std::invalid_argument("need one threshold per time step");
  for (int t = 0; t < n; ++t)
    if (trace.confidence[static_cast<std::size_t>(t)] >= thresholds[static_cast<std::size_t>(t)])
      return {t, verdict_at(trace, t), true};
  return {n - 1, verdict_at(trace, n - 1), false};
}

inline Decision earliest_decision(const PredictionTrace& trace, double threshold) {
  const std::vector<double> th(static_cast<std::size_t>(trace.length()), threshold);
  return earliest_decision(trace, th);
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

/// Score of deciding the given sequences: each correct decision earns 1,
/// each wrong one costs target/(1-target). Deciding is worthwhile exactly
/// when the decided precision exceeds `target_precision`.
inline double decision_utility(std::size_t correct, std::size_t wrong, double target_precision) {
  const double penalty = target_precision / (1.0 - target_precision);
  return static_cast<double>(correct) - penalty * static_cast<double>(wrong);
}

struct ThresholdOptions {
  std::vector<double> grid = default_threshold_grid();
  double target_precision = 0.9;
};

/// Per-time-step thresholds chosen independently on labelled (smoothed)
/// validation traces: tau_t maximises decision_utility over the grid, ties
/// going to the higher threshold.
inline std::vector<double> optimize_thresholds(const std::vector<PredictionTrace>& traces,
                                               const ThresholdOptions& options = {}) {
  if (traces.empty()) throw std::invalid_argument("threshold optimisation needs validation traces");
  if (options.grid.empty()) throw std::invalid_argument("empty threshold grid");
  if (!(options.target_precision > 0.0 && options.target_precision < 1.0))
    throw std::invalid_argument("target precision must be in (0, 1)");
  const int n = traces.front().length();
  for (const auto& tr : traces) {
    if (tr.length() != n) throw std::invalid_argument("validation traces differ in length");
    if (!tr.label) throw std::invalid_argument("validation trace " + tr.id + " has no label");
  }
  std::vector<double> grid = options.grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());

  std::vector<double> thresholds(static_cast<std::size_t>(n));
  std::vector<std::pair<double, bool>> scored(traces.size());  // (confidence, correct)
  for (int t = 0; t < n; ++t) {
    for (std::size_t s = 0; s < traces.size(); ++s)
      scored[s] = {traces[s].confidence[static_cast<std::size_t>(t)], verdict_at(traces[s], t) == *traces[s].label};
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    // Sweep thresholds from high to low; the decided set only grows.
    std::size_t k = 0, correct = 0, wrong = 0;
    double best_utility = -std::numeric_limits<double>::infinity();
    double best_tau = grid.front();
    for (double tau : grid) {
      while (k < scored.size() && scored[k].first >= tau) {
        scored[k].second ? ++correct : ++wrong;
        ++k;
      }
      const double u = decision_utility(correct, wrong, options.target_precision);
      if (u > best_utility) {
        best_utility = u;
        best_tau = tau;
      }
    }
    thresholds[static_cast<std::size_t>(t)] = best_tau;
  }
  return thresholds;
}

/// Fraction of labelled traces whose verdict at t matches their label.
inline std::vector<double> accuracy_vs_time(const std::vector<PredictionTrace>& traces) {
  std::vector<std::size_t> hits;
  std::size_t labelled = 0;
  for (const auto& tr : traces) {
    if (!tr.label) continue;
    if (hits.empty()) hits.assign(static_cast<std::size_t>(tr.length()), 0);
    if (static_cast<std::size_t>(tr.length()) != hits.size()) throw std::invalid_argument("traces differ in length");
    ++labelled;
    for (int t = 0; t < tr.length(); ++t)
      if (verdict_at(tr, t) == *tr.label) ++hits[static_cast<std::size_t>(t)];
  }
  if (labelled == 0) throw std::invalid_argument("accuracy_vs_time needs at least one labelled trace");
  std::vector<double> acc(hits.size());
  for (std::size_t t = 0; t < hits.size(); ++t)
    acc[t] = 1.0 - static_cast<double>(labelled - hits[t]) / static_cast<double>(labelled);
  return acc;
}

/// Window with the best final-frame accuracy under causal smoothing; ties
/// go to the window closest to `preferred`, then the smaller one.
inline int select_smoothing_window(std::vector<PredictionTrace> traces, const std::vector<int>& candidates,
                                   int preferred = 13) {
  if (traces.empty()) throw std::invalid_argument("window selection needs validation traces");
  int best = -1;
  double best_acc = -1.0;
  for (int w : candidates) {
    if (w > traces.front().length()) continue;
    std::size_t hits = 0, labelled = 0;
    for (auto& tr : traces) {
      if (!tr.label) continue;
      apply_smoothing(tr, w, SmoothingMode::causal);
      ++labelled;
      if (verdict_at(tr, tr.length() - 1) == *tr.label) ++hits;
    }
    const double acc = labelled ? static_cast<double>(hits) / static_cast<double>(labelled) : 0.0;
    const bool closer = best < 0 || std::abs(w - preferred) < std::abs(best - preferred) ||
                        (std::abs(w - preferred) == std::abs(best - preferred) && w < best);
    if (acc > best_acc || (acc == best_acc && closer)) {
      best_acc = acc;
      best = w;
    }
  }
  if (best < 0) throw std::invalid_argument("no candidate window fits the trace length");
  return best;
}

inline std::vector<int> default_window_candidates() {
  std::vector<int> w;
  for (int k = 1; k <= 21; k += 2) w.push_back(k);
  return w;
}

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_predicted = 0.0;  // mean probability of the positive class
  double positive_rate = 0.0;   // empirical frequency of the positive class
};

struct Calibration {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
};

/// Reliability diagram over equal-width bins of the positive-class
/// probability; ECE = sum_b (n_b / n) |positive_rate_b - mean_predicted_b|.
inline Calibration calibration(std::span<const double> positive_probability, std::span<const int> labels,
                               int n_bins = 10) {
  if (positive_probability.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in size");
  if (positive_probability.empty()) throw std::invalid_argument("calibration needs at least one prediction");
  if (n_bins < 1) throw std::invalid_argument("n_bins must be positive");
  Calibration cal;
  cal.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> sum_p(cal.bins.size(), 0.0), sum_y(cal.bins.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(positive_probability[i], 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(p * n_bins), cal.bins.size() - 1);
    ++cal.bins[b].count;
    sum_p[b] += p;
    sum_y[b] += labels[i] == 1 ? 1.0 : 0.0;
  }
  const double total = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < cal.bins.size(); ++b) {
    auto& bin = cal.bins[b];
    bin.lower = static_cast<double>(b) / n_bins;
    bin.upper = static_cast<double>(b + 1) / n_bins;
    if (bin.count == 0) continue;
    bin.mean_predicted = sum_p[b] / static_cast<double>(bin.count);
    bin.positive_rate = sum_y[b] / static_cast<double>(bin.count);
    cal.ece += static_cast<double>(bin.count) / total * std::abs(bin.positive_rate - bin.mean_predicted);
  }
  return cal;
}

/// Probability of class 1 from a probability vector.
inline double positive_probability(std::span<const double> y) { return y.size() == 1 ? y[0] : y[1]; }

struct SequenceDecision {
  std::string id;
  Decision decision;
  std::optional<int> label;
  bool correct() const { return label && decision.verdict == *label; }
};

struct DecisionReport {
  std::vector<SequenceDecision> sequences;
  std::vector<double> accuracy_vs_time;
  Calibration calibration;
  std::vector<double> thresholds;
  int window = 13;
  double decided_accuracy = 0.0;      // accuracy of the earliest decisions
  double mean_decision_time = 0.0;    // mean t*, undecided counted at N-1
  double final_accuracy = 0.0;        // accuracy at the final frame
};

/// Earliest decisions plus dataset curves for smoothed, labelled traces.
/// Calibration uses the given frame-level (probability, target) pairs.
inline DecisionReport build_report(const std::vector<PredictionTrace>& traces, const std::vector<double>& thresholds,
                                   int window, std::span<const double> frame_probabilities,
                                   std::span<const int> frame_targets) {
  DecisionReport report;
  report.thresholds = thresholds;
  report.window = window;
  std::size_t labelled = 0, correct = 0;
  double time_sum = 0.0;
  for (const auto& tr : traces) {
    SequenceDecision sd{tr.id, earliest_decision(tr, thresholds), tr.label};
    if (sd.label) {
      ++labelled;
      correct += sd.correct() ? 1 : 0;
      time_sum += sd.decision.time;
    }
    report.sequences.push_back(std::move(sd));
  }
  if (labelled > 0) {
    report.decided_accuracy = static_cast<double>(correct) / static_cast<double>(labelled);
    report.mean_decision_time = time_sum / static_cast<double>(labelled);
    report.accuracy_vs_time = accuracy_vs_time(traces);
    report.final_accuracy = report.accuracy_vs_time.back();
  }
  if (!frame_probabilities.empty()) report.calibration = calibration(frame_probabilities, frame_targets);
  return report;
}

}  // namespace zebravit
