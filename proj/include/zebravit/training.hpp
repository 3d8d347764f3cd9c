#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "zebravit/data_model.hpp"
#include "zebravit/decision.hpp"
#include "zebravit/image.hpp"
#include "zebravit/rng.hpp"
#include "zebravit/vit.hpp"

namespace zebravit {

inline constexpr double kProbabilityClamp = 1e-7;

/// Cross-entropy on clamped probabilities: binary for one output,
/// categorical for two. `target` is a class index from frame_target.
template <class T>
double compute_loss(const Matrix<T>& y, int target) {
  auto clamp = [](double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); };
  if (y.cols() == 1) {
    const double p = clamp(static_cast<double>(y(0, 0)));
    return target == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  if (target < 0 || target >= y.cols()) throw std::out_of_range("target class outside the head");
  return -std::log(clamp(static_cast<double>(y(0, target))));
}

inline double compute_loss(std::span<const double> y, int target) {
  Matrix<double> m(1, static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = y[i];
  return compute_loss(m, target);
}

/// d(loss)/d(logits). Zero where the clamp is active, matching the loss.
template <class T>
Matrix<T> loss_gradient(const Matrix<T>& y, int target) {
  Matrix<T> g = Matrix<T>::Zero(1, y.cols());
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  if (y.cols() == 1) {
    const double p = y(0, 0);
    if (p > lo && p < hi) g(0, 0) = static_cast<T>(p - target);
    return g;
  }
  const double p = y(0, target);
  if (p > lo && p < hi) {
    g = y;
    g(0, target) -= static_cast<T>(1);
  }
  return g;
}

struct AdamConfig {
  double learning_rate = 4e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelConfig& config, AdamConfig options)
      : options_(options), m_(Parameters<float>::zeros(config)), v_(Parameters<float>::zeros(config)) {}

  void step(Parameters<float>& params, const Parameters<float>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(options_.beta1), b2 = static_cast<float>(options_.beta2);
    const auto lr = static_cast<float>(options_.learning_rate);
    const auto wd = static_cast<float>(options_.weight_decay);
    const auto eps = static_cast<float>(options_.epsilon);
    const auto inv_bc1 = static_cast<float>(1.0 / bc1), inv_bc2 = static_cast<float>(1.0 / bc2);
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto pa = p[i].tensor->array();
      const auto ga = g[i].tensor->array();
      auto ma = m[i].tensor->array();
      auto va = v[i].tensor->array();
      ma = b1 * ma + (1.0f - b1) * ga;
      va = b2 * va + (1.0f - b2) * ga.square();
      pa -= lr * ((ma * inv_bc1) / ((va * inv_bc2).sqrt() + eps) + wd * pa);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig options_;
  Parameters<float> m_, v_;
  long t_ = 0;
};

/// Loads frames named by a manifest, decodes and caches them, and returns
/// model-ready patch matrices.
class FrameStore {
 public:
  using Loader = std::function<Image8(const SequenceRecord&, int)>;

  FrameStore(Loader loader, ModelConfig config, std::size_t cache_bytes = std::size_t{2} << 30)
      : loader_(std::move(loader)), config_(std::move(config)), budget_(cache_bytes) {}

  /// Frames read from disk relative to `base_dir`.
  static FrameStore from_directory(const std::filesystem::path& base_dir, const ModelConfig& config,
                                   std::size_t cache_bytes = std::size_t{2} << 30) {
    return FrameStore(
        [base_dir](const SequenceRecord& seq, int t) {
          const std::filesystem::path ref = seq.frames[static_cast<std::size_t>(t)].image_ref;
          return read_png(ref.is_absolute() ? ref : base_dir / ref);
        },
        config, cache_bytes);
  }

  const Image8& image(const SequenceRecord& seq, int t) {
    const std::string key = seq.id() + "#" + std::to_string(t);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    Image8 img = loader_(seq, t);
    if (used_ + img.pixels.size() <= budget_) {
      used_ += img.pixels.size();
      return cache_.emplace(key, std::move(img)).first->second;
    }
    overflow_ = std::move(img);
    return overflow_;
  }

  Matrix<float> patches(const SequenceRecord& seq, int t) {
    return patchify<float>(preprocess(image(seq, t), config_), config_.patch_size);
  }

  const ModelConfig& config() const { return config_; }

 private:
  Loader loader_;
  ModelConfig config_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::unordered_map<std::string, Image8> cache_;
  Image8 overflow_;
};

enum class SelectionMetric { sequence_accuracy, frame_accuracy };

struct TrainConfig {
  AdamConfig adam;
  double dropout = 0.2;
  int batch_size = 64;
  int max_epochs = 30;
  long max_steps = 0;  // 0: no cap beyond max_epochs
  int eval_every = 1;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::sequence_accuracy;
  int selection_window = 13;  // causal smoothing used by sequence_accuracy

  void validate() const {
    if (!(adam.learning_rate >= 0.0) || !(adam.weight_decay >= 0.0))
      throw std::invalid_argument("learning rate and weight decay must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
    if (selection_window < 1 || selection_window % 2 == 0) throw std::invalid_argument("selection_window must be odd");
  }
};

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  std::optional<double> val_metric;
};

struct TrainResult {
  Parameters<float> params;  // selected (best validation) weights
  int best_epoch = 0;
  std::optional<double> best_metric;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingExample {
  std::size_t sequence = 0;
  int frame = 0;
  int target = 0;
};

/// Frames with a training target; excluded frames never appear.
inline std::vector<TrainingExample> training_examples(const std::vector<SequenceRecord>& sequences,
                                                      const TaskSpec& spec) {
  std::vector<TrainingExample> out;
  for (std::size_t s = 0; s < sequences.size(); ++s)
    for (const auto& f : sequences[s].frames)
      if (const auto target = frame_target(f.frame_label, spec)) out.push_back({s, f.frame_index, *target});
  return out;
}

/// Probabilities of one frame as doubles.
inline std::vector<double> predict_frame(const Model<float>& model, FrameStore& frames, const SequenceRecord& seq,
                                         int t) {
  const Matrix<float> y = forward_patches(frames.patches(seq, t), t, model.params, model.config);
  std::vector<double> out(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index k = 0; k < y.cols(); ++k) out[static_cast<std::size_t>(k)] = y(0, k);
  return out;
}

/// Raw probability traces (no smoothing applied) for whole sequences.
inline std::vector<PredictionTrace> predict_traces(const Model<float>& model, FrameStore& frames,
                                                   const std::vector<SequenceRecord>& sequences,
                                                   const TaskSpec& spec) {
  std::vector<PredictionTrace> traces;
  traces.reserve(sequences.size());
  for (const auto& seq : sequences) {
    PredictionTrace tr;
    tr.id = seq.id();
    tr.label = sequence_target(seq, spec);
    for (int t = 0; t < static_cast<int>(seq.frames.size()); ++t) tr.raw.push_back(predict_frame(model, frames, seq, t));
    traces.push_back(std::move(tr));
  }
  return traces;
}

struct FrameAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Frame-level accuracy over definitively labelled frames (threshold 0.5
/// for one output, argmax for two).
inline FrameAccuracy evaluate_frames(const Model<float>& model, FrameStore& frames,
                                     const std::vector<SequenceRecord>& sequences, const TaskSpec& spec) {
  FrameAccuracy acc;
  for (const auto& seq : sequences)
    for (const auto& f : seq.frames) {
      const auto target = frame_target(f.frame_label, spec);
      if (!target) continue;
      ++acc.total;
      if (verdict(predict_frame(model, frames, seq, f.frame_index)) == *target) ++acc.correct;
    }
  return acc;
}

/// Final-frame accuracy after causal smoothing; only the last `window`
/// frames of each labelled sequence are evaluated.
inline double final_sequence_accuracy(const Model<float>& model, FrameStore& frames,
                                      const std::vector<SequenceRecord>& sequences, const TaskSpec& spec,
                                      int window) {
  std::size_t hits = 0, labelled = 0;
  for (const auto& seq : sequences) {
    const auto label = sequence_target(seq, spec);
    if (!label) continue;
    const int n = static_cast<int>(seq.frames.size());
    const int w = std::min(window, n);
    std::vector<double> mean;
    for (int t = n - w; t < n; ++t) {
      const auto y = predict_frame(model, frames, seq, t);
      if (mean.empty()) mean.assign(y.size(), 0.0);
      for (std::size_t k = 0; k < y.size(); ++k) mean[k] += y[k] / w;
    }
    ++labelled;
    if (verdict(mean) == *label) ++hits;
  }
  return labelled ? static_cast<double>(hits) / static_cast<double>(labelled) : 0.0;
}

/// Frame-level minibatch training with Adam and validation-based model
/// selection. Deterministic given config.seed. `on_epoch` (optional) sees
/// every log record as it is produced.
inline TrainResult train(const std::vector<SequenceRecord>& train_set, const std::vector<SequenceRecord>& validation,
                         const TaskSpec& spec, ModelConfig model_config, const TrainConfig& config,
                         FrameStore& frames, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  model_config.dropout = config.dropout;
  model_config.validate();
  if (model_config.n_timesteps != spec.frames_per_sequence)
    throw std::invalid_argument("model timesteps do not match the task's sequence length");

  auto examples = training_examples(train_set, spec);
  if (examples.empty()) throw TrainingError("no training frames with a definitive label");

  Model<float> model{model_config, init_parameters<float>(model_config, derive_seed(config.seed, 0))};
  AdamOptimizer optimizer(model_config, config.adam);
  Rng order_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  auto grads = Parameters<float>::zeros(model_config);

  TrainResult result;
  result.params = model.params;
  const bool have_validation = !definitive_sequences(validation).empty();
  long step = 0;
  ForwardCache<float> cache;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<TrainingExample>(examples));
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    bool stop = false;
    for (std::size_t start = 0; start < examples.size() && !stop; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(examples.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto inv_batch = static_cast<float>(1.0 / static_cast<double>(end - start));
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = examples[i];
        const auto& seq = train_set[ex.sequence];
        const Matrix<float> y = forward_patches(frames.patches(seq, ex.frame), ex.frame, model.params, model_config,
                                                &dropout_rng, &cache);
        const double loss = compute_loss(y, ex.target);
        if (!std::isfinite(loss))
          throw TrainingError("non-finite loss at step " + std::to_string(step + 1) + " (sequence " + seq.id() +
                              ", frame " + std::to_string(ex.frame) + ")");
        batch_loss += loss;
        backward(cache, Matrix<float>(loss_gradient(y, ex.target) * inv_batch), model.params, model_config, grads);
      }
      optimizer.step(model.params, grads);
      ++step;
      batch_loss /= static_cast<double>(end - start);
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++epoch_batches;
      if (config.max_steps > 0 && step >= config.max_steps) stop = true;
    }

    EpochLog entry{epoch, step, epoch_loss / static_cast<double>(std::max<long>(epoch_batches, 1)), std::nullopt};
    const bool last = epoch == config.max_epochs || stop;
    if (have_validation && (epoch % config.eval_every == 0 || last)) {
      const double metric = config.selection_metric == SelectionMetric::sequence_accuracy
                                ? final_sequence_accuracy(model, frames, validation, spec, config.selection_window)
                                : evaluate_frames(model, frames, validation, spec).accuracy();
      entry.val_metric = metric;
      if (!result.best_metric || metric > *result.best_metric) {
        result.best_metric = metric;
        result.best_epoch = epoch;
        result.params = model.params;
      }
    }
    if (!have_validation) {
      result.params = model.params;
      result.best_epoch = epoch;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (stop) break;
  }
  return result;
}

}  // namespace zebravit
