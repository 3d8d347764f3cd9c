#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zebravit {

enum class TaskKind { fertility, toxicity };

inline std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::fertility ? "fertility" : "toxicity";
}

inline TaskKind parse_task_kind(std::string_view text) {
  if (text == "fertility") return TaskKind::fertility;
  if (text == "toxicity") return TaskKind::toxicity;
  throw std::invalid_argument("unknown task '" + std::string(text) + "' (expected fertility or toxicity)");
}

namespace labels {
inline constexpr std::string_view alive = "alive";
inline constexpr std::string_view unsure = "unsure";
inline constexpr std::string_view unfertilized = "unfertilized";
inline constexpr std::string_view sublethal = "sublethal effect";
inline constexpr std::string_view lethal = "lethal effect";
inline constexpr std::string_view not_fertilized = "not fertilized";
inline constexpr std::string_view anomalous = "anomalous";
}  // namespace labels

struct PixelSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const PixelSize&, const PixelSize&) = default;
};

/// Geometry and label vocabulary of one screening task.
struct TaskSpec {
  TaskKind kind = TaskKind::fertility;
  int frames_per_sequence = 0;
  int interval_minutes = 0;
  PixelSize native_resolution{1344, 820};
  int model_input_height = 224;
  int model_input_width = 224;
  int model_input_channels = 3;
  std::vector<std::string> frame_label_vocab;
  std::vector<std::string> sequence_label_vocab;
  int n_output_classes = 0;

  static constexpr int wells_per_plate = 96;

  bool is_frame_label(std::string_view label) const {
    return std::find(frame_label_vocab.begin(), frame_label_vocab.end(), label) != frame_label_vocab.end();
  }
  bool is_sequence_label(std::string_view label) const {
    return std::find(sequence_label_vocab.begin(), sequence_label_vocab.end(), label) !=
           sequence_label_vocab.end();
  }
};

inline TaskSpec fertility_task() {
  TaskSpec spec;
  spec.kind = TaskKind::fertility;
  spec.frames_per_sequence = 8 * 60 / 5 + 1;  // 97
  spec.interval_minutes = 5;
  spec.frame_label_vocab = {std::string(labels::alive), std::string(labels::unsure),
                            std::string(labels::unfertilized)};
  spec.sequence_label_vocab = {std::string(labels::alive), std::string(labels::unfertilized)};
  spec.n_output_classes = 1;
  return spec;
}

inline TaskSpec toxicity_task() {
  TaskSpec spec;
  spec.kind = TaskKind::toxicity;
  spec.frames_per_sequence = 48 * 4;  // 192
  spec.interval_minutes = 15;
  spec.frame_label_vocab = {std::string(labels::alive), std::string(labels::sublethal),
                            std::string(labels::lethal), std::string(labels::not_fertilized)};
  spec.sequence_label_vocab = {std::string(labels::alive), std::string(labels::anomalous)};
  spec.n_output_classes = 2;
  return spec;
}

inline TaskSpec task_spec(TaskKind kind) {
  return kind == TaskKind::fertility ? fertility_task() : toxicity_task();
}

}  // namespace zebravit
