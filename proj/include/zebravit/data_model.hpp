#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zebravit/rng.hpp"
#include "zebravit/task.hpp"

namespace zebravit {

struct FrameRecord {
  std::string run_id;
  int well_id = 0;
  int frame_index = 0;
  int capture_offset_minutes = 0;
  std::string frame_label;
  std::string image_ref;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

/// One well's ordered frame sequence. An empty sequence_label means the
/// sequence has no definitive outcome (toxicity wells that were never
/// fertilized, fertility wells that end `unsure`); such sequences are
/// excluded from training and from sequence-level metrics.
struct SequenceRecord {
  std::string run_id;
  int well_id = 0;
  std::vector<FrameRecord> frames;
  std::string sequence_label;
  std::optional<int> flipping_point;

  std::string id() const { return run_id + "/" + std::to_string(well_id); }
  bool has_outcome() const { return !sequence_label.empty(); }

  friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

/// Training target of a frame: a class index, or nullopt when the frame is
/// excluded from the loss and from frame-level metrics.
///
/// Fertility (sigmoid head): alive -> 1, unfertilized -> 0, unsure excluded.
/// Toxicity (softmax head): alive -> 0, sublethal/lethal effect -> 1,
/// not fertilized excluded.
inline std::optional<int> frame_target(std::string_view label, const TaskSpec& spec) {
  if (spec.kind == TaskKind::fertility) {
    if (label == labels::alive) return 1;
    if (label == labels::unfertilized) return 0;
    if (label == labels::unsure) return std::nullopt;
  } else {
    if (label == labels::alive) return 0;
    if (label == labels::sublethal || label == labels::lethal) return 1;
    if (label == labels::not_fertilized) return std::nullopt;
  }
  throw std::invalid_argument("unknown frame label '" + std::string(label) + "' for task " +
                              std::string(to_string(spec.kind)));
}

/// Class index of a sequence-level label, in the same index space as frame_target.
inline std::optional<int> sequence_target(std::string_view label, const TaskSpec& spec) {
  if (label.empty()) return std::nullopt;
  if (spec.kind == TaskKind::fertility) {
    if (label == labels::alive) return 1;
    if (label == labels::unfertilized) return 0;
  } else {
    if (label == labels::alive) return 0;
    if (label == labels::anomalous) return 1;
  }
  throw std::invalid_argument("unknown sequence label '" + std::string(label) + "' for task " +
                              std::string(to_string(spec.kind)));
}

inline std::optional<int> sequence_target(const SequenceRecord& seq, const TaskSpec& spec) {
  return sequence_target(seq.sequence_label, spec);
}

/// Name of the class index produced by frame_target / sequence_target.
inline std::string_view class_name(int target, const TaskSpec& spec) {
  if (spec.kind == TaskKind::fertility) return target == 1 ? labels::alive : labels::unfertilized;
  return target == 0 ? labels::alive : labels::anomalous;
}

/// All invariant violations of one sequence; empty when valid.
inline std::vector<std::string> sequence_violations(const SequenceRecord& seq, const TaskSpec& spec) {
  std::vector<std::string> out;
  const std::string id = seq.id();
  const int n = spec.frames_per_sequence;
  auto add = [&](const std::string& msg) { out.push_back(id + ": " + msg); };

  if (seq.well_id < 0 || seq.well_id >= TaskSpec::wells_per_plate)
    add("well_id " + std::to_string(seq.well_id) + " outside [0, 95]");
  if (static_cast<int>(seq.frames.size()) != n)
    add("has " + std::to_string(seq.frames.size()) + " frames, expected " + std::to_string(n));
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    if (f.frame_index != static_cast<int>(i)) {
      add("frame at position " + std::to_string(i) + " has frame_index " + std::to_string(f.frame_index));
      break;
    }
  }
  for (const auto& f : seq.frames) {
    if (!spec.is_frame_label(f.frame_label))
      add("frame " + std::to_string(f.frame_index) + " has unknown label '" + f.frame_label + "'");
    if (f.capture_offset_minutes != f.frame_index * spec.interval_minutes)
      add("frame " + std::to_string(f.frame_index) + " capture offset " +
          std::to_string(f.capture_offset_minutes) + " != index x interval");
    if (f.run_id != seq.run_id || f.well_id != seq.well_id)
      add("frame " + std::to_string(f.frame_index) + " belongs to another well");
  }
  if (!seq.sequence_label.empty() && !spec.is_sequence_label(seq.sequence_label))
    add("unknown sequence label '" + seq.sequence_label + "'");
  if (seq.flipping_point && (*seq.flipping_point < 0 || *seq.flipping_point >= n))
    add("flipping point " + std::to_string(*seq.flipping_point) + " outside [0, " + std::to_string(n) + ")");

  if (spec.kind == TaskKind::fertility && !seq.frames.empty()) {
    const std::string& last = seq.frames.back().frame_label;
    const std::string expected = last == labels::unsure ? std::string() : last;
    if (seq.sequence_label != expected)
      add("sequence label '" + seq.sequence_label + "' differs from final frame label '" + last + "'");
    if (seq.flipping_point) {
      for (const auto& f : seq.frames) {
        const bool before = f.frame_index < *seq.flipping_point;
        const bool is_unsure = f.frame_label == labels::unsure;
        if (before != is_unsure) {
          add("frame " + std::to_string(f.frame_index) + " labeled '" + f.frame_label +
              (before ? "' before" : "' at/after") + " flipping point " + std::to_string(*seq.flipping_point));
          break;
        }
      }
    }
  }
  return out;
}

/// Manifest parse failure; row is the 1-based line number (header = 1).
class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t row, const std::string& what)
      : std::runtime_error("manifest row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

namespace detail {

inline const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> cols = {"run_id",         "well_id",        "frame_index", "frame_label",
                                                "sequence_label", "flipping_point", "image_ref"};
  return cols;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::optional<int> parse_int(std::string_view text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses an annotation manifest (CSV with a mandatory header row).
/// Throws ManifestError naming the offending row on any malformed row or
/// invariant violation.
inline std::vector<SequenceRecord> parse_manifest(std::istream& in, const TaskSpec& spec) {
  using detail::parse_int;
  std::string line;
  if (!std::getline(in, line)) throw ManifestError(1, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (detail::split_csv_line(line) != detail::manifest_columns())
    throw ManifestError(1, "header must be run_id,well_id,frame_index,frame_label,sequence_label,flipping_point,image_ref");

  const int n = spec.frames_per_sequence;
  struct Pending {
    SequenceRecord seq;
    std::size_t first_row = 0;
    std::vector<std::size_t> rows;
  };
  std::vector<Pending> pending;
  std::map<std::pair<std::string, int>, std::size_t> index;

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    try {
      f = detail::split_csv_line(line);
    } catch (const std::exception& e) {
      throw ManifestError(row, e.what());
    }
    if (f.size() != 7) throw ManifestError(row, "expected 7 columns, found " + std::to_string(f.size()));
    if (f[0].empty()) throw ManifestError(row, "empty run_id");
    const auto well = parse_int(f[1]);
    if (!well || *well < 0 || *well >= TaskSpec::wells_per_plate)
      throw ManifestError(row, "well_id '" + f[1] + "' is not an integer in [0, 95]");
    const auto frame = parse_int(f[2]);
    if (!frame || *frame < 0 || *frame >= n)
      throw ManifestError(row, "frame_index '" + f[2] + "' is not an integer in [0, " + std::to_string(n) + ")");
    if (!spec.is_frame_label(f[3])) throw ManifestError(row, "unknown frame label '" + f[3] + "'");
    if (!f[4].empty() && !spec.is_sequence_label(f[4]))
      throw ManifestError(row, "unknown sequence label '" + f[4] + "'");
    std::optional<int> flip;
    if (!f[5].empty()) {
      flip = parse_int(f[5]);
      if (!flip || *flip < 0 || *flip >= n)
        throw ManifestError(row, "flipping point '" + f[5] + "' outside [0, " + std::to_string(n) + ")");
    }

    const auto key = std::make_pair(f[0], *well);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, pending.size()).first;
      Pending p;
      p.seq.run_id = f[0];
      p.seq.well_id = *well;
      p.seq.sequence_label = f[4];
      p.seq.flipping_point = flip;
      p.first_row = row;
      pending.push_back(std::move(p));
    }
    Pending& p = pending[it->second];
    if (p.seq.sequence_label != f[4])
      throw ManifestError(row, "sequence label '" + f[4] + "' disagrees with earlier rows of " + p.seq.id());
    if (p.seq.flipping_point != flip)
      throw ManifestError(row, "flipping point disagrees with earlier rows of " + p.seq.id());
    FrameRecord rec;
    rec.run_id = f[0];
    rec.well_id = *well;
    rec.frame_index = *frame;
    rec.capture_offset_minutes = *frame * spec.interval_minutes;
    rec.frame_label = f[3];
    rec.image_ref = f[6];
    p.seq.frames.push_back(std::move(rec));
    p.rows.push_back(row);
  }

  std::vector<SequenceRecord> out;
  out.reserve(pending.size());
  for (auto& p : pending) {
    auto& frames = p.seq.frames;
    std::vector<std::size_t> order(frames.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frames[a].frame_index < frames[b].frame_index; });
    std::vector<FrameRecord> sorted;
    sorted.reserve(frames.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& fr = frames[order[k]];
      if (k > 0 && fr.frame_index == sorted.back().frame_index)
        throw ManifestError(p.rows[order[k]], "duplicate frame_index " + std::to_string(fr.frame_index) +
                                                  " in sequence " + p.seq.id());
      sorted.push_back(fr);
    }
    for (int t = 0; t < n; ++t) {
      if (t >= static_cast<int>(sorted.size()) || sorted[t].frame_index != t)
        throw ManifestError(p.first_row, "sequence " + p.seq.id() + " is missing frame_index " + std::to_string(t));
    }
    frames = std::move(sorted);
    const auto violations = sequence_violations(p.seq, spec);
    if (!violations.empty()) throw ManifestError(p.first_row, violations.front());
    out.push_back(std::move(p.seq));
  }
  return out;
}

inline std::vector<SequenceRecord> parse_manifest(const std::filesystem::path& path, const TaskSpec& spec) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  return parse_manifest(in, spec);
}

inline void write_manifest(std::ostream& out, const std::vector<SequenceRecord>& sequences) {
  const auto& cols = detail::manifest_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& seq : sequences) {
    const std::string flip = seq.flipping_point ? std::to_string(*seq.flipping_point) : std::string();
    for (const auto& f : seq.frames) {
      out << detail::csv_field(f.run_id) << ',' << f.well_id << ',' << f.frame_index << ','
          << detail::csv_field(f.frame_label) << ',' << detail::csv_field(seq.sequence_label) << ',' << flip << ','
          << detail::csv_field(f.image_ref) << '\n';
    }
  }
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<SequenceRecord>& sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  write_manifest(out, sequences);
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

/// Sequences that carry a definitive outcome.
inline std::vector<SequenceRecord> definitive_sequences(const std::vector<SequenceRecord>& sequences) {
  std::vector<SequenceRecord> out;
  for (const auto& s : sequences)
    if (s.has_outcome()) out.push_back(s);
  return out;
}

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  std::vector<SequenceRecord> train;
  std::vector<SequenceRecord> validation;
  std::vector<SequenceRecord> test;
  std::uint64_t seed = 0;
  SplitRatios ratios;
};

namespace detail {

/// Hamilton apportionment of `total` seats proportional to `weights`.
/// Ties on the fractional remainder go to the lower index.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
  std::size_t sum = 0;
  for (auto w : weights) sum += w;
  std::vector<std::size_t> seats(weights.size(), 0);
  if (sum == 0) return seats;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = static_cast<double>(total) * static_cast<double>(weights[i]) / static_cast<double>(sum);
    seats[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    given += seats[i];
    remainders.emplace_back(quota - static_cast<double>(seats[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total && k < remainders.size(); ++k, ++given) ++seats[remainders[k].second];
  return seats;
}

}  // namespace detail

/// Stratified, seeded sequence-level split.
///
/// Held-out split sizes are floor(ratio * n); the training split takes the
/// rest. Each held-out split is distributed over classes by largest
/// remainder, so 1,344 sequences at 70:15:15 give 942/201/201.
inline DatasetSplit split_dataset(const std::vector<SequenceRecord>& sequences, const TaskSpec& spec,
                                  const SplitRatios& ratios, std::uint64_t seed) {
  const double total_ratio = ratios.train + ratios.validation + ratios.test;
  if (std::abs(total_ratio - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0)
    throw std::invalid_argument("split ratios must be non-negative");

  const auto& classes = spec.sequence_label_vocab;
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& label = sequences[i].sequence_label;
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end())
      throw std::invalid_argument("sequence " + sequences[i].id() + " has no definitive label; filter it first");
    members[static_cast<std::size_t>(it - classes.begin())].push_back(i);
  }
  if (sequences.size() < classes.size())
    throw std::invalid_argument("fewer sequences than classes");
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (members[c].empty())
      throw std::invalid_argument("cannot stratify: no sequences of class '" + classes[c] + "'");

  const std::size_t n = sequences.size();
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> weights;
  for (const auto& m : members) weights.push_back(m.size());
  const auto val_per_class = detail::apportion(n_val, weights);
  const auto test_per_class = detail::apportion(n_test, weights);

  std::vector<int> assignment(n, 0);  // 0 train, 1 validation, 2 test
  Rng rng(seed);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto idx = members[c];
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t v = std::min(val_per_class[c], idx.size());
    const std::size_t t = std::min(test_per_class[c], idx.size() - v);
    for (std::size_t k = 0; k < v; ++k) assignment[idx[k]] = 1;
    for (std::size_t k = v; k < v + t; ++k) assignment[idx[k]] = 2;
  }

  DatasetSplit split;
  split.seed = seed;
  split.ratios = ratios;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = assignment[i] == 0 ? split.train : assignment[i] == 1 ? split.validation : split.test;
    dst.push_back(sequences[i]);
  }
  return split;
}

struct ValidationReport {
  /// Sequence count per sequence label, in vocabulary order; sequences without
  /// a definitive outcome are counted under "excluded".
  std::vector<std::pair<std::string, std::size_t>> class_counts;
  std::size_t n_sequences = 0;
  std::size_t total_frames = 0;
  std::vector<std::string> violations;

  bool valid() const { return violations.empty(); }
  std::size_t count(std::string_view label) const {
    for (const auto& [name, c] : class_counts)
      if (name == label) return c;
    return 0;
  }
};

inline ValidationReport validate_dataset(const std::vector<SequenceRecord>& sequences, const TaskSpec& spec) {
  ValidationReport report;
  for (const auto& label : spec.sequence_label_vocab) report.class_counts.emplace_back(label, 0);
  report.class_counts.emplace_back("excluded", 0);
  std::map<std::pair<std::string, int>, int> seen;
  for (const auto& seq : sequences) {
    ++report.n_sequences;
    report.total_frames += seq.frames.size();
    bool counted = false;
    for (auto& [name, c] : report.class_counts) {
      if (name == seq.sequence_label) {
        ++c;
        counted = true;
      }
    }
    if (!counted && seq.sequence_label.empty()) ++report.class_counts.back().second;
    if (++seen[{seq.run_id, seq.well_id}] == 2) report.violations.push_back(seq.id() + ": duplicate sequence");
    auto v = sequence_violations(seq, spec);
    report.violations.insert(report.violations.end(), v.begin(), v.end());
  }
  return report;
}

}  // namespace zebravit
