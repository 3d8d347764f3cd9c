#pragma once

// In-memory synthetic datasets: frames are rendered on demand instead of
// being written to disk.

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "zebravit/synthetic.hpp"
#include "zebravit/training.hpp"

namespace fixture {

using namespace zebravit;

struct SyntheticSet {
  SynthConfig config;
  std::vector<SequenceParams> params;
  std::vector<SequenceRecord> records;
  std::unordered_map<std::string, std::size_t> index;

  FrameStore store(const ModelConfig& model) const {
    auto shared = std::make_shared<SyntheticSet>(*this);
    return FrameStore(
        [shared](const SequenceRecord& seq, int t) {
          return render_frame(shared->params[shared->index.at(seq.id())], t, shared->config);
        },
        model);
  }
};

inline SyntheticSet make_set(TaskKind kind, int runs, std::uint64_t seed, int size, double separability = 1.0,
                             double noise = 0.02) {
  SyntheticSet s;
  s.config.spec = task_spec(kind);
  s.config.n_runs = runs;
  s.config.seed = seed;
  s.config.image_size = {size, size};
  s.config.separability = separability;
  s.config.noise_std = noise;
  s.params = sample_sequence_params(s.config);
  for (const auto& p : s.params) {
    s.index.emplace(p.run_id + "/" + std::to_string(p.well_id), s.records.size());
    s.records.push_back(sequence_record(p, s.config.spec));
  }
  return s;
}

/// Small RGB model for quick training runs.
inline ModelConfig tiny_model(const TaskSpec& spec, int size = 16, int patch = 4, int dim = 32) {
  auto c = ModelConfig::for_task(spec);
  c.image_height = c.image_width = size;
  c.patch_size = patch;
  c.hidden_dim = dim;
  c.n_layers = 1;
  c.n_heads = 2;
  c.dropout = 0.0;
  return c;
}

/// First `n` sequences with an outcome, alternating classes where possible.
inline std::vector<SequenceRecord> balanced_subset(const std::vector<SequenceRecord>& seqs, const TaskSpec& spec,
                                                   std::size_t n) {
  std::vector<SequenceRecord> by_class[2];
  for (const auto& s : seqs)
    if (const auto label = sequence_target(s, spec)) by_class[*label].push_back(s);
  std::vector<SequenceRecord> out;
  for (std::size_t i = 0; out.size() < n && (i < by_class[0].size() || i < by_class[1].size()); ++i)
    for (int k : {0, 1})
      if (i < by_class[k].size() && out.size() < n) out.push_back(by_class[k][i]);
  return out;
}

}  // namespace fixture
