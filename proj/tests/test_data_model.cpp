#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "zebravit/data_model.hpp"
#include "zebravit/rng.hpp"
#include "zebravit/synthetic.hpp"

using namespace zebravit;

namespace {

std::vector<SequenceRecord> synthetic_records(TaskKind kind, int runs, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.spec = task_spec(kind);
  cfg.n_runs = runs;
  cfg.seed = seed;
  std::vector<SequenceRecord> out;
  for (const auto& p : sample_sequence_params(cfg)) out.push_back(sequence_record(p, cfg.spec));
  return out;
}

std::string manifest_text(const std::vector<SequenceRecord>& seqs) {
  std::ostringstream out;
  write_manifest(out, seqs);
  return out.str();
}

std::set<std::string> ids(const std::vector<SequenceRecord>& seqs) {
  std::set<std::string> out;
  for (const auto& s : seqs) out.insert(s.id());
  return out;
}

SequenceRecord labelled(int well, const std::string& label) {
  SequenceRecord s;
  s.run_id = "r";
  s.well_id = well;
  s.sequence_label = label;
  return s;
}

}  // namespace

TEST(Targets, FertilityLabels) {
  const auto spec = fertility_task();
  EXPECT_EQ(frame_target("alive", spec), 1);
  EXPECT_EQ(frame_target("unfertilized", spec), 0);
  EXPECT_EQ(frame_target("unsure", spec), std::nullopt);
  EXPECT_THROW(frame_target("lethal effect", spec), std::invalid_argument);
}

TEST(Targets, ToxicityLabels) {
  const auto spec = toxicity_task();
  EXPECT_EQ(frame_target("alive", spec), 0);
  EXPECT_EQ(frame_target("lethal effect", spec), 1);
  EXPECT_EQ(frame_target("sublethal effect", spec), 1);
  EXPECT_EQ(frame_target("not fertilized", spec), std::nullopt);
  EXPECT_THROW(frame_target("unsure", spec), std::invalid_argument);
  EXPECT_EQ(sequence_target("anomalous", spec), 1);
  EXPECT_EQ(sequence_target("", spec), std::nullopt);
  EXPECT_EQ(class_name(1, spec), "anomalous");
  EXPECT_EQ(class_name(1, fertility_task()), "alive");
}

TEST(TaskSpec, Constants) {
  const auto f = fertility_task(), t = toxicity_task();
  EXPECT_EQ(f.frames_per_sequence, 97);
  EXPECT_EQ(f.interval_minutes, 5);
  EXPECT_EQ(f.n_output_classes, 1);
  EXPECT_EQ(t.frames_per_sequence, 192);
  EXPECT_EQ(t.interval_minutes, 15);
  EXPECT_EQ(t.n_output_classes, 2);
  EXPECT_EQ(TaskSpec::wells_per_plate, 96);
}

TEST(Manifest, RoundTripsBothTasks) {
  for (auto kind : {TaskKind::fertility, TaskKind::toxicity}) {
    const auto seqs = synthetic_records(kind, 1, 5);
    std::istringstream in(manifest_text(seqs));
    const auto parsed = parse_manifest(in, task_spec(kind));
    EXPECT_EQ(parsed, seqs);
  }
}

TEST(Manifest, QuotedFieldsRoundTrip) {
  EXPECT_EQ(detail::split_csv_line("a,\"b,c\",\"d\"\"e\""), (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_EQ(detail::csv_field("x,y"), "\"x,y\"");
}

TEST(Manifest, DuplicateFrameNamesSequence) {
  auto seqs = synthetic_records(TaskKind::fertility, 1, 3);
  seqs.resize(2);
  seqs[1].frames[5].frame_index = 4;
  std::istringstream in(manifest_text(seqs));
  try {
    parse_manifest(in, fertility_task());
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find(seqs[1].id()), std::string::npos) << e.what();
    EXPECT_GT(e.row(), 1u);
  }
}

TEST(Manifest, RejectsBadHeaderAndFields) {
  std::istringstream empty("");
  EXPECT_THROW(parse_manifest(empty, fertility_task()), ManifestError);
  std::istringstream header("run_id,well,frame_index\n");
  EXPECT_THROW(parse_manifest(header, fertility_task()), ManifestError);
  auto text = manifest_text(synthetic_records(TaskKind::fertility, 1, 3));
  const auto pos = text.find(",0,");
  text.replace(pos, 3, ",x,");
  std::istringstream bad(text);
  EXPECT_THROW(parse_manifest(bad, fertility_task()), ManifestError);
}

TEST(Manifest, MissingFrameIsReported) {
  auto seqs = synthetic_records(TaskKind::toxicity, 1, 3);
  seqs.resize(1);
  seqs[0].frames.erase(seqs[0].frames.begin() + 10);
  std::istringstream in(manifest_text(seqs));
  EXPECT_THROW(parse_manifest(in, toxicity_task()), ManifestError);
}

TEST(Validation, FertilityFourteenRuns) {
  const auto seqs = synthetic_records(TaskKind::fertility, 14, 7);
  const auto report = validate_dataset(seqs, fertility_task());
  EXPECT_TRUE(report.valid());
  EXPECT_EQ(report.n_sequences, 1344u);
  EXPECT_EQ(report.total_frames, 130368u);
  EXPECT_EQ(report.count("alive"), 747u);
  EXPECT_EQ(report.count("unfertilized"), 597u);
  EXPECT_EQ(report.count("excluded"), 0u);
}

TEST(Validation, ToxicityThreeRuns) {
  const auto seqs = synthetic_records(TaskKind::toxicity, 3, 7);
  const auto report = validate_dataset(seqs, toxicity_task());
  EXPECT_TRUE(report.valid());
  EXPECT_EQ(report.n_sequences, 288u);
  EXPECT_EQ(report.total_frames, 55296u);
  EXPECT_EQ(report.count("alive"), 143u);
  EXPECT_EQ(report.count("anomalous"), 112u);
  EXPECT_EQ(report.count("excluded"), 33u);
}

TEST(Validation, EmptyList) {
  const auto report = validate_dataset({}, fertility_task());
  EXPECT_TRUE(report.valid());
  EXPECT_EQ(report.n_sequences, 0u);
  EXPECT_EQ(report.total_frames, 0u);
  for (const auto& [label, count] : report.class_counts) EXPECT_EQ(count, 0u) << label;
}

TEST(Validation, DetectsRuleBreaks) {
  const auto spec = fertility_task();
  auto seqs = synthetic_records(TaskKind::fertility, 1, 9);
  auto seq = seqs.front();
  ASSERT_TRUE(sequence_violations(seq, spec).empty());

  auto wrong_last = seq;
  wrong_last.sequence_label = wrong_last.sequence_label == "alive" ? "unfertilized" : "alive";
  EXPECT_FALSE(sequence_violations(wrong_last, spec).empty());

  auto unsure_late = seq;
  unsure_late.frames[static_cast<std::size_t>(*seq.flipping_point) + 1].frame_label = "unsure";
  EXPECT_FALSE(sequence_violations(unsure_late, spec).empty());

  auto bad_well = seq;
  bad_well.well_id = 96;
  EXPECT_FALSE(sequence_violations(bad_well, spec).empty());

  auto short_seq = seq;
  short_seq.frames.pop_back();
  EXPECT_FALSE(sequence_violations(short_seq, spec).empty());

  auto bad_offset = seq;
  bad_offset.frames[3].capture_offset_minutes += 1;
  EXPECT_FALSE(sequence_violations(bad_offset, spec).empty());

  std::vector<SequenceRecord> dup{seq, seq};
  EXPECT_FALSE(validate_dataset(dup, spec).valid());
}

TEST(Split, ThreeWaySizesAndDeterminism) {
  const auto seqs = synthetic_records(TaskKind::fertility, 14, 0);
  const auto spec = fertility_task();
  const auto a = split_dataset(seqs, spec, {0.70, 0.15, 0.15}, 0);
  const auto b = split_dataset(seqs, spec, {0.70, 0.15, 0.15}, 0);
  EXPECT_EQ(a.train.size(), 942u);
  EXPECT_EQ(a.validation.size(), 201u);
  EXPECT_EQ(a.test.size(), 201u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  const auto c = split_dataset(seqs, spec, {0.70, 0.15, 0.15}, 1);
  EXPECT_NE(ids(a.test), ids(c.test));
}

TEST(Split, StratifiedPartition) {
  const auto seqs = synthetic_records(TaskKind::fertility, 14, 0);
  const auto spec = fertility_task();
  const auto s = split_dataset(seqs, spec, {0.70, 0.15, 0.15}, 4);
  auto alive = [&](const std::vector<SequenceRecord>& v) {
    return std::count_if(v.begin(), v.end(), [](const auto& x) { return x.sequence_label == "alive"; });
  };
  // 747 alive of 1344: 201 * 747 / 1344 = 111.7
  EXPECT_NEAR(alive(s.validation), 112, 1);
  EXPECT_NEAR(alive(s.test), 112, 1);
  EXPECT_EQ(alive(s.train) + alive(s.validation) + alive(s.test), 747);
}

TEST(Split, SingleClassIsRejected) {
  std::vector<SequenceRecord> seqs;
  for (int i = 0; i < 10; ++i) seqs.push_back(labelled(i, "alive"));
  EXPECT_THROW(split_dataset(seqs, fertility_task(), {0.7, 0.15, 0.15}, 0), std::invalid_argument);
  seqs.push_back(labelled(20, ""));
  EXPECT_THROW(split_dataset(seqs, fertility_task(), {0.7, 0.15, 0.15}, 0), std::invalid_argument);
}

TEST(Split, PartitionPropertyRandomized) {
  Rng rng(3);
  const auto spec = toxicity_task();
  for (int c = 0; c < 1000; ++c) {
    const int n0 = static_cast<int>(rng.between(1, 60)), n1 = static_cast<int>(rng.between(1, 60));
    std::vector<SequenceRecord> seqs;
    for (int i = 0; i < n0; ++i) seqs.push_back(labelled(i, "alive"));
    for (int i = 0; i < n1; ++i) seqs.push_back(labelled(100 + i, "anomalous"));
    const double v = rng.uniform(0.0, 0.4), t = rng.uniform(0.0, 0.4);
    const SplitRatios r{1.0 - v - t, v, t};
    const auto s = split_dataset(seqs, spec, r, rng.next_u64());
    const auto n = static_cast<std::size_t>(n0 + n1);
    ASSERT_EQ(s.validation.size(), static_cast<std::size_t>(std::floor(v * static_cast<double>(n))));
    ASSERT_EQ(s.test.size(), static_cast<std::size_t>(std::floor(t * static_cast<double>(n))));
    ASSERT_EQ(s.train.size() + s.validation.size() + s.test.size(), n);
    std::set<std::string> all = ids(s.train);
    for (const auto& x : s.validation) ASSERT_TRUE(all.insert(x.id()).second);
    for (const auto& x : s.test) ASSERT_TRUE(all.insert(x.id()).second);
  }
}
