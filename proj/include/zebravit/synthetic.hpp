#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "zebravit/data_model.hpp"
#include "zebravit/image.hpp"
#include "zebravit/rng.hpp"
#include "zebravit/task.hpp"

namespace zebravit {

/// Synthetic well-plate dataset generator.
///
/// Every well is rendered as a chorion ring around an inner blob. Growth
/// trajectories enlarge the blob and add concentric structure over time;
/// static trajectories keep a granular disk of constant size; arrested
/// trajectories grow until a change point, then freeze, darken and turn
/// granular. `separability` blends each class's rendering parameters with
/// the two-class average, so at 0 both classes are drawn from one
/// distribution and at 1 they use their own templates.
struct SynthConfig {
  TaskSpec spec = fertility_task();
  int n_runs = 1;
  PixelSize image_size{224, 224};
  double separability = 1.0;
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_runs < 1) throw std::invalid_argument("n_runs must be >= 1");
    if (!(separability >= 0.0 && separability <= 1.0)) throw std::invalid_argument("separability must be in [0, 1]");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
    if (image_size.width < 4 || image_size.height < 4) throw std::invalid_argument("image size must be at least 4x4");
  }
};

enum class Trajectory { growth, static_disk, arrested_growth };

/// Everything needed to render one well; pixels are a pure function of this.
struct SequenceParams {
  TaskKind task = TaskKind::fertility;
  Trajectory trajectory = Trajectory::growth;
  std::string run_id;
  int well_id = 0;
  int flipping_point = -1;  // fertility: first definitive frame
  int change_point = -1;    // toxicity: first frame after which arrest applies
  int lethal_frame = -1;    // toxicity arrested: first `lethal effect` frame

  // Geometry in units of half the smaller image side.
  double center_x = 0.0;
  double center_y = 0.0;
  double chorion_radius = 0.85;
  double blob_start_radius = 0.42;
  double blob_end_radius = 0.66;
  double growth_frames = 25.0;
  double post_change_growth = 1.0;  // growth retained after the change point
  double darkening = 0.0;           // intensity lost after the change point
  double clouding = 0.0;            // chorion fluid darkening after the change point
  double blob_intensity = 0.40;
  double granularity = 0.0;
  double post_change_granularity = 0.0;
  double structure = 0.15;
  std::uint64_t texture_seed = 0;
  std::uint64_t noise_seed = 0;
};

/// Ground-truth sequence label implied by the generation parameters.
inline std::string generator_oracle_label(const SequenceParams& p) {
  switch (p.trajectory) {
    case Trajectory::growth:
      return std::string(labels::alive);
    case Trajectory::arrested_growth:
      return std::string(labels::anomalous);
    case Trajectory::static_disk:
      return p.task == TaskKind::fertility ? std::string(labels::unfertilized) : std::string();
  }
  return {};
}

inline std::string frame_label_at(const SequenceParams& p, int t) {
  if (p.task == TaskKind::fertility) {
    if (t < p.flipping_point) return std::string(labels::unsure);
    return generator_oracle_label(p);
  }
  switch (p.trajectory) {
    case Trajectory::growth:
      return std::string(labels::alive);
    case Trajectory::static_disk:
      return std::string(labels::not_fertilized);
    case Trajectory::arrested_growth:
      if (t < p.change_point) return std::string(labels::alive);
      return std::string(t < p.lethal_frame ? labels::sublethal : labels::lethal);
  }
  return {};
}

namespace synth_detail {

inline double lerp(double a, double b, double s) { return a + (b - a) * s; }

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return derive_seed(a, b); }

/// Value noise in [-1, 1] on an integer lattice.
inline double lattice(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const std::uint64_t h = mix(seed, static_cast<std::uint64_t>(x) * 0x9E3779B1ULL ^ static_cast<std::uint64_t>(y));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double ax = x - fx, ay = y - fy;
  const double v00 = lattice(seed, ix, iy), v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1), v11 = lattice(seed, ix + 1, iy + 1);
  return lerp(lerp(v00, v10, ax), lerp(v01, v11, ax), ay);
}

inline double coverage(double edge_distance) { return std::clamp(edge_distance + 0.5, 0.0, 1.0); }

/// Outcome counts for a dataset of n sequences, proportional to `weights`.
inline std::vector<Trajectory> outcome_list(const TaskSpec& spec, std::size_t n) {
  std::vector<Trajectory> kinds;
  std::vector<std::size_t> weights;
  if (spec.kind == TaskKind::fertility) {
    kinds = {Trajectory::growth, Trajectory::static_disk};
    weights = {5, 4};
  } else {
    kinds = {Trajectory::growth, Trajectory::arrested_growth, Trajectory::static_disk};
    weights = {143, 112, 33};
  }
  const auto counts = detail::apportion(n, weights);
  std::vector<Trajectory> out;
  for (std::size_t k = 0; k < kinds.size(); ++k) out.insert(out.end(), counts[k], kinds[k]);
  return out;
}

}  // namespace synth_detail

/// Samples the per-well parameters of a whole dataset (no pixels).
inline std::vector<SequenceParams> sample_sequence_params(const SynthConfig& config) {
  using synth_detail::lerp;
  config.validate();
  const auto& spec = config.spec;
  const int n_frames = spec.frames_per_sequence;
  const std::size_t n = static_cast<std::size_t>(config.n_runs) * TaskSpec::wells_per_plate;

  Rng rng(config.seed);
  auto outcomes = synth_detail::outcome_list(spec, n);
  rng.shuffle(std::span<Trajectory>(outcomes));

  const double s = config.separability;
  std::vector<SequenceParams> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r(derive_seed(config.seed, 1000 + i));
    SequenceParams p;
    p.task = spec.kind;
    p.trajectory = outcomes[i];
    const int run = static_cast<int>(i / TaskSpec::wells_per_plate);
    char run_id[16];
    std::snprintf(run_id, sizeof run_id, "run%02d", run + 1);
    p.run_id = run_id;
    p.well_id = static_cast<int>(i % TaskSpec::wells_per_plate);
    p.center_x = r.uniform(-0.05, 0.05);
    p.center_y = r.uniform(-0.05, 0.05);
    p.chorion_radius = r.uniform(0.82, 0.88);
    p.texture_seed = r.next_u64();
    p.noise_seed = r.next_u64();

    // Class templates; "positive" is the growth trajectory.
    const bool positive = p.trajectory == Trajectory::growth;
    const double jitter_start = r.uniform(-0.02, 0.02);
    const double jitter_end = r.uniform(-0.03, 0.03);
    const double jitter_intensity = r.uniform(-0.02, 0.02);

    if (spec.kind == TaskKind::fertility) {
      p.flipping_point = static_cast<int>(r.between(10, 40));
      const double t_end = positive ? 0.66 : 0.42;
      const double t_intensity = positive ? 0.40 : 0.55;
      const double t_gran = positive ? 0.0 : 0.25;
      const double t_struct = positive ? 0.15 : 0.0;
      p.blob_start_radius = 0.42 + jitter_start;
      p.blob_end_radius = lerp(0.54, t_end, s) + jitter_end;
      p.growth_frames = r.uniform(20.0, 30.0);
      p.blob_intensity = lerp(0.475, t_intensity, s) + jitter_intensity;
      p.granularity = lerp(0.125, t_gran, s);
      p.structure = lerp(0.075, t_struct, s);
    } else {
      p.change_point = static_cast<int>(r.between(12, 48));
      p.growth_frames = r.uniform(40.0, 60.0);
      p.blob_start_radius = 0.40 + jitter_start;
      p.blob_end_radius = 0.66 + jitter_end;
      p.blob_intensity = 0.42 + jitter_intensity;
      p.structure = 0.15;
      if (p.trajectory == Trajectory::static_disk) {
        p.blob_start_radius = 0.42 + jitter_start;
        p.blob_end_radius = p.blob_start_radius;
        p.blob_intensity = 0.55 + jitter_intensity;
        p.granularity = 0.25;
        p.structure = 0.0;
        p.change_point = -1;
      } else {
        p.post_change_growth = lerp(0.5, positive ? 1.0 : 0.0, s);
        p.darkening = lerp(0.125, positive ? 0.0 : 0.25, s);
        p.post_change_granularity = lerp(0.1, positive ? 0.0 : 0.2, s);
        p.clouding = lerp(0.15, positive ? 0.0 : 0.3, s);
        // Growth wells keep their change point: below full separability
        // they partially arrest too.
        if (!positive) p.lethal_frame = std::min(n_frames, p.change_point + static_cast<int>(r.between(24, 72)));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Renders frame t of one well; deterministic given (params, t, config).
inline Image8 render_frame(const SequenceParams& p, int t, const SynthConfig& config) {
  const int w = config.image_size.width, h = config.image_size.height;
  const double unit = 0.5 * std::min(w, h);
  const double cx = 0.5 * w + p.center_x * unit, cy = 0.5 * h + p.center_y * unit;

  double radius_frac = 0.0;
  double intensity = p.blob_intensity;
  double granularity = p.granularity;
  double fluid = 0.78;
  auto grown = [&](double frames) {
    return p.blob_start_radius + (p.blob_end_radius - p.blob_start_radius) * (1.0 - std::exp(-frames / p.growth_frames));
  };
  if (p.change_point >= 0 && t > p.change_point) {
    const double before = grown(p.change_point);
    radius_frac = before + (grown(t) - before) * p.post_change_growth;
    const double ramp = std::min(1.0, (t - p.change_point) / 12.0);
    intensity -= p.darkening * ramp;
    granularity += p.post_change_granularity * ramp;
    fluid -= p.clouding * ramp;
  } else {
    radius_frac = grown(t);
  }
  const double n_frames = config.spec.frames_per_sequence;
  const double structure = p.structure * std::min(1.0, t / (0.5 * n_frames));

  const double chorion = p.chorion_radius * unit;
  const double ring_half = 0.025 * unit;
  const double blob = radius_frac * unit;
  const double cell = std::max(1.5, 0.035 * unit);
  const double ring_period = std::max(2.0, 0.3 * blob);

  Image8 img(w, h, 3);
  Rng noise(derive_seed(p.noise_seed, static_cast<std::uint64_t>(t)));
  const double max_r = std::hypot(0.5 * w, 0.5 * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      const double rr = std::hypot(x + 0.5 - 0.5 * w, y + 0.5 - 0.5 * h) / max_r;
      double v = 0.82 - 0.06 * rr * rr;
      const double inside = synth_detail::coverage(chorion - ring_half - d);
      v = synth_detail::lerp(v, fluid, inside);
      const double ring = std::min(synth_detail::coverage(d - (chorion - ring_half)),
                                   synth_detail::coverage(chorion + ring_half - d));
      v = synth_detail::lerp(v, 0.55, ring);
      double tint_g = 1.0, tint_b = 1.0;
      const double in_blob = synth_detail::coverage(blob - d);
      if (in_blob > 0.0) {
        double b = intensity;
        if (granularity > 0.0) b += granularity * synth_detail::value_noise(p.texture_seed, x / cell, y / cell);
        if (structure > 0.0) b += structure * std::cos(2.0 * 3.14159265358979323846 * d / ring_period);
        v = synth_detail::lerp(v, b, in_blob);
        tint_g = synth_detail::lerp(1.0, 0.95, in_blob);
        tint_b = synth_detail::lerp(1.0, 0.85, in_blob);
      }
      const double tints[3] = {1.0, tint_g, tint_b};
      for (int c = 0; c < 3; ++c) {
        double px = v * tints[c];
        if (config.noise_std > 0.0) px += config.noise_std * noise.normal();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(px, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

inline std::string image_ref_for(const SequenceParams& p, int t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/%s/w%02d_t%03d.png", p.run_id.c_str(), p.well_id, t);
  return buf;
}

inline SequenceRecord sequence_record(const SequenceParams& p, const TaskSpec& spec) {
  SequenceRecord seq;
  seq.run_id = p.run_id;
  seq.well_id = p.well_id;
  seq.sequence_label = generator_oracle_label(p);
  if (p.task == TaskKind::fertility) seq.flipping_point = p.flipping_point;
  else if (p.trajectory == Trajectory::arrested_growth) seq.flipping_point = p.change_point;
  for (int t = 0; t < spec.frames_per_sequence; ++t) {
    FrameRecord f;
    f.run_id = p.run_id;
    f.well_id = p.well_id;
    f.frame_index = t;
    f.capture_offset_minutes = t * spec.interval_minutes;
    f.frame_label = frame_label_at(p, t);
    f.image_ref = image_ref_for(p, t);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

/// Writes images and `manifest.csv` under out_dir; returns the manifest path.
inline std::filesystem::path generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const auto params = sample_sequence_params(config);
  fs::create_directories(out_dir);
  std::vector<SequenceRecord> sequences;
  sequences.reserve(params.size());
  std::string current_run;
  for (const auto& p : params) {
    if (p.run_id != current_run) {
      fs::create_directories(out_dir / "images" / p.run_id);
      current_run = p.run_id;
    }
    for (int t = 0; t < config.spec.frames_per_sequence; ++t)
      write_png(out_dir / image_ref_for(p, t), render_frame(p, t, config));
    sequences.push_back(sequence_record(p, config.spec));
  }
  const auto manifest = out_dir / "manifest.csv";
  write_manifest(manifest, sequences);
  return manifest;
}

}  // namespace zebravit
