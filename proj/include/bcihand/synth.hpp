#pragma once

#include "bcihand/dataset.hpp"
#include "bcihand/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bcihand {

enum class SourceKind { MotorMu, MotorBeta, Noise, Artifact };
std::string_view to_string(SourceKind k);

// One oscillatory motor source. Its power envelope relative to Get Ready is 1,
// ramps (raised cosine, ramp_s) down to 1 - depth at erd_start_s, ramps up to
// 1 + ers_rebound at erd_end_s, and back to 1 after ers_duration_s.
struct MotorSourceConfig {
  double center_hz = 10.0;
  double erd_depth_wrist = 0.6;  // fractional power decrease
  double erd_depth_finger = 0.1;
  double erd_start_s = 1.0;
  double erd_end_s = 4.0;
  double ers_rebound = 0.3;
  double ers_duration_s = 1.0;
  double ramp_s = 0.2;
  double amplitude_uv = 5.0;     // rms before the ERD envelope

  double depth(ClassLabel c) const noexcept { return c == ClassLabel::Wrist ? erd_depth_wrist : erd_depth_finger; }
  SourceKind kind() const noexcept { return center_hz < 13.0 ? SourceKind::MotorMu : SourceKind::MotorBeta; }
};

// Power envelope P(t) of a motor source for one class, t relative to Get Ready.
double motor_power_envelope(const MotorSourceConfig& m, double depth, double t);

struct SynthConfig {
  std::size_t n_subjects = 1;
  std::size_t n_channels = 16;
  double fs = 200.0;
  std::size_t n_sources = 10;
  std::vector<MotorSourceConfig> motor_sources = default_motor_sources();
  std::size_t n_artifact_sources = 2;

  // motor bursts: amplitude multiplied by a unit-power lognormal of smoothed
  // noise. Bursting is strong at rest and weak while desynchronised; the
  // log-sd moves between the two with the envelope's raised-cosine ramps.
  double burst_sigma = 1.0;
  double burst_sigma_erd = 0.3;
  double burst_tau_s = 0.05;
  // rescale the bursting carrier to unit power before, inside and after each
  // source's ERD window, so every trial realises its programmed depth exactly.
  // Power is measured inside the analysis band: strong bursting at rest
  // spreads power below the mu peak, and a broadband normalisation would make
  // the in-band ERD shallower than programmed.
  bool burst_normalise = true;
  double burst_band_lo_hz = 8.0;
  double burst_band_hi_hz = 30.0;

  double pink_exponent = 1.0;
  double pink_amplitude_uv = 10.0;
  double pink_modulation_sigma = 0.3;
  double pink_modulation_tau_s = 0.2;

  double artifact_rate_hz = 2.0;
  double artifact_duration_s = 0.2;
  double artifact_amplitude_uv = 10.0;

  double snr_db = 10.0;           // mixed-source power over white sensor noise power
  double spike_rate = 0.0;        // probability that a trial carries a spike
  double spike_amp_uv = 300.0;
  std::vector<std::size_t> spike_trials; // explicit per-subject trial indices, added to spike_rate picks

  int trials_per_movement = 20;
  std::vector<Hand> hands{Hand::Right, Hand::Left};
  std::vector<Condition> conditions{Condition::Real, Condition::Imagined};

  double mixing_scale = 1.2;      // norm of every mixing column
  double max_condition = 10.0;    // mixing redrawn until cond(A) is at most this
  double block_s = 8.0;           // one trial per block
  double event_offset_s = 1.5;    // Get Ready position inside the block
  std::uint64_t seed = 1;

  static std::vector<MotorSourceConfig> default_motor_sources();
  std::size_t noise_sources() const noexcept {
    return n_sources - motor_sources.size() - n_artifact_sources;
  }
  std::size_t trials_per_subject() const noexcept {
    return 5 * static_cast<std::size_t>(trials_per_movement) * hands.size() * conditions.size();
  }
};

// Throws InvalidSynthConfig.
void validate(const SynthConfig& cfg);

struct SubjectTruth {
  std::string subject;
  Eigen::MatrixXd mixing;                 // channels x sources
  std::vector<TrialMeta> trials;          // recording order
  std::vector<std::size_t> events;        // Get Ready sample per trial
  std::vector<std::size_t> corrupted;     // indices into `trials`
  std::vector<RowMatrix> epoch_sources;   // per trial, sources x epoch samples
};

struct GroundTruth {
  std::vector<SourceKind> source_kinds;
  std::vector<MotorSourceConfig> motor_sources;
  std::vector<SubjectTruth> subjects;
};

struct SynthSubject {
  std::string id;
  ContinuousRecording recording;
};

struct SynthOutput {
  std::vector<SynthSubject> subjects;
  GroundTruth truth;
};

// Seed splitting: every random stream is an mt19937_64 seeded with
// splitmix64(seed ^ splitmix64(tag)) where tag packs (subject, purpose, index),
// so trials and sources can be drawn independently and in parallel.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t subject, std::uint64_t purpose, std::uint64_t index);

SynthOutput generate(const SynthConfig& cfg);

// Epochs every subject's recording into the dataset layout.
Dataset to_dataset(const SynthOutput& out);

// Writes the dataset plus truth.json (mixing, kinds, envelope parameters,
// corrupted trials).
void export_dataset(const SynthOutput& out, const SynthConfig& cfg, const std::filesystem::path& dir);

} // namespace bcihand
