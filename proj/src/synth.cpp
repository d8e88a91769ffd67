#include "bcihand/synth.hpp"

#include "bcihand/epoch.hpp"
#include "bcihand/error.hpp"
#include "fftw_mutex.hpp"

#include <fftw3.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>

namespace bcihand {

namespace {

constexpr std::uint64_t kMixing = 1, kNoise = 2, kArtifact = 3, kMotor = 4, kSensor = 5, kSpike = 6;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double raised_cosine(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return 0.5 - 0.5 * std::cos(std::numbers::pi * x);
}

// Unit-variance Gaussian noise smoothed by a Gaussian kernel of width tau.
std::vector<double> smooth_gaussian(std::size_t n, double tau_s, double fs, std::mt19937_64& rng) {
  const double sigma = tau_s * fs;
  const auto r = static_cast<std::size_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double energy = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double x = (static_cast<double>(i) - static_cast<double>(r)) / sigma;
    k[i] = std::exp(-0.5 * x * x);
    energy += k[i] * k[i];
  }
  for (auto& v : k) v /= std::sqrt(energy);
  std::normal_distribution<double> normal;
  std::vector<double> w(n + 2 * r);
  for (auto& v : w) v = normal(rng);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) acc += k[j] * w[i + j];
    out[i] = acc;
  }
  return out;
}

// exp(sigma z - sigma^2): lognormal with unit mean square
std::vector<double> lognormal_envelope(std::size_t n, double sigma, double tau_s, double fs, std::mt19937_64& rng) {
  auto z = smooth_gaussian(n, tau_s, fs, rng);
  for (auto& v : z) v = std::exp(sigma * v - sigma * sigma);
  return z;
}

// Scales each [edges[i], edges[i+1]) of b so that `probe` (b seen through
// some linear filter) has unit mean square there.
void normalise_segments(std::vector<double>& b, const std::vector<double>& probe, const std::vector<std::size_t>& edges) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (edges[i + 1] <= edges[i]) continue;
    double ms = 0.0;
    for (std::size_t k = edges[i]; k < edges[i + 1]; ++k) ms += probe[k] * probe[k];
    const double g = 1.0 / std::sqrt(ms / static_cast<double>(edges[i + 1] - edges[i]));
    for (std::size_t k = edges[i]; k < edges[i + 1]; ++k) b[k] *= g;
  }
}

std::vector<double> pink_noise(std::size_t n, double alpha, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  double* x = fftw_alloc_real(n);
  fftw_complex* spec = fftw_alloc_complex(n / 2 + 1);
  for (std::size_t i = 0; i < n; ++i) x[i] = normal(rng);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), x, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, x, FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  spec[0][0] = spec[0][1] = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double g = std::pow(static_cast<double>(k), -alpha / 2.0);
    spec[k][0] *= g;
    spec[k][1] *= g;
  }
  fftw_execute(inv);
  std::vector<double> out(x, x + n);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(x);
  fftw_free(spec);
  double ss = 0.0;
  for (double v : out) ss += v * v;
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (auto& v : out) v /= sd;
  return out;
}

std::string subject_id(std::size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", s + 1);
  return buf;
}

} // namespace

std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::MotorMu: return "MotorMu";
    case SourceKind::MotorBeta: return "MotorBeta";
    case SourceKind::Noise: return "Noise";
    case SourceKind::Artifact: return "Artifact";
  }
  return "?";
}

std::vector<MotorSourceConfig> SynthConfig::default_motor_sources() {
  MotorSourceConfig mu;
  MotorSourceConfig beta;
  beta.center_hz = 20.0;
  beta.erd_depth_wrist = 0.3;
  beta.erd_depth_finger = 0.3;
  return {mu, beta};
}

double motor_power_envelope(const MotorSourceConfig& m, double depth, double t) {
  const double e0 = m.erd_start_s, e1 = m.erd_end_s, e2 = m.erd_end_s + m.ers_duration_s;
  const double r = m.ramp_s;
  if (t < e0) return 1.0;
  if (t < e1) return 1.0 - depth * raised_cosine((t - e0) / r);
  if (t < e2) return (1.0 - depth) + (depth + m.ers_rebound) * raised_cosine((t - e1) / r);
  return (1.0 + m.ers_rebound) - m.ers_rebound * raised_cosine((t - e2) / r);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t subject, std::uint64_t purpose, std::uint64_t index) {
  const std::uint64_t tag = (subject << 48) ^ (purpose << 40) ^ index;
  return splitmix64(seed ^ splitmix64(tag));
}

void validate(const SynthConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidSynthConfig, msg); };
  if (!(c.fs > 0.0)) fail("fs must be positive");
  if (c.n_subjects == 0) fail("need at least one subject");
  if (c.n_sources > c.n_channels) fail("more sources than channels");
  if (c.motor_sources.size() + c.n_artifact_sources > c.n_sources) fail("motor plus artifact sources exceed n_sources");
  if (!std::isfinite(c.snr_db)) fail("snr_db must be finite");
  if (c.trials_per_movement < 1) fail("trials_per_movement must be positive");
  if (c.hands.empty() || c.conditions.empty()) fail("need at least one hand and one condition");
  if (c.event_offset_s < kEpochPreS || c.block_s - c.event_offset_s < kEpochDurationS - kEpochPreS) {
    fail("block too short for a -1..6 s epoch around the event");
  }
  if (!(c.max_condition > 1.0)) fail("max_condition must exceed 1");
  if (!(c.burst_sigma >= 0.0) || !(c.burst_sigma_erd >= 0.0) || !(c.burst_tau_s > 0.0)) fail("invalid burst parameters");
  if (c.burst_normalise && !(c.burst_band_lo_hz > 0.0 && c.burst_band_lo_hz < c.burst_band_hi_hz && c.burst_band_hi_hz < c.fs / 2.0)) {
    fail("burst normalisation band must satisfy 0 < lo < hi < fs/2");
  }
  if (!(c.spike_rate >= 0.0 && c.spike_rate <= 1.0)) fail("spike_rate must lie in [0, 1]");
  for (const auto& m : c.motor_sources) {
    if (!(m.erd_depth_wrist >= 0.0 && m.erd_depth_wrist < 1.0 && m.erd_depth_finger >= 0.0 && m.erd_depth_finger < 1.0)) {
      fail("erd depths must lie in [0, 1)");
    }
    if (!(m.center_hz > 1.0 && m.center_hz + 1.0 < c.fs / 2.0)) fail("motor centre frequency out of range");
    if (!(m.erd_start_s < m.erd_end_s) || m.ramp_s <= 0.0 || m.ers_rebound < 0.0) fail("invalid envelope timing");
  }
  for (auto t : c.spike_trials) {
    if (t >= c.trials_per_subject()) fail("spike trial index out of range");
  }
}

SynthOutput generate(const SynthConfig& cfg) {
  validate(cfg);
  const double fs = cfg.fs;
  const std::size_t block = seconds_to_samples(cfg.block_s, fs);
  const std::size_t event_at = seconds_to_samples(cfg.event_offset_s, fs);
  const std::size_t ntrials = cfg.trials_per_subject();
  const std::size_t total = block * ntrials;
  const std::size_t epoch_len = seconds_to_samples(kEpochDurationS, fs);
  const std::size_t n_motor = cfg.motor_sources.size();
  const std::size_t n_noise = cfg.noise_sources();
  const auto ns = static_cast<Eigen::Index>(cfg.n_sources);
  const auto nc = static_cast<Eigen::Index>(cfg.n_channels);

  SynthOutput out;
  for (const auto& m : cfg.motor_sources) out.truth.source_kinds.push_back(m.kind());
  for (std::size_t i = 0; i < n_noise; ++i) out.truth.source_kinds.push_back(SourceKind::Noise);
  for (std::size_t i = 0; i < cfg.n_artifact_sources; ++i) out.truth.source_kinds.push_back(SourceKind::Artifact);
  out.truth.motor_sources = cfg.motor_sources;

  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    SubjectTruth truth;
    truth.subject = subject_id(s);
    for (Hand h : cfg.hands)
      for (Condition c : cfg.conditions)
        for (Movement mv : kAllMovements)
          for (int rep = 0; rep < cfg.trials_per_movement; ++rep) truth.trials.push_back({truth.subject, h, c, mv, rep});
    for (std::size_t i = 0; i < ntrials; ++i) truth.events.push_back(i * block + event_at);

    // mixing: Gaussian columns of norm mixing_scale, redrawn until well conditioned
    {
      std::mt19937_64 rng(derive_seed(cfg.seed, s, kMixing, 0));
      std::normal_distribution<double> normal;
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        Eigen::MatrixXd a(nc, ns);
        for (Eigen::Index r = 0; r < nc; ++r)
          for (Eigen::Index c = 0; c < ns; ++c) a(r, c) = normal(rng);
        for (Eigen::Index c = 0; c < ns; ++c) a.col(c) *= cfg.mixing_scale / a.col(c).norm();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) > 0.0 && sv(0) / sv(sv.size() - 1) <= cfg.max_condition) {
          truth.mixing = a;
          ok = true;
        }
      }
      if (!ok) throw Error(ErrorKind::InvalidSynthConfig, "no mixing matrix met max_condition");
    }

    RowMatrix src = RowMatrix::Zero(ns, static_cast<Eigen::Index>(total));

    std::optional<SosFilter> band;
    if (cfg.burst_normalise) band.emplace(FilterSpec::bandpass(cfg.burst_band_lo_hz, cfg.burst_band_hi_hz, fs));

    // motor sources, one independent stream per (trial, source)
    const auto nt = static_cast<std::ptrdiff_t>(ntrials);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < nt; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const ClassLabel label = truth.trials[ui].label();
      for (std::size_t j = 0; j < n_motor; ++j) {
        const auto& m = cfg.motor_sources[j];
        std::mt19937_64 rng(derive_seed(cfg.seed, s, kMotor, ui * 64 + j));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const double f = m.center_hz + u(rng);
        const double phase = std::numbers::pi * (u(rng) + 1.0);
        auto carrier = smooth_gaussian(block, cfg.burst_tau_s, fs, rng);
        for (std::size_t k = 0; k < block; ++k) {
          const double t = (static_cast<double>(k) - static_cast<double>(event_at)) / fs;
          const double w = t < m.erd_end_s ? raised_cosine((t - m.erd_start_s) / m.ramp_s)
                                           : 1.0 - raised_cosine((t - m.erd_end_s) / m.ramp_s);
          const double sd = cfg.burst_sigma + (cfg.burst_sigma_erd - cfg.burst_sigma) * w;
          carrier[k] = std::exp(sd * carrier[k] - sd * sd) * std::sqrt(2.0) *
                       std::cos(2.0 * std::numbers::pi * f * t + phase);
        }
        if (cfg.burst_normalise) {
          const auto at = [&](double t) {
            return std::min(block, static_cast<std::size_t>(std::max(0.0, std::round(static_cast<double>(event_at) + t * fs))));
          };
          const auto inband = apply_filter_zero_phase(carrier, *band);
          normalise_segments(carrier, inband, {0, at(m.erd_start_s), at(m.erd_end_s), block});
        }
        const double depth = m.depth(label);
        double* row = src.row(static_cast<Eigen::Index>(j)).data() + ui * block;
        for (std::size_t k = 0; k < block; ++k) {
          const double t = (static_cast<double>(k) - static_cast<double>(event_at)) / fs;
          row[k] = m.amplitude_uv * std::sqrt(motor_power_envelope(m, depth, t)) * carrier[k];
        }
      }
    }

    // pink background sources, continuous over the session
    for (std::size_t j = 0; j < n_noise; ++j) {
      std::mt19937_64 rng(derive_seed(cfg.seed, s, kNoise, j));
      const auto pink = pink_noise(total, cfg.pink_exponent, rng);
      const auto mod = lognormal_envelope(total, cfg.pink_modulation_sigma, cfg.pink_modulation_tau_s, fs, rng);
      double* row = src.row(static_cast<Eigen::Index>(n_motor + j)).data();
      for (std::size_t k = 0; k < total; ++k) row[k] = cfg.pink_amplitude_uv * pink[k] * mod[k];
    }

    // EMG-like artifact sources: Hann-windowed white-noise bursts at random times
    for (std::size_t j = 0; j < cfg.n_artifact_sources; ++j) {
      std::mt19937_64 rng(derive_seed(cfg.seed, s, kArtifact, j));
      std::normal_distribution<double> normal;
      std::uniform_int_distribution<std::size_t> where(0, total - 1);
      const std::size_t len = std::max<std::size_t>(2, seconds_to_samples(cfg.artifact_duration_s, fs));
      const auto count = static_cast<std::size_t>(static_cast<double>(total) / fs * cfg.artifact_rate_hz);
      double* row = src.row(static_cast<Eigen::Index>(n_motor + n_noise + j)).data();
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t start = where(rng);
        for (std::size_t k = 0; k < len && start + k < total; ++k) {
          const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len - 1));
          row[start + k] = cfg.artifact_amplitude_uv * w * normal(rng);
        }
      }
    }

    // sensors
    ContinuousRecording rec;
    rec.fs = fs;
    for (Eigen::Index c = 0; c < nc; ++c) rec.channel_names.push_back("E" + std::to_string(c + 1));
    rec.data = truth.mixing * src;
    const double signal_power = rec.data.squaredNorm() / static_cast<double>(rec.data.size());
    const double noise_sd = std::sqrt(signal_power / std::pow(10.0, cfg.snr_db / 10.0));
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < nc; ++c) {
      std::mt19937_64 rng(derive_seed(cfg.seed, s, kSensor, static_cast<std::uint64_t>(c)));
      std::normal_distribution<double> normal;
      double* row = rec.data.row(c).data();
      for (std::size_t k = 0; k < total; ++k) row[k] += noise_sd * normal(rng);
    }

    // spikes inside the epochs of corrupted trials
    {
      std::mt19937_64 rng(derive_seed(cfg.seed, s, kSpike, 0));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<char> hit(ntrials, 0);
      for (std::size_t i = 0; i < ntrials; ++i) hit[i] = u(rng) < cfg.spike_rate ? 1 : 0;
      for (auto t : cfg.spike_trials) hit[t] = 1;
      std::uniform_int_distribution<Eigen::Index> chan(0, nc - 1);
      std::uniform_int_distribution<std::size_t> pos(10, epoch_len - 11);
      const std::size_t pre = seconds_to_samples(kEpochPreS, fs);
      for (std::size_t i = 0; i < ntrials; ++i) {
        const Eigen::Index c = chan(rng);
        const std::size_t p = pos(rng);
        const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
        if (!hit[i]) continue;
        truth.corrupted.push_back(i);
        const std::size_t at = truth.events[i] - pre + p;
        // 3-sample spike so that zero-phase filtering keeps its peak
        rec.data(c, static_cast<Eigen::Index>(at - 1)) += sign * 0.5 * cfg.spike_amp_uv;
        rec.data(c, static_cast<Eigen::Index>(at)) += sign * cfg.spike_amp_uv;
        rec.data(c, static_cast<Eigen::Index>(at + 1)) += sign * 0.5 * cfg.spike_amp_uv;
      }
    }

    for (std::size_t i = 0; i < ntrials; ++i) {
      rec.events.push_back({truth.events[i], "GetReady"});
      const std::size_t start = truth.events[i] - seconds_to_samples(kEpochPreS, fs);
      truth.epoch_sources.push_back(src.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(epoch_len)));
    }
    out.subjects.push_back({truth.subject, std::move(rec)});
    out.truth.subjects.push_back(std::move(truth));
  }
  return out;
}

Dataset to_dataset(const SynthOutput& out) {
  Dataset ds;
  if (out.subjects.empty()) return ds;
  ds.fs = out.subjects.front().recording.fs;
  ds.channels = out.subjects.front().recording.channel_names;
  for (std::size_t s = 0; s < out.subjects.size(); ++s) {
    const auto& truth = out.truth.subjects[s];
    ds.subjects.push_back(out.subjects[s].id);
    auto epochs = epoch(out.subjects[s].recording, truth.events, truth.trials);
    for (auto& e : epochs) ds.epochs.push_back(std::move(e));
  }
  return ds;
}

void export_dataset(const SynthOutput& out, const SynthConfig& cfg, const std::filesystem::path& dir) {
  save_dataset(dir, to_dataset(out));
  using nlohmann::ordered_json;
  ordered_json j;
  j["format"] = "bci-hand-truth";
  j["version"] = 1;
  j["fs"] = cfg.fs;
  j["snr_db"] = cfg.snr_db;
  j["seed"] = cfg.seed;
  ordered_json kinds = ordered_json::array();
  for (auto k : out.truth.source_kinds) kinds.push_back(std::string(to_string(k)));
  j["source_kinds"] = kinds;
  ordered_json motors = ordered_json::array();
  for (std::size_t i = 0; i < out.truth.motor_sources.size(); ++i) {
    const auto& m = out.truth.motor_sources[i];
    motors.push_back({{"source", i},
                      {"center_hz", m.center_hz},
                      {"erd_depth", {{"Wrist", m.erd_depth_wrist}, {"Finger", m.erd_depth_finger}}},
                      {"erd_window_s", {m.erd_start_s, m.erd_end_s}},
                      {"ers_rebound", m.ers_rebound},
                      {"ers_duration_s", m.ers_duration_s},
                      {"ramp_s", m.ramp_s},
                      {"amplitude_uv", m.amplitude_uv},
                      {"burst_sigma", cfg.burst_sigma},
                      {"burst_sigma_erd", cfg.burst_sigma_erd},
                      {"burst_tau_s", cfg.burst_tau_s},
                      {"burst_normalise", cfg.burst_normalise},
                      {"burst_band_hz", {cfg.burst_band_lo_hz, cfg.burst_band_hi_hz}}});
  }
  j["motor_sources"] = motors;
  j["noise"] = {{"pink_exponent", cfg.pink_exponent},
                {"pink_amplitude_uv", cfg.pink_amplitude_uv},
                {"modulation_sigma", cfg.pink_modulation_sigma},
                {"modulation_tau_s", cfg.pink_modulation_tau_s}};
  j["artifacts"] = {{"rate_hz", cfg.artifact_rate_hz},
                    {"duration_s", cfg.artifact_duration_s},
                    {"amplitude_uv", cfg.artifact_amplitude_uv},
                    {"spike_rate", cfg.spike_rate},
                    {"spike_amp_uv", cfg.spike_amp_uv}};
  ordered_json subjects = ordered_json::array();
  for (const auto& t : out.truth.subjects) {
    ordered_json mixing = ordered_json::array();
    for (Eigen::Index r = 0; r < t.mixing.rows(); ++r) {
      ordered_json row = ordered_json::array();
      for (Eigen::Index c = 0; c < t.mixing.cols(); ++c) row.push_back(t.mixing(r, c));
      mixing.push_back(row);
    }
    ordered_json corrupted = ordered_json::array();
    for (auto i : t.corrupted) corrupted.push_back(trial_file_name(t.trials[i]));
    subjects.push_back({{"subject", t.subject},
                        {"mixing_shape", {t.mixing.rows(), t.mixing.cols()}},
                        {"mixing", mixing},
                        {"corrupted_trials", corrupted}});
  }
  j["subjects"] = subjects;
  std::ofstream f(dir / "truth.json");
  if (!f) throw Error(ErrorKind::Io, "cannot write " + (dir / "truth.json").string());
  f << j.dump(2) << '\n';
  if (!f) throw Error(ErrorKind::Io, "write failed for " + (dir / "truth.json").string());
}

} // namespace bcihand
