#include "bcihand/features.hpp"

#include "bcihand/error.hpp"
#include "fftw_mutex.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

namespace bcihand {

std::vector<Band> FeatureGrid::default_bands() {
  std::vector<Band> out;
  for (int i = 0; i < 7; ++i) out.push_back({8.0 + 3.0 * i, 11.0 + 3.0 * i});
  return out;
}

std::size_t FeatureGrid::window_count() const {
  const long span = t_end_ms - t_start_ms - window_ms;
  if (span < 0 || step_ms <= 0) return 0;
  return static_cast<std::size_t>(span / step_ms + 1);
}

void validate(const FeatureGrid& grid) {
  if (grid.window_ms <= 0 || grid.step_ms <= 0) throw Error(ErrorKind::InvalidArgument, "window and step must be positive");
  if (grid.t_end_ms - grid.t_start_ms < grid.window_ms) throw Error(ErrorKind::InvalidArgument, "feature span shorter than one window");
  if (grid.bands.empty()) throw Error(ErrorKind::InvalidArgument, "no feature bands");
  for (std::size_t i = 0; i < grid.bands.size(); ++i) {
    const auto& b = grid.bands[i];
    if (!(b.lo_hz >= 0.0 && b.lo_hz < b.hi_hz)) throw Error(ErrorKind::InvalidArgument, "band " + std::to_string(i) + " is empty");
    if (i > 0 && b.lo_hz < grid.bands[i - 1].hi_hz) {
      throw Error(ErrorKind::InvalidArgument, "bands must be ascending and disjoint");
    }
  }
}

std::vector<SampleWindow> sliding_windows(const FeatureGrid& grid, double fs, double t0_offset_s) {
  validate(grid);
  const long t0_ms = std::lround(t0_offset_s * 1000.0);
  const std::size_t len = ms_to_samples(grid.window_ms, fs);
  std::vector<SampleWindow> out;
  for (std::size_t i = 0; i < grid.window_count(); ++i) {
    const long start_ms = grid.t_start_ms + static_cast<long>(i) * grid.step_ms;
    SampleWindow w;
    w.start = ms_to_samples(start_ms + t0_ms, fs);
    w.end = w.start + len;
    w.t_start_s = static_cast<double>(start_ms) / 1000.0;
    w.t_end_s = static_cast<double>(start_ms + grid.window_ms) / 1000.0;
    out.push_back(w);
  }
  return out;
}

namespace detail {
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
} // namespace detail

struct BandPowerExtractor::Plan {
  fftw_plan plan = nullptr;
};

BandPowerExtractor::BandPowerExtractor(std::size_t window_samples, double fs, std::vector<Band> bands, std::size_t nfft)
    : n_(window_samples), nfft_(nfft), fs_(fs), bands_(std::move(bands)), plan_(std::make_unique<Plan>()) {
  if (n_ < 2 || nfft_ < n_) throw Error(ErrorKind::InvalidArgument, "need 2 <= window samples <= nfft");
  taper_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    taper_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_ - 1));
  }
  const std::size_t half = nfft_ / 2;
  for (const auto& b : bands_) {
    std::size_t first = half + 1, last = 0;
    for (std::size_t k = 0; k <= half; ++k) {
      const double f = static_cast<double>(k) * fs_ / static_cast<double>(nfft_);
      if (f >= b.lo_hz && f < b.hi_hz) {
        first = std::min(first, k);
        last = k + 1;
      }
    }
    if (last == 0) first = 0;
    bins_.emplace_back(first, last);
  }
  double* in = fftw_alloc_real(nfft_);
  fftw_complex* out = fftw_alloc_complex(nfft_ / 2 + 1);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft_), in, out, FFTW_ESTIMATE);
  }
  fftw_free(in);
  fftw_free(out);
}

BandPowerExtractor::~BandPowerExtractor() {
  std::lock_guard lock(detail::fftw_planner_mutex());
  fftw_destroy_plan(plan_->plan);
}

void BandPowerExtractor::compute(const double* window, double* out) const {
  double* in = fftw_alloc_real(nfft_);
  fftw_complex* spec = fftw_alloc_complex(nfft_ / 2 + 1);
  double mean = 0.0;
  for (std::size_t i = 0; i < n_; ++i) mean += window[i];
  mean /= static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) in[i] = (window[i] - mean) * taper_[i];
  std::fill(in + n_, in + nfft_, 0.0);
  fftw_execute_dft_r2c(plan_->plan, in, spec);
  for (std::size_t b = 0; b < bands_.size(); ++b) {
    double p = 0.0;
    for (std::size_t k = bins_[b].first; k < bins_[b].second; ++k) p += spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    out[b] = p;
  }
  fftw_free(in);
  fftw_free(spec);
}

namespace {

void check_selection(const RowMatrix& trial, const std::vector<std::size_t>& selected) {
  if (selected.empty()) throw Error(ErrorKind::InvalidArgument, "no components selected");
  for (auto c : selected) {
    if (c >= static_cast<std::size_t>(trial.rows())) {
      throw Error(ErrorKind::InvalidArgument, "component " + std::to_string(c) + " out of range");
    }
  }
}

void check_windows(const std::vector<SampleWindow>& windows, std::size_t samples) {
  if (!windows.empty() && windows.back().end > samples) {
    throw Error(ErrorKind::WindowOutOfBounds, "feature window ends at sample " + std::to_string(windows.back().end) +
                                                  " but the trial has " + std::to_string(samples));
  }
}

void features_into(const RowMatrix& trial, const std::vector<std::size_t>& selected,
                   const std::vector<SampleWindow>& windows, const BandPowerExtractor& ex, double* out) {
  const std::size_t nb = ex.band_count();
  for (auto c : selected) {
    const double* row = trial.row(static_cast<Eigen::Index>(c)).data();
    for (const auto& w : windows) {
      ex.compute(row + w.start, out);
      out += nb;
    }
  }
}

struct Prepared {
  std::vector<SampleWindow> windows;
  std::size_t width = 0;
};

Prepared prepare(const std::vector<RowMatrix>& trials, const std::vector<TrialMeta>& meta,
                 const std::vector<std::size_t>& selected, const FeatureGrid& grid, double fs, double t0) {
  if (trials.size() != meta.size()) throw Error(ErrorKind::DimensionMismatch, "trials and metadata differ in count");
  if (trials.empty()) throw Error(ErrorKind::InvalidArgument, "no trials");
  Prepared p;
  p.windows = sliding_windows(grid, fs, t0);
  for (const auto& t : trials) {
    if (t.rows() != trials.front().rows() || t.cols() != trials.front().cols()) {
      throw Error(ErrorKind::DimensionMismatch, "component trials differ in shape");
    }
  }
  check_selection(trials.front(), selected);
  check_windows(p.windows, static_cast<std::size_t>(trials.front().cols()));
  p.width = selected.size() * p.windows.size() * grid.bands.size();
  return p;
}

FeatureMatrix empty_matrix(const std::vector<TrialMeta>& meta, const std::vector<std::size_t>& selected,
                           const FeatureGrid& grid, std::size_t width) {
  FeatureMatrix m;
  m.values.resize(static_cast<Eigen::Index>(meta.size()), static_cast<Eigen::Index>(width));
  m.columns = feature_columns(selected, grid);
  m.meta = meta;
  for (const auto& t : meta) m.labels.push_back(t.label());
  return m;
}

} // namespace

std::vector<double> band_power_features(const RowMatrix& component_trial, const std::vector<std::size_t>& selected,
                                        const FeatureGrid& grid, double fs, double t0_offset_s) {
  const auto windows = sliding_windows(grid, fs, t0_offset_s);
  check_selection(component_trial, selected);
  check_windows(windows, static_cast<std::size_t>(component_trial.cols()));
  const BandPowerExtractor ex(windows.front().end - windows.front().start, fs, grid.bands, grid.nfft);
  std::vector<double> out(selected.size() * windows.size() * grid.bands.size());
  features_into(component_trial, selected, windows, ex, out.data());
  return out;
}

std::vector<FeatureColumn> feature_columns(const std::vector<std::size_t>& selected, const FeatureGrid& grid) {
  std::vector<FeatureColumn> cols;
  for (auto c : selected) {
    for (std::size_t w = 0; w < grid.window_count(); ++w) {
      for (std::size_t b = 0; b < grid.bands.size(); ++b) cols.push_back({c, w, b});
    }
  }
  return cols;
}

FeatureMatrix extract_feature_matrix(const std::vector<RowMatrix>& component_trials, const std::vector<TrialMeta>& meta,
                                     const std::vector<std::size_t>& selected, const FeatureGrid& grid, double fs,
                                     double t0_offset_s) {
  const auto p = prepare(component_trials, meta, selected, grid, fs, t0_offset_s);
  FeatureMatrix m = empty_matrix(meta, selected, grid, p.width);
  const BandPowerExtractor ex(p.windows.front().end - p.windows.front().start, fs, grid.bands, grid.nfft);
  const auto n = static_cast<std::ptrdiff_t>(component_trials.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    features_into(component_trials[static_cast<std::size_t>(i)], selected, p.windows, ex,
                  m.values.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

namespace reference {

FeatureMatrix extract_feature_matrix(const std::vector<RowMatrix>& component_trials, const std::vector<TrialMeta>& meta,
                                     const std::vector<std::size_t>& selected, const FeatureGrid& grid, double fs,
                                     double t0_offset_s) {
  const auto p = prepare(component_trials, meta, selected, grid, fs, t0_offset_s);
  FeatureMatrix m = empty_matrix(meta, selected, grid, p.width);
  const BandPowerExtractor ex(p.windows.front().end - p.windows.front().start, fs, grid.bands, grid.nfft);
  for (std::size_t i = 0; i < component_trials.size(); ++i) {
    features_into(component_trials[i], selected, p.windows, ex, m.values.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

} // namespace reference

void log_transform(FeatureMatrix& m) {
  m.values = m.values.array().max(1e-30).log().matrix();
}

double bhattacharyya_gaussian(double mu1, double var1, double mu2, double var2) {
  const double s = var1 + var2;
  const double d = mu1 - mu2;
  return 0.25 * d * d / s + 0.5 * std::log(s / (2.0 * std::sqrt(var1 * var2)));
}

namespace {

double bd_column(const double* x, std::size_t stride, const std::vector<ClassLabel>& labels) {
  double sum[2] = {0, 0}, n[2] = {0, 0}, total = 0.0;
  const std::size_t count = labels.size();
  for (std::size_t i = 0; i < count; ++i) {
    const int c = labels[i] == ClassLabel::Wrist ? 0 : 1;
    sum[c] += x[i * stride];
    n[c] += 1;
    total += x[i * stride];
  }
  if (n[0] == 0 || n[1] == 0) throw Error(ErrorKind::MissingClass, "Bhattacharyya distance needs both classes");
  if (n[0] < 2 || n[1] < 2) throw Error(ErrorKind::InsufficientTrials, "Bhattacharyya distance needs two trials per class");
  const double mu[2] = {sum[0] / n[0], sum[1] / n[1]};
  const double gmu = total / static_cast<double>(count);
  double ss[2] = {0, 0}, gss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const int c = labels[i] == ClassLabel::Wrist ? 0 : 1;
    const double v = x[i * stride];
    ss[c] += (v - mu[c]) * (v - mu[c]);
    gss += (v - gmu) * (v - gmu);
  }
  const double gvar = gss / static_cast<double>(count - 1);
  if (gvar == 0.0) return 0.0;
  const double floor = 1e-12 * (gvar + 1e-30);
  const double v0 = std::max(ss[0] / (n[0] - 1), floor);
  const double v1 = std::max(ss[1] / (n[1] - 1), floor);
  return bhattacharyya_gaussian(mu[0], v0, mu[1], v1);
}

void check_matrix(const FeatureMatrix& m) {
  if (m.labels.size() != m.trials()) throw Error(ErrorKind::DimensionMismatch, "labels and rows differ in count");
}

} // namespace

double bhattacharyya(const std::vector<double>& column, const std::vector<ClassLabel>& labels) {
  if (column.size() != labels.size()) throw Error(ErrorKind::DimensionMismatch, "values and labels differ in length");
  return bd_column(column.data(), 1, labels);
}

std::vector<double> bd_scores(const FeatureMatrix& m) {
  check_matrix(m);
  const auto f = static_cast<std::ptrdiff_t>(m.features());
  std::vector<double> out(m.features());
  if (f > 0) bd_column(m.values.data(), m.features(), m.labels); // surfaces class errors before the parallel loop
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < f; ++j) {
    out[static_cast<std::size_t>(j)] = bd_column(m.values.data() + j, m.features(), m.labels);
  }
  return out;
}

namespace reference {

std::vector<double> bd_scores(const FeatureMatrix& m) {
  check_matrix(m);
  std::vector<double> out;
  for (std::size_t j = 0; j < m.features(); ++j) {
    std::vector<double> col(m.trials());
    for (std::size_t i = 0; i < m.trials(); ++i) col[i] = m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out.push_back(bhattacharyya(col, m.labels));
  }
  return out;
}

} // namespace reference

SelectionResult select_top_k(const std::vector<double>& scores, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw Error(ErrorKind::InvalidArgument, "cannot select " + std::to_string(k) + " of " + std::to_string(scores.size()) + " features");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  SelectionResult r;
  r.selected_columns.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  r.bd_scores = scores;
  return r;
}

SelectionResult select_top_k(const FeatureMatrix& m, std::size_t k) {
  const bool wrist = std::count(m.labels.begin(), m.labels.end(), ClassLabel::Wrist) > 0;
  const bool finger = std::count(m.labels.begin(), m.labels.end(), ClassLabel::Finger) > 0;
  if (!wrist || !finger) throw Error(ErrorKind::MissingClass, "feature selection needs both classes");
  return select_top_k(bd_scores(m), k);
}

FeatureMatrix restrict_columns(const FeatureMatrix& m, const std::vector<std::size_t>& columns) {
  FeatureMatrix out;
  out.values.resize(m.values.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] >= m.features()) throw Error(ErrorKind::InvalidArgument, "column index out of range");
    out.values.col(static_cast<Eigen::Index>(j)) = m.values.col(static_cast<Eigen::Index>(columns[j]));
    if (columns[j] < m.columns.size()) out.columns.push_back(m.columns[columns[j]]);
  }
  out.labels = m.labels;
  out.meta = m.meta;
  return out;
}

} // namespace bcihand
