#pragma once

#include "bcihand/erders.hpp"
#include "bcihand/types.hpp"

#include <cstddef>
#include <memory>
#include <vector>

namespace bcihand {

// Window geometry is kept in integer milliseconds so that the window count is
// exact: floor((t_end - t_start - window) / step) + 1.
struct FeatureGrid {
  long t_start_ms = 1000;
  long t_end_ms = 4000;
  long window_ms = 300;
  long step_ms = 100;
  std::vector<Band> bands = default_bands();
  std::size_t nfft = 256; // zero-padded FFT length

  static std::vector<Band> default_bands(); // [8,11), [11,14), ..., [26,29)
  std::size_t window_count() const;
  std::size_t features_per_component() const { return window_count() * bands.size(); }
};

// Throws InvalidArgument for non-positive sizes, overlapping or unordered bands.
void validate(const FeatureGrid& grid);

struct SampleWindow {
  std::size_t start = 0; // epoch sample index, inclusive
  std::size_t end = 0;   // exclusive
  double t_start_s = 0.0;
  double t_end_s = 0.0;
};

// Window i covers t in [t_start + i*step, t_start + i*step + window) relative
// to the Get Ready event; sample bounds round half up.
std::vector<SampleWindow> sliding_windows(const FeatureGrid& grid, double fs, double t0_offset_s = kEpochPreS);

// Band power of one window: remove the mean, apply a symmetric Hann taper,
// zero-pad to nfft, FFT, and sum |X_k|^2 over the one-sided bins whose centre
// frequency k fs / nfft lies in [lo, hi). Reusable across threads.
//
// Parseval bound: the sum over all bands never exceeds (nfft / 2) * sum(d^2),
// d being the demeaned window.
class BandPowerExtractor {
 public:
  BandPowerExtractor(std::size_t window_samples, double fs, std::vector<Band> bands, std::size_t nfft = 256);
  ~BandPowerExtractor();
  BandPowerExtractor(const BandPowerExtractor&) = delete;
  BandPowerExtractor& operator=(const BandPowerExtractor&) = delete;

  std::size_t window_samples() const noexcept { return n_; }
  std::size_t nfft() const noexcept { return nfft_; }
  std::size_t band_count() const noexcept { return bands_.size(); }
  const std::vector<double>& taper() const noexcept { return taper_; }
  // [first, last) bin range of band b
  std::pair<std::size_t, std::size_t> bins(std::size_t band) const { return bins_[band]; }

  // Writes bands.size() powers to `out`.
  void compute(const double* window, double* out) const;

 private:
  struct Plan;
  std::size_t n_;
  std::size_t nfft_;
  double fs_;
  std::vector<Band> bands_;
  std::vector<double> taper_;
  std::vector<std::pair<std::size_t, std::size_t>> bins_;
  std::unique_ptr<Plan> plan_;
};

// Features of one trial: for each selected component, window and band, in
// that lexicographic order. Throws WindowOutOfBounds when the grid leaves the
// trial and InvalidArgument for an empty or out-of-range selection.
std::vector<double> band_power_features(const RowMatrix& component_trial, const std::vector<std::size_t>& selected,
                                        const FeatureGrid& grid, double fs, double t0_offset_s = kEpochPreS);

struct FeatureColumn {
  std::size_t component = 0;
  std::size_t window = 0;
  std::size_t band = 0;
};

struct FeatureMatrix {
  RowMatrix values; // trials x features
  std::vector<FeatureColumn> columns;
  std::vector<ClassLabel> labels;
  std::vector<TrialMeta> meta;

  std::size_t trials() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t features() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

std::vector<FeatureColumn> feature_columns(const std::vector<std::size_t>& selected, const FeatureGrid& grid);

// Parallel across trials.
FeatureMatrix extract_feature_matrix(const std::vector<RowMatrix>& component_trials, const std::vector<TrialMeta>& meta,
                                     const std::vector<std::size_t>& selected, const FeatureGrid& grid, double fs,
                                     double t0_offset_s = kEpochPreS);

namespace reference {
FeatureMatrix extract_feature_matrix(const std::vector<RowMatrix>& component_trials, const std::vector<TrialMeta>& meta,
                                     const std::vector<std::size_t>& selected, const FeatureGrid& grid, double fs,
                                     double t0_offset_s = kEpochPreS);
}

// x -> ln(max(x, 1e-30)), element-wise.
void log_transform(FeatureMatrix& m);

// Univariate Gaussian Bhattacharyya distance
//   (1/4) (mu1 - mu2)^2 / (v1 + v2) + (1/2) ln((v1 + v2) / (2 sqrt(v1 v2)))
double bhattacharyya_gaussian(double mu1, double var1, double mu2, double var2);

// From the class-conditional sample mean and unbiased variance of `column`.
// A zero class variance is floored at 1e-12 (global variance + 1e-30); a
// column constant over both classes scores 0. Throws MissingClass when a class
// is absent and InsufficientTrials when a class has fewer than two trials.
double bhattacharyya(const std::vector<double>& column, const std::vector<ClassLabel>& labels);

// One score per column, parallel across columns.
std::vector<double> bd_scores(const FeatureMatrix& m);

namespace reference {
std::vector<double> bd_scores(const FeatureMatrix& m);
}

struct SelectionResult {
  std::vector<std::size_t> selected_columns; // best first
  std::vector<double> bd_scores;             // every column
};

// k columns with the largest BD, ties by ascending column index.
SelectionResult select_top_k(const FeatureMatrix& m, std::size_t k = 18);
SelectionResult select_top_k(const std::vector<double>& scores, std::size_t k);

FeatureMatrix restrict_columns(const FeatureMatrix& m, const std::vector<std::size_t>& columns);

} // namespace bcihand
