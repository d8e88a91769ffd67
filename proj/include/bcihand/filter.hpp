#pragma once

#include "bcihand/types.hpp"

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace bcihand {

// Highpass is used for the broadband pre-filter when its upper edge reaches
// Nyquist (0.5-100 Hz at 200 Hz sampling leaves nothing to lowpass).
enum class FilterKind { Bandpass, Highpass, Notch };

struct FilterSpec {
  FilterKind kind = FilterKind::Bandpass;
  double lo_hz = 0.0;     // Bandpass, Highpass
  double hi_hz = 0.0;     // Bandpass
  double center_hz = 0.0; // Notch
  int order = 4;          // Butterworth prototype order (Bandpass/Highpass)
  double q = 35.0;        // Notch quality factor
  double fs = 200.0;

  static FilterSpec bandpass(double lo, double hi, double fs, int order = 4);
  static FilterSpec highpass(double lo, double fs, int order = 4);
  static FilterSpec notch(double center, double fs, double q = 35.0);
};

// Throws InvalidFilterSpec unless 0 < lo < hi < fs/2 (bandpass),
// 0 < lo < fs/2 (highpass), 0 < center < fs/2 and q > 0 (notch), order in [1, 16].
void validate(const FilterSpec& spec);

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0; // a0 normalised to 1
};

// Second-order-section realisation of a FilterSpec.
//
// Butterworth designs go through the analog prototype, the lowpass->bandpass
// (or ->highpass) transform, and the bilinear transform with pre-warped edges.
// A bandpass of prototype order N therefore has 2N poles (N sections), the same
// convention as butter(N, [lo, hi], 'bandpass') in the usual DSP toolkits.
// The notch is the standard second-order IIR notch with quality factor q.
class SosFilter {
 public:
  explicit SosFilter(const FilterSpec& spec);

  const FilterSpec& spec() const noexcept { return spec_; }
  const std::vector<Biquad>& sections() const noexcept { return sections_; }

  // Total order of the realised filter (number of poles).
  int order() const noexcept { return order_; }

  // Reflection padding used at each edge by the zero-phase pass: 3 x order.
  std::size_t pad_length() const noexcept { return 3 * static_cast<std::size_t>(order_); }

  // Shortest accepted input: pad_length() + 1 samples. Shorter input throws
  // SignalTooShort.
  std::size_t min_length() const noexcept { return pad_length() + 1; }

  // Single-pass complex response at frequency hz.
  std::complex<double> response(double hz) const;

  // One causal pass, starting from the steady state for a constant input of
  // value x[0] (so constants pass through without a start-up transient).
  void filter_in_place(std::span<double> x) const;

 private:
  FilterSpec spec_;
  std::vector<Biquad> sections_;
  int order_ = 0;
};

// Forward-backward (zero-phase) application with odd reflection padding of
// pad_length() samples at both ends. Output length equals input length.
std::vector<double> apply_filter_zero_phase(std::span<const double> signal, const SosFilter& filter);
std::vector<double> apply_filter_zero_phase(std::span<const double> signal, const FilterSpec& spec);

// Filters every row of `data` in place (rows are independent, run in parallel).
void filter_rows_zero_phase(RowMatrix& data, const SosFilter& filter);

namespace reference {
void filter_rows_zero_phase(RowMatrix& data, const SosFilter& filter);
}

} // namespace bcihand
