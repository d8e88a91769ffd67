#include "bcihand/filter.hpp"

#include "bcihand/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bcihand {
namespace {

using cplx = std::complex<double>;

cplx bilinear(cplx s) { return (1.0 + s) / (1.0 - s); }

// Left-half-plane poles of the normalised analog Butterworth lowpass.
std::vector<cplx> butterworth_poles(int n) {
  std::vector<cplx> poles;
  poles.reserve(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + n - 1.0) / (2.0 * n);
    poles.push_back(std::polar(1.0, theta));
  }
  return poles;
}

// Groups digital poles into conjugate pairs (or pairs of reals) and returns
// the denominators of the corresponding sections. An unpaired real pole gives
// a first-order section (a2 = 0).
std::vector<Biquad> pair_poles(const std::vector<cplx>& poles) {
  constexpr double kImagTol = 1e-12;
  std::vector<Biquad> out;
  std::vector<double> reals;
  for (const cplx& p : poles) {
    if (p.imag() > kImagTol) {
      Biquad b;
      b.a1 = -2.0 * p.real();
      b.a2 = std::norm(p);
      out.push_back(b);
    } else if (std::abs(p.imag()) <= kImagTol) {
      reals.push_back(p.real());
    }
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    Biquad b;
    b.a1 = -(reals[i] + reals[i + 1]);
    b.a2 = reals[i] * reals[i + 1];
    out.push_back(b);
  }
  if (reals.size() % 2 == 1) {
    Biquad b;
    b.a1 = -reals.back();
    b.a2 = 0.0;
    out.push_back(b);
  }
  return out;
}

cplx section_response(const Biquad& s, double omega) {
  const cplx z1 = std::polar(1.0, -omega);
  const cplx z2 = z1 * z1;
  return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

cplx cascade_response(const std::vector<Biquad>& sections, double omega) {
  cplx h = 1.0;
  for (const auto& s : sections) h *= section_response(s, omega);
  return h;
}

void normalise_gain(std::vector<Biquad>& sections, double omega_ref) {
  const double mag = std::abs(cascade_response(sections, omega_ref));
  const double per_section = std::pow(1.0 / mag, 1.0 / static_cast<double>(sections.size()));
  for (auto& s : sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
}

std::vector<Biquad> design_bandpass(const FilterSpec& spec, int& order) {
  const double w1 = std::tan(std::numbers::pi * spec.lo_hz / spec.fs);
  const double w2 = std::tan(std::numbers::pi * spec.hi_hz / spec.fs);
  const double w0sq = w1 * w2;
  const double bw = w2 - w1;

  std::vector<cplx> digital;
  for (const cplx& p : butterworth_poles(spec.order)) {
    const cplx pb = p * bw;
    const cplx root = std::sqrt(pb * pb - 4.0 * w0sq);
    digital.push_back(bilinear(0.5 * (pb + root)));
    digital.push_back(bilinear(0.5 * (pb - root)));
  }
  std::vector<Biquad> sections = pair_poles(digital);
  // N zeros at z = +1 and N at z = -1: one (1 - z^-2) factor per section.
  for (auto& s : sections) {
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
  }
  order = 2 * spec.order;
  normalise_gain(sections, 2.0 * std::atan(std::sqrt(w0sq)));
  return sections;
}

std::vector<Biquad> design_highpass(const FilterSpec& spec, int& order) {
  const double wc = std::tan(std::numbers::pi * spec.lo_hz / spec.fs);
  std::vector<cplx> digital;
  for (const cplx& p : butterworth_poles(spec.order)) digital.push_back(bilinear(wc / p));
  std::vector<Biquad> sections = pair_poles(digital);
  for (auto& s : sections) {
    if (s.a2 == 0.0) {
      s.b0 = 1.0;
      s.b1 = -1.0;
      s.b2 = 0.0;
    } else {
      s.b0 = 1.0;
      s.b1 = -2.0;
      s.b2 = 1.0;
    }
  }
  order = spec.order;
  normalise_gain(sections, std::numbers::pi);
  return sections;
}

std::vector<Biquad> design_notch(const FilterSpec& spec, int& order) {
  const double w0 = 2.0 * std::numbers::pi * spec.center_hz / spec.fs;
  const double alpha = std::sin(w0) / (2.0 * spec.q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  order = 2;
  return {s};
}

// Direct-form-II-transposed steady state for constant input u.
void steady_state(const Biquad& s, double u, double& z1, double& z2) {
  const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double y = gain * u;
  z2 = s.b2 * u - s.a2 * y;
  z1 = y - s.b0 * u;
}

void run_pass(const std::vector<Biquad>& sections, double* x, std::size_t n) {
  if (n == 0) return;
  double u = x[0];
  for (const Biquad& s : sections) {
    double z1 = 0.0, z2 = 0.0;
    steady_state(s, u, z1, z2);
    u *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    for (std::size_t i = 0; i < n; ++i) {
      const double in = x[i];
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      x[i] = y;
    }
  }
}

void zero_phase_into(const SosFilter& filter, const double* in, std::size_t n, double* out,
                     std::vector<double>& ext) {
  const std::size_t pad = filter.pad_length();
  if (n < filter.min_length()) {
    throw Error(ErrorKind::SignalTooShort, "signal of " + std::to_string(n) +
                                               " samples; zero-phase filter needs at least " +
                                               std::to_string(filter.min_length()));
  }
  ext.resize(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * in[0] - in[pad - i];
  std::copy(in, in + n, ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * in[n - 1] - in[n - 2 - i];

  run_pass(filter.sections(), ext.data(), ext.size());
  std::reverse(ext.begin(), ext.end());
  run_pass(filter.sections(), ext.data(), ext.size());
  std::reverse(ext.begin(), ext.end());
  std::copy(ext.begin() + static_cast<std::ptrdiff_t>(pad),
            ext.begin() + static_cast<std::ptrdiff_t>(pad + n), out);
}

} // namespace

FilterSpec FilterSpec::bandpass(double lo, double hi, double fs, int order) {
  FilterSpec s;
  s.kind = FilterKind::Bandpass;
  s.lo_hz = lo;
  s.hi_hz = hi;
  s.fs = fs;
  s.order = order;
  return s;
}

FilterSpec FilterSpec::highpass(double lo, double fs, int order) {
  FilterSpec s;
  s.kind = FilterKind::Highpass;
  s.lo_hz = lo;
  s.fs = fs;
  s.order = order;
  return s;
}

FilterSpec FilterSpec::notch(double center, double fs, double q) {
  FilterSpec s;
  s.kind = FilterKind::Notch;
  s.center_hz = center;
  s.fs = fs;
  s.q = q;
  return s;
}

void validate(const FilterSpec& spec) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidFilterSpec, msg); };
  if (!(spec.fs > 0.0) || !std::isfinite(spec.fs)) fail("sample rate must be positive");
  const double nyquist = spec.fs / 2.0;
  switch (spec.kind) {
    case FilterKind::Bandpass:
      if (!(spec.lo_hz > 0.0 && spec.lo_hz < spec.hi_hz && spec.hi_hz < nyquist)) {
        fail("bandpass needs 0 < lo < hi < fs/2 (got " + std::to_string(spec.lo_hz) + ", " +
             std::to_string(spec.hi_hz) + " at fs " + std::to_string(spec.fs) + ")");
      }
      break;
    case FilterKind::Highpass:
      if (!(spec.lo_hz > 0.0 && spec.lo_hz < nyquist)) fail("highpass needs 0 < lo < fs/2");
      break;
    case FilterKind::Notch:
      if (!(spec.center_hz > 0.0 && spec.center_hz < nyquist)) fail("notch needs 0 < center < fs/2");
      if (!(spec.q > 0.0)) fail("notch quality factor must be positive");
      return;
  }
  if (spec.order < 1 || spec.order > 16) fail("prototype order must be in [1, 16]");
}

SosFilter::SosFilter(const FilterSpec& spec) : spec_(spec) {
  validate(spec);
  switch (spec.kind) {
    case FilterKind::Bandpass: sections_ = design_bandpass(spec, order_); break;
    case FilterKind::Highpass: sections_ = design_highpass(spec, order_); break;
    case FilterKind::Notch: sections_ = design_notch(spec, order_); break;
  }
}

std::complex<double> SosFilter::response(double hz) const {
  return cascade_response(sections_, 2.0 * std::numbers::pi * hz / spec_.fs);
}

void SosFilter::filter_in_place(std::span<double> x) const { run_pass(sections_, x.data(), x.size()); }

std::vector<double> apply_filter_zero_phase(std::span<const double> signal, const SosFilter& filter) {
  std::vector<double> out(signal.size());
  std::vector<double> ext;
  zero_phase_into(filter, signal.data(), signal.size(), out.data(), ext);
  return out;
}

std::vector<double> apply_filter_zero_phase(std::span<const double> signal, const FilterSpec& spec) {
  return apply_filter_zero_phase(signal, SosFilter(spec));
}

void filter_rows_zero_phase(RowMatrix& data, const SosFilter& filter) {
  const auto rows = static_cast<std::ptrdiff_t>(data.rows());
  const auto n = static_cast<std::size_t>(data.cols());
  if (rows > 0 && n < filter.min_length()) {
    throw Error(ErrorKind::SignalTooShort, "rows too short for zero-phase filtering");
  }
#pragma omp parallel
  {
    std::vector<double> ext;
    std::vector<double> tmp(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      double* row = data.row(r).data();
      zero_phase_into(filter, row, n, tmp.data(), ext);
      std::copy(tmp.begin(), tmp.end(), row);
    }
  }
}

namespace reference {

void filter_rows_zero_phase(RowMatrix& data, const SosFilter& filter) {
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    std::span<const double> row(data.row(r).data(), static_cast<std::size_t>(data.cols()));
    const std::vector<double> y = apply_filter_zero_phase(row, filter);
    std::copy(y.begin(), y.end(), data.row(r).data());
  }
}

} // namespace reference
} // namespace bcihand
