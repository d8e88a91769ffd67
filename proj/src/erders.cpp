#include "bcihand/erders.hpp"

#include "bcihand/error.hpp"
#include "bcihand/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bcihand {

std::vector<double> intertrial_variance_power(const RowMatrix& trials, Band band, double fs, double smooth_ms) {
  const Eigen::Index m = trials.rows();
  const Eigen::Index n = trials.cols();
  if (m < 2) throw Error(ErrorKind::InsufficientTrials, "inter-trial variance needs at least two trials");

  RowMatrix filtered = trials;
  filter_rows_zero_phase(filtered, SosFilter(FilterSpec::bandpass(band.lo_hz, band.hi_hz, fs)));

  std::vector<double> var(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mean = filtered.col(t).mean();
    var[static_cast<std::size_t>(t)] = (filtered.col(t).array() - mean).square().sum() / static_cast<double>(m - 1);
  }

  const auto half = static_cast<std::ptrdiff_t>(ms_to_samples(static_cast<long>(smooth_ms), fs) / 2);
  if (half == 0) return var;
  std::vector<double> prefix(var.size() + 1, 0.0);
  for (std::size_t i = 0; i < var.size(); ++i) prefix[i + 1] = prefix[i] + var[i];
  std::vector<double> out(var.size());
  const auto len = static_cast<std::ptrdiff_t>(var.size());
  for (std::ptrdiff_t t = 0; t < len; ++t) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len - 1, t + half);
    out[static_cast<std::size_t>(t)] = (prefix[static_cast<std::size_t>(hi + 1)] - prefix[static_cast<std::size_t>(lo)]) /
                                       static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<double> erd_percent(const std::vector<double>& power, const std::vector<double>& times_s,
                                TimeWindow reference) {
  if (power.size() != times_s.size()) throw Error(ErrorKind::DimensionMismatch, "power and time axes differ in length");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < power.size(); ++i) {
    if (reference.contains(times_s[i])) {
      sum += power[i];
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::InvalidArgument, "reference window holds no samples");
  const double r = sum / static_cast<double>(count);
  if (r == 0.0) throw Error(ErrorKind::ZeroReference, "reference power is zero");
  std::vector<double> out(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) out[i] = 100.0 * (power[i] - r) / r;
  return out;
}

ComponentScore score_component(const ErdCurve& curve, TimeWindow movement, TimeWindow post) {
  ComponentScore s;
  s.component = curve.component;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < curve.times_s.size(); ++i) {
    const double t = curve.times_s[i];
    if (movement.contains(t)) lo = std::min(lo, curve.values_pct[i]);
    if (post.contains(t)) hi = std::max(hi, curve.values_pct[i]);
  }
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw Error(ErrorKind::InvalidArgument, "scoring windows fall outside the ERD curve");
  }
  s.erd_depth_pct = lo;
  s.ers_height_pct = hi;
  s.score = hi - lo;
  return s;
}

namespace {

ErdCurve curve_for(const std::vector<RowMatrix>& trials, std::size_t component, double fs, double t0,
                   const ErdScoring& scoring) {
  const auto samples = trials.front().cols();
  RowMatrix stack(static_cast<Eigen::Index>(trials.size()), samples);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    stack.row(static_cast<Eigen::Index>(i)) = trials[i].row(static_cast<Eigen::Index>(component));
  }
  ErdCurve c;
  c.component = component;
  c.band = scoring.band;
  c.reference_window = scoring.reference;
  c.times_s = epoch_times(static_cast<std::size_t>(samples), fs, t0);
  c.values_pct = erd_percent(intertrial_variance_power(stack, scoring.band, fs, scoring.smooth_ms), c.times_s,
                             scoring.reference);
  return c;
}

void check_trials(const std::vector<RowMatrix>& trials) {
  if (trials.size() < 2) throw Error(ErrorKind::InsufficientTrials, "ERD curves need at least two trials");
  for (const auto& t : trials) {
    if (t.rows() != trials.front().rows() || t.cols() != trials.front().cols()) {
      throw Error(ErrorKind::DimensionMismatch, "component trials differ in shape");
    }
  }
}

} // namespace

std::vector<ErdCurve> component_erd_curves(const std::vector<RowMatrix>& component_trials, double fs,
                                           double t0_offset_s, const ErdScoring& scoring) {
  check_trials(component_trials);
  const auto k = static_cast<std::ptrdiff_t>(component_trials.front().rows());
  std::vector<ErdCurve> out(static_cast<std::size_t>(k));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < k; ++c) {
    out[static_cast<std::size_t>(c)] = curve_for(component_trials, static_cast<std::size_t>(c), fs, t0_offset_s, scoring);
  }
  return out;
}

namespace reference {

std::vector<ErdCurve> component_erd_curves(const std::vector<RowMatrix>& component_trials, double fs,
                                           double t0_offset_s, const ErdScoring& scoring) {
  check_trials(component_trials);
  std::vector<ErdCurve> out;
  for (Eigen::Index c = 0; c < component_trials.front().rows(); ++c) {
    out.push_back(curve_for(component_trials, static_cast<std::size_t>(c), fs, t0_offset_s, scoring));
  }
  return out;
}

} // namespace reference

ComponentSelection select_components(const std::vector<ComponentScore>& scores, double threshold, int k_min,
                                     int k_max) {
  if (k_min < 1 || k_min > k_max) throw Error(ErrorKind::InvalidArgument, "need 1 <= k_min <= k_max");
  if (scores.size() < static_cast<std::size_t>(k_min)) {
    throw Error(ErrorKind::TooFewComponents, std::to_string(scores.size()) + " components available, k_min is " +
                                                 std::to_string(k_min));
  }
  ComponentSelection sel;
  sel.ranked = scores;
  std::stable_sort(sel.ranked.begin(), sel.ranked.end(), [](const ComponentScore& a, const ComponentScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.component < b.component;
  });
  const auto above = static_cast<int>(std::count_if(scores.begin(), scores.end(),
                                                    [&](const ComponentScore& s) { return s.score > threshold; }));
  const int k = std::min(std::clamp(above, k_min, k_max), static_cast<int>(scores.size()));
  for (int i = 0; i < k; ++i) sel.selected.push_back(sel.ranked[static_cast<std::size_t>(i)].component);
  return sel;
}

ComponentSelection select_components(const std::vector<ErdCurve>& curves, const ErdScoring& scoring) {
  const bool disjoint = scoring.movement.end_s <= scoring.post.start_s || scoring.post.end_s <= scoring.movement.start_s;
  if (!disjoint) throw Error(ErrorKind::InvalidArgument, "movement and post windows overlap");
  std::vector<ComponentScore> scores;
  scores.reserve(curves.size());
  for (const auto& c : curves) scores.push_back(score_component(c, scoring.movement, scoring.post));
  return select_components(scores, scoring.score_threshold, scoring.k_min, scoring.k_max);
}

} // namespace bcihand
