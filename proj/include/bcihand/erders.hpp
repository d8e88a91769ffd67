#pragma once

#include "bcihand/types.hpp"

#include <cstddef>
#include <vector>

namespace bcihand {

struct Band {
  double lo_hz = 8.0;
  double hi_hz = 30.0;
  bool operator==(const Band&) const = default;
};

// Closed interval [start_s, end_s] in seconds relative to the Get Ready event.
struct TimeWindow {
  double start_s = 0.0;
  double end_s = 0.0;
  bool contains(double t) const noexcept { return t >= start_s && t <= end_s; }
  bool operator==(const TimeWindow&) const = default;
};

// Inter-trial variance power of one component.
//
// `trials` holds one trial per row. Each row is band-filtered (zero-phase
// Butterworth, prototype order 4), the unbiased variance across trials is
// taken at every sample, and the result is smoothed by a centred moving
// average of half-width round(smooth_ms * fs / 1000) / 2 samples (the window
// shrinks at the edges). Output length equals the trial length.
// Throws InsufficientTrials for fewer than two trials.
std::vector<double> intertrial_variance_power(const RowMatrix& trials, Band band, double fs, double smooth_ms);

// value(t) = 100 (power(t) - R) / R with R the mean power over samples whose
// time lies in the reference window. Throws ZeroReference when R == 0 and
// InvalidArgument when the window holds no samples.
std::vector<double> erd_percent(const std::vector<double>& power, const std::vector<double>& times_s,
                                TimeWindow reference);

struct ErdCurve {
  std::size_t component = 0;
  Band band;
  std::vector<double> times_s;
  std::vector<double> values_pct;
  TimeWindow reference_window;
};

struct ComponentScore {
  std::size_t component = 0;
  double erd_depth_pct = 0.0;  // min ERD% over the movement window
  double ers_height_pct = 0.0; // max ERD% over the post-movement window
  double score = 0.0;          // ers_height_pct - erd_depth_pct
};

ComponentScore score_component(const ErdCurve& curve, TimeWindow movement, TimeWindow post);

struct ErdScoring {
  Band band{8.0, 30.0};
  double smooth_ms = 200.0;
  TimeWindow reference{-1.0, 0.0};
  TimeWindow movement{1.0, 4.0};
  TimeWindow post{4.0, 5.5};
  double score_threshold = 20.0;
  int k_min = 8;
  int k_max = 12;
};

// ERD curves of every component across a set of trials; `component_trials`
// holds one components x samples matrix per trial. Parallel across components.
std::vector<ErdCurve> component_erd_curves(const std::vector<RowMatrix>& component_trials, double fs,
                                           double t0_offset_s, const ErdScoring& scoring);

namespace reference {
std::vector<ErdCurve> component_erd_curves(const std::vector<RowMatrix>& component_trials, double fs,
                                           double t0_offset_s, const ErdScoring& scoring);
}

struct ComponentSelection {
  std::vector<ComponentScore> ranked; // all components, best first
  std::vector<std::size_t> selected;  // component indices, best first
};

// Ranks by score (descending, ties by ascending component index) and keeps
// k = clamp(#{score > threshold}, k_min, k_max) components. Throws
// TooFewComponents when fewer than k_min components exist, InvalidArgument when
// k_min > k_max or the movement and post windows overlap.
ComponentSelection select_components(const std::vector<ErdCurve>& curves, const ErdScoring& scoring);
ComponentSelection select_components(const std::vector<ComponentScore>& scores, double threshold, int k_min,
                                     int k_max);

} // namespace bcihand
