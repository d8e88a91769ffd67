#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace bcihand {

// Channel-major sample storage: one row per channel (or component), rows
// contiguous in memory so that per-channel kernels stream.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Movement { WE, WF, FE, FF, TR };
enum class ClassLabel { Wrist, Finger };
enum class Hand { Left, Right };
enum class Condition { Real, Imagined };

inline constexpr Movement kAllMovements[] = {Movement::WE, Movement::WF, Movement::FE,
                                             Movement::FF, Movement::TR};

// Wrist <=> {WE, WF}; Finger <=> {FE, FF, TR}.
constexpr ClassLabel class_of(Movement m) noexcept {
  switch (m) {
    case Movement::WE:
    case Movement::WF:
      return ClassLabel::Wrist;
    case Movement::FE:
    case Movement::FF:
    case Movement::TR:
      return ClassLabel::Finger;
  }
  return ClassLabel::Finger;
}

std::string_view to_string(Movement m);
std::string_view to_string(ClassLabel c);
std::string_view to_string(Hand h);
std::string_view to_string(Condition c);
// "RH" / "LH"
std::string_view short_name(Hand h);

// Parsers throw Error(InvalidArgument) on unknown text.
Movement parse_movement(std::string_view s);
Hand parse_hand(std::string_view s);
Condition parse_condition(std::string_view s);

struct TrialMeta {
  std::string subject;
  Hand hand = Hand::Right;
  Condition condition = Condition::Real;
  Movement movement = Movement::WE;
  int trial_index = 0;

  ClassLabel label() const noexcept { return class_of(movement); }
  bool operator==(const TrialMeta&) const = default;
};

struct Event {
  std::size_t sample = 0;
  std::string tag;
};

struct ContinuousRecording {
  double fs = 200.0;
  std::vector<std::string> channel_names;
  RowMatrix data; // channels x samples, microvolts
  std::vector<Event> events;

  std::size_t channels() const noexcept { return static_cast<std::size_t>(data.rows()); }
  std::size_t samples() const noexcept { return static_cast<std::size_t>(data.cols()); }
};

// Throws InvalidArgument if fs <= 0 or events are not strictly increasing and
// in range.
void validate(const ContinuousRecording& rec);

inline constexpr double kEpochPreS = 1.0;      // Get Ready sits 1 s into the epoch
inline constexpr double kEpochDurationS = 7.0; // t = -1 s ... 6 s

// round half up, used for every seconds/milliseconds -> samples conversion
std::size_t seconds_to_samples(double seconds, double fs);
std::size_t ms_to_samples(long ms, double fs);

struct TrialEpoch {
  TrialMeta meta;
  double fs = 200.0;
  double t0_offset_s = kEpochPreS;
  RowMatrix data; // channels x round(7 fs)

  std::size_t channels() const noexcept { return static_cast<std::size_t>(data.rows()); }
  std::size_t samples() const noexcept { return static_cast<std::size_t>(data.cols()); }
  // time in seconds relative to the Get Ready event
  double time_of(std::size_t sample) const noexcept {
    return static_cast<double>(sample) / fs - t0_offset_s;
  }
};

std::vector<double> epoch_times(std::size_t samples, double fs, double t0_offset_s = kEpochPreS);

} // namespace bcihand
