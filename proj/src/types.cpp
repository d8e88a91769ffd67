#include "bcihand/types.hpp"

#include "bcihand/error.hpp"

#include <cmath>

namespace bcihand {

std::string_view to_string(Movement m) {
  switch (m) {
    case Movement::WE: return "WE";
    case Movement::WF: return "WF";
    case Movement::FE: return "FE";
    case Movement::FF: return "FF";
    case Movement::TR: return "TR";
  }
  return "?";
}

std::string_view to_string(ClassLabel c) { return c == ClassLabel::Wrist ? "Wrist" : "Finger"; }
std::string_view to_string(Hand h) { return h == Hand::Left ? "Left" : "Right"; }
std::string_view to_string(Condition c) { return c == Condition::Real ? "Real" : "Imagined"; }
std::string_view short_name(Hand h) { return h == Hand::Left ? "LH" : "RH"; }

Movement parse_movement(std::string_view s) {
  for (Movement m : kAllMovements) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown movement '" + std::string(s) + "'");
}

Hand parse_hand(std::string_view s) {
  if (s == "Left" || s == "L" || s == "LH") return Hand::Left;
  if (s == "Right" || s == "R" || s == "RH") return Hand::Right;
  throw Error(ErrorKind::InvalidArgument, "unknown hand '" + std::string(s) + "'");
}

Condition parse_condition(std::string_view s) {
  if (s == "Real") return Condition::Real;
  if (s == "Imagined" || s == "Imaginary") return Condition::Imagined;
  throw Error(ErrorKind::InvalidArgument, "unknown condition '" + std::string(s) + "'");
}

void validate(const ContinuousRecording& rec) {
  if (!(rec.fs > 0.0) || !std::isfinite(rec.fs)) {
    throw Error(ErrorKind::InvalidArgument, "sample rate must be positive");
  }
  if (!rec.channel_names.empty() && rec.channel_names.size() != rec.channels()) {
    throw Error(ErrorKind::InvalidArgument, "channel name count does not match data rows");
  }
  for (std::size_t i = 0; i < rec.events.size(); ++i) {
    if (rec.events[i].sample >= rec.samples()) {
      throw Error(ErrorKind::InvalidArgument, "event beyond recording end");
    }
    if (i > 0 && rec.events[i].sample <= rec.events[i - 1].sample) {
      throw Error(ErrorKind::InvalidArgument, "event samples must be strictly increasing");
    }
  }
}

std::size_t seconds_to_samples(double seconds, double fs) {
  return static_cast<std::size_t>(std::floor(seconds * fs + 0.5));
}

std::size_t ms_to_samples(long ms, double fs) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(ms) * fs / 1000.0 + 0.5));
}

std::vector<double> epoch_times(std::size_t samples, double fs, double t0_offset_s) {
  std::vector<double> t(samples);
  for (std::size_t i = 0; i < samples; ++i) t[i] = static_cast<double>(i) / fs - t0_offset_s;
  return t;
}

} // namespace bcihand
