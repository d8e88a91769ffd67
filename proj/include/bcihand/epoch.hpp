#pragma once

#include "bcihand/error.hpp"
#include "bcihand/filter.hpp"
#include "bcihand/types.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace bcihand {

// Cuts one 7 s epoch per Get Ready event: samples [e - round(fs), e - round(fs) + round(7 fs)).
// Throws EpochOutOfBounds when an epoch would leave the recording and
// InvalidArgument when events and metas differ in length.
std::vector<TrialEpoch> epoch(const ContinuousRecording& recording,
                              const std::vector<std::size_t>& get_ready_events,
                              const std::vector<TrialMeta>& metas);

enum class RejectReason { AmplitudeSpike, VarianceOutlier };

std::string_view to_string(RejectReason r);

struct Rejection {
  std::size_t epoch_index = 0;
  TrialMeta meta;
  RejectReason reason = RejectReason::AmplitudeSpike;
  std::size_t channel = 0;
  double value = 0.0; // offending |amplitude| (uV) or variance ratio
};

struct RejectionReport {
  double amp_limit_uv = 0.0;
  double var_ratio_limit = 0.0;
  std::size_t total = 0;
  std::vector<Rejection> rejected;
};

struct RejectionResult {
  std::vector<TrialEpoch> kept;
  RejectionReport report;
};

class AllTrialsRejectedError : public Error {
 public:
  explicit AllTrialsRejectedError(RejectionReport report);
  const RejectionReport& report() const noexcept { return report_; }

 private:
  RejectionReport report_;
};

// An epoch is rejected iff some channel has |x| > amp_limit_uv at any sample,
// or some channel's variance exceeds var_ratio_limit x the median channel
// variance of that epoch. The amplitude test is checked first and reported
// when both fire.
RejectionResult reject_bad_trials(const std::vector<TrialEpoch>& epochs, double amp_limit_uv = 100.0,
                                  double var_ratio_limit = 25.0);

// Applies `filter` to every channel of every epoch (parallel across epochs).
void filter_epochs(std::vector<TrialEpoch>& epochs, const SosFilter& filter);

namespace reference {
void filter_epochs(std::vector<TrialEpoch>& epochs, const SosFilter& filter);
}

} // namespace bcihand
