#include "bcihand/epoch.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <string>

namespace bcihand {

std::vector<TrialEpoch> epoch(const ContinuousRecording& recording,
                              const std::vector<std::size_t>& get_ready_events,
                              const std::vector<TrialMeta>& metas) {
  if (get_ready_events.size() != metas.size()) {
    throw Error(ErrorKind::InvalidArgument, "event count " + std::to_string(get_ready_events.size()) +
                                                " does not match meta count " +
                                                std::to_string(metas.size()));
  }
  const std::size_t pre = seconds_to_samples(kEpochPreS, recording.fs);
  const std::size_t len = seconds_to_samples(kEpochDurationS, recording.fs);

  std::vector<TrialEpoch> out;
  out.reserve(metas.size());
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const std::size_t e = get_ready_events[i];
    if (e < pre || e - pre + len > recording.samples()) {
      throw Error(ErrorKind::EpochOutOfBounds,
                  "event at sample " + std::to_string(e) + " needs [" +
                      std::to_string(static_cast<long long>(e) - static_cast<long long>(pre)) + ", " +
                      std::to_string(e - pre + len) + ") inside a recording of " +
                      std::to_string(recording.samples()) + " samples");
    }
    TrialEpoch ep;
    ep.meta = metas[i];
    ep.fs = recording.fs;
    ep.t0_offset_s = kEpochPreS;
    ep.data = recording.data.middleCols(static_cast<Eigen::Index>(e - pre), static_cast<Eigen::Index>(len));
    out.push_back(std::move(ep));
  }
  return out;
}

std::string_view to_string(RejectReason r) {
  return r == RejectReason::AmplitudeSpike ? "AmplitudeSpike" : "VarianceOutlier";
}

AllTrialsRejectedError::AllTrialsRejectedError(RejectionReport report)
    : Error(ErrorKind::AllTrialsRejected,
            "all " + std::to_string(report.total) + " trials rejected"),
      report_(std::move(report)) {}

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

RejectionResult reject_bad_trials(const std::vector<TrialEpoch>& epochs, double amp_limit_uv,
                                  double var_ratio_limit) {
  if (epochs.empty()) throw Error(ErrorKind::InvalidArgument, "no epochs to screen");
  const double amp_limit = std::abs(amp_limit_uv);

  RejectionResult result;
  result.report.amp_limit_uv = amp_limit_uv;
  result.report.var_ratio_limit = var_ratio_limit;
  result.report.total = epochs.size();

  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const RowMatrix& x = epochs[i].data;
    bool rejected = false;

    for (Eigen::Index c = 0; c < x.rows() && !rejected; ++c) {
      Eigen::Index where = 0;
      const double peak = x.row(c).cwiseAbs().maxCoeff(&where);
      if (peak > amp_limit) {
        result.report.rejected.push_back(
            {i, epochs[i].meta, RejectReason::AmplitudeSpike, static_cast<std::size_t>(c), peak});
        rejected = true;
      }
    }

    if (!rejected && x.rows() > 0 && x.cols() > 0) {
      std::vector<double> var(static_cast<std::size_t>(x.rows()));
      for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const double mean = x.row(c).mean();
        var[static_cast<std::size_t>(c)] = (x.row(c).array() - mean).square().mean();
      }
      const double med = median(var);
      for (std::size_t c = 0; c < var.size(); ++c) {
        if (var[c] > var_ratio_limit * med) {
          const double ratio = med > 0.0 ? var[c] / med : std::numeric_limits<double>::infinity();
          result.report.rejected.push_back({i, epochs[i].meta, RejectReason::VarianceOutlier, c, ratio});
          rejected = true;
          break;
        }
      }
    }

    if (!rejected) result.kept.push_back(epochs[i]);
  }

  if (result.kept.empty()) throw AllTrialsRejectedError(std::move(result.report));
  return result;
}

void filter_epochs(std::vector<TrialEpoch>& epochs, const SosFilter& filter) {
  const auto n = static_cast<std::ptrdiff_t>(epochs.size());
  for (const auto& e : epochs) {
    if (e.samples() < filter.min_length()) {
      throw Error(ErrorKind::SignalTooShort, "epoch too short for zero-phase filtering");
    }
  }
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    RowMatrix& x = epochs[static_cast<std::size_t>(i)].data;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      std::span<const double> row(x.row(r).data(), static_cast<std::size_t>(x.cols()));
      const std::vector<double> y = apply_filter_zero_phase(row, filter);
      std::copy(y.begin(), y.end(), x.row(r).data());
    }
  }
}

namespace reference {

void filter_epochs(std::vector<TrialEpoch>& epochs, const SosFilter& filter) {
  for (auto& e : epochs) bcihand::reference::filter_rows_zero_phase(e.data, filter);
}

} // namespace reference
} // namespace bcihand
