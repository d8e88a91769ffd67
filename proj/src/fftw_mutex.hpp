#pragma once

#include <mutex>

namespace bcihand::detail {
// fftw's planner is not re-entrant; plan execution with the new-array interface is.
std::mutex& fftw_planner_mutex();
}
