#pragma once

#include "bcihand/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bcihand {

// On-disk dataset layout:
//
//   dataset.json   {"format": "bci-hand-dataset", "version": 1, "fs": 200,
//                   "channels": [...], "subjects": [...],
//                   "samples": 1400,
//                   "trials": [{"subject", "hand", "condition", "movement",
//                               "trial_index", "file", "t0_offset_s"}, ...]}
//   <file>         little-endian float32, channel-major, one row of
//                  `samples` values per channel
//
// Files are referenced relative to the directory holding dataset.json.
struct Dataset {
  double fs = 200.0;
  std::vector<std::string> channels;
  std::vector<std::string> subjects;
  std::vector<TrialEpoch> epochs;
};

std::string trial_file_name(const TrialMeta& meta);

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

// Raw float32 matrix helpers (little-endian, row-major).
void write_f32(const std::filesystem::path& path, const RowMatrix& m);
void write_f32(std::ostream& out, const RowMatrix& m);
RowMatrix read_f32(const std::filesystem::path& path, std::size_t rows, std::size_t cols);
RowMatrix read_f32(std::istream& in, std::size_t rows, std::size_t cols);

} // namespace bcihand
