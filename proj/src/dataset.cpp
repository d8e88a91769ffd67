#include "bcihand/dataset.hpp"

#include "bcihand/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace bcihand {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

} // namespace

std::string trial_file_name(const TrialMeta& meta) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03d", meta.trial_index);
  return meta.subject + "/" + std::string(to_string(meta.hand)) + "_" + std::string(to_string(meta.condition)) +
         "_" + std::string(to_string(meta.movement)) + "_" + idx + ".f32";
}

void write_f32(std::ostream& out, const RowMatrix& m) {
  std::vector<std::uint32_t> buf(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      buf[static_cast<std::size_t>(c)] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing float32 matrix");
}

void write_f32(const fs::path& path, const RowMatrix& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_f32(out, m);
}

RowMatrix read_f32(std::istream& in, std::size_t rows, std::size_t cols) {
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::vector<std::uint32_t> buf(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(cols * 4));
    if (!in) throw Error(ErrorKind::Io, "truncated float32 matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::bit_cast<float>(to_little(buf[c]));
    }
  }
  return m;
}

RowMatrix read_f32(const fs::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  const auto expected = static_cast<std::uintmax_t>(rows * cols * 4);
  if (fs::file_size(path) != expected) {
    throw Error(ErrorKind::Io, path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                                   std::to_string(fs::file_size(path)));
  }
  return read_f32(in, rows, cols);
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  json j;
  j["format"] = "bci-hand-dataset";
  j["version"] = 1;
  j["fs"] = dataset.fs;
  j["channels"] = dataset.channels;
  j["subjects"] = dataset.subjects;
  j["samples"] = dataset.epochs.empty() ? 0 : dataset.epochs.front().samples();
  json trials = json::array();
  std::set<std::string> seen;
  for (const auto& ep : dataset.epochs) {
    if (ep.channels() != dataset.channels.size()) {
      throw Error(ErrorKind::DimensionMismatch, "epoch channel count differs from dataset channel list");
    }
    if (ep.samples() != j["samples"].get<std::size_t>()) {
      throw Error(ErrorKind::DimensionMismatch, "epochs must share one sample count");
    }
    const std::string file = trial_file_name(ep.meta);
    if (!seen.insert(file).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate trial identity " + file);
    }
    write_f32(dir / file, ep.data);
    trials.push_back({{"subject", ep.meta.subject},
                      {"hand", to_string(ep.meta.hand)},
                      {"condition", to_string(ep.meta.condition)},
                      {"movement", to_string(ep.meta.movement)},
                      {"trial_index", ep.meta.trial_index},
                      {"file", file},
                      {"t0_offset_s", ep.t0_offset_s}});
  }
  j["trials"] = std::move(trials);
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "dataset.json").string());
  out << j.dump(1) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path index = dir / "dataset.json";
  std::ifstream in(index);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + index.string());
  json j;
  try {
    in >> j;
    Dataset ds;
    ds.fs = j.at("fs").get<double>();
    ds.channels = j.at("channels").get<std::vector<std::string>>();
    ds.subjects = j.at("subjects").get<std::vector<std::string>>();
    const auto samples = j.at("samples").get<std::size_t>();
    for (const auto& t : j.at("trials")) {
      TrialEpoch ep;
      ep.meta.subject = t.at("subject").get<std::string>();
      ep.meta.hand = parse_hand(t.at("hand").get<std::string>());
      ep.meta.condition = parse_condition(t.at("condition").get<std::string>());
      ep.meta.movement = parse_movement(t.at("movement").get<std::string>());
      ep.meta.trial_index = t.at("trial_index").get<int>();
      ep.fs = ds.fs;
      ep.t0_offset_s = t.at("t0_offset_s").get<double>();
      ep.data = read_f32(dir / t.at("file").get<std::string>(), ds.channels.size(), samples);
      ds.epochs.push_back(std::move(ep));
    }
    return ds;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, index.string() + ": " + e.what());
  }
}

} // namespace bcihand
