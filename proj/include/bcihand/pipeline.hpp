#pragma once

#include "bcihand/classify.hpp"
#include "bcihand/erders.hpp"
#include "bcihand/error.hpp"
#include "bcihand/features.hpp"
#include "bcihand/ica.hpp"
#include "bcihand/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bcihand {

struct PreprocessConfig {
  double broadband_lo_hz = 0.5;
  double broadband_hi_hz = 100.0; // at or above Nyquist the broadband stage is a highpass
  int filter_order = 4;
  double notch_hz = 50.0;
  double notch_q = 35.0;
  double amp_limit_uv = 100.0;
  double var_ratio_limit = 25.0;
  Band band{8.0, 30.0};
};

struct IcaConfig {
  double retain = 0.999;
  InfomaxParams infomax; // seed is derived, never read from the file
};

struct FeatureConfig {
  FeatureGrid grid;
  std::size_t k = 18;
  bool nested_selection = false;
  bool log_power = false;
};

struct ClassifyConfig {
  double shrinkage = 0.1;
  bool outlier_filter = false;
  double outlier_quantile = 0.999;
  MlpParams mlp; // seed is derived
};

struct PipelineConfig {
  std::string dataset_dir = "dataset";
  std::string output_dir = "out";
  bool run_synth = true;
  std::uint64_t seed = 1;
  SynthConfig synth; // seed is derived
  PreprocessConfig preprocess;
  IcaConfig ica;
  ErdScoring erd;
  FeatureConfig features;
  ClassifyConfig classify;
};

// Every key materialised, in a fixed order.
nlohmann::ordered_json to_json(const PipelineConfig& cfg);

// Strict: unknown keys and type mismatches throw ConfigError naming the JSON
// pointer of the offending key. Missing keys keep their defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

// SHA-256 of the canonical (key-sorted, compact) configuration, with the
// location keys dataset_dir and output_dir left out.
std::string config_hash(const PipelineConfig& cfg);

// First 8 bytes (big-endian) of SHA-256("<seed>:<label>").
std::uint64_t derive_stage_seed(std::uint64_t seed, const std::string& label);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

enum class Stage { Synth, Preprocess, Ica, Select, Features, Classify, Report };
std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

// Process exit status for an error kind: 2 configuration, 3 missing upstream
// artifact, 4 numerical failure, 5 empty report input, 1 anything else.
int exit_code(ErrorKind kind);

// One (subject, hand, condition) group of trials.
struct Cell {
  std::string subject;
  Hand hand = Hand::Right;
  Condition condition = Condition::Real;

  std::string id() const; // e.g. S01_RH_Real
  bool operator==(const Cell&) const = default;
};

struct StagePaths {
  std::filesystem::path dataset, preprocess, ica, select, features, classify, report;
  explicit StagePaths(const PipelineConfig& cfg);
};

// Runs one stage, reading upstream artifacts from disk only. Throws Error;
// a missing upstream artifact is MissingDependency naming the stage.
void run_stage(Stage stage, const PipelineConfig& cfg);
// synth (if run_synth) through report.
void run_all(const PipelineConfig& cfg);

// Both classifiers on one cell's full feature matrix. With nested selection
// the top-k columns are re-chosen inside every LOO fold and on the ANN
// training split; otherwise `columns` (chosen on all trials) is used.
struct CellResult {
  LooResult md;
  MlpResult ann;
  std::uint64_t ann_seed = 0;
  std::size_t outliers_dropped = 0;
};
CellResult classify_cell(const FeatureMatrix& full, const std::vector<std::size_t>& columns, const PipelineConfig& cfg,
                         std::uint64_t ann_seed);

// features.csv as written by the features stage.
FeatureMatrix load_features(const std::filesystem::path& csv);

// Report table formatting, shared with tests: lround(100 x) followed by " %".
std::string format_percent(double fraction);

} // namespace bcihand
