#include "bcihand/pipeline.hpp"

#include "bcihand/dataset.hpp"
#include "bcihand/epoch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace bcihand {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "bci-hand 1.0.0";

const char* kStageNames[] = {"synth", "preprocess", "ica", "select", "features", "classify", "report"};

fs::path stage_dir(const PipelineConfig& cfg, Stage s) {
  return fs::path(cfg.output_dir) / kStageNames[static_cast<int>(s)];
}

void require(const fs::path& manifest, Stage upstream) {
  if (!fs::exists(manifest)) {
    throw Error(ErrorKind::MissingDependency,
                std::string(to_string(upstream)) + " (" + manifest.string() + " not found; run that stage first)");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

// Lists every regular file under `dir` (relative, sorted), skipping the manifest itself.
std::vector<std::string> stage_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_manifest(const fs::path& dir, Stage stage, const PipelineConfig& cfg, std::uint64_t seed,
                    const std::vector<std::pair<Stage, fs::path>>& inputs) {
  // every default materialised next to the artifacts it produced
  write_json(dir / "config.json", to_json(cfg));
  ordered_json j;
  j["stage"] = std::string(to_string(stage));
  j["version"] = kVersion;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = seed;
  ordered_json in = ordered_json::array();
  for (const auto& [s, path] : inputs) {
    in.push_back({{"stage", std::string(to_string(s))}, {"manifest_sha256", sha256_file(path)}});
  }
  j["inputs"] = in;
  ordered_json out = ordered_json::array();
  for (const auto& f : stage_files(dir)) out.push_back({{"file", f}, {"sha256", sha256_file(dir / f)}});
  j["outputs"] = out;
  write_json(dir / "manifest.json", j);
}

// Removes a previous run's files so that the stage directory holds exactly
// this run's artifacts.
void fresh_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Cell cell_of(const TrialMeta& m) { return {m.subject, m.hand, m.condition}; }

// Cells present in the dataset, ordered subject, Right before Left, Real before Imagined.
std::vector<Cell> cells_of(const Dataset& ds) {
  std::vector<Cell> out;
  for (const auto& s : ds.subjects) {
    for (Hand h : {Hand::Right, Hand::Left}) {
      for (Condition c : {Condition::Real, Condition::Imagined}) {
        const bool any = std::any_of(ds.epochs.begin(), ds.epochs.end(), [&](const TrialEpoch& e) {
          return e.meta.subject == s && e.meta.hand == h && e.meta.condition == c;
        });
        if (any) out.push_back({s, h, c});
      }
    }
  }
  return out;
}

std::vector<TrialEpoch> epochs_of(const Dataset& ds, const Cell& c) {
  std::vector<TrialEpoch> out;
  for (const auto& e : ds.epochs) {
    if (cell_of(e.meta) == c) out.push_back(e);
  }
  return out;
}

std::string hand_key(const std::string& subject, Hand h) { return subject + "_" + std::string(short_name(h)); }

Dataset load_stage_dataset(const fs::path& dir) {
  try {
    return load_dataset(dir);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(ErrorKind::Io, e.what());
  }
}

// --- synth ---

void stage_synth(const PipelineConfig& cfg) {
  SynthConfig s = cfg.synth;
  s.seed = derive_stage_seed(cfg.seed, "synth");
  const fs::path dir = cfg.dataset_dir;
  fresh_dir(dir);
  export_dataset(generate(s), s, dir);
  write_manifest(dir, Stage::Synth, cfg, s.seed, {});
}

// --- preprocess ---

void stage_preprocess(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  if (!fs::exists(p.dataset / "dataset.json")) {
    throw Error(ErrorKind::MissingDependency, "synth (no dataset.json in " + p.dataset.string() + ")");
  }
  Dataset ds = load_stage_dataset(p.dataset);
  const auto& c = cfg.preprocess;
  const double fs_hz = ds.fs;
  const FilterSpec broadband = c.broadband_hi_hz >= fs_hz / 2.0
                                   ? FilterSpec::highpass(c.broadband_lo_hz, fs_hz, c.filter_order)
                                   : FilterSpec::bandpass(c.broadband_lo_hz, c.broadband_hi_hz, fs_hz, c.filter_order);
  filter_epochs(ds.epochs, SosFilter(broadband));
  filter_epochs(ds.epochs, SosFilter(FilterSpec::notch(c.notch_hz, fs_hz, c.notch_q)));

  RejectionResult rej = reject_bad_trials(ds.epochs, c.amp_limit_uv, c.var_ratio_limit);
  filter_epochs(rej.kept, SosFilter(FilterSpec::bandpass(c.band.lo_hz, c.band.hi_hz, fs_hz, c.filter_order)));

  fresh_dir(p.preprocess);
  Dataset out{ds.fs, ds.channels, ds.subjects, std::move(rej.kept)};
  save_dataset(p.preprocess, out);

  ordered_json j;
  j["amp_limit_uv"] = rej.report.amp_limit_uv;
  j["var_ratio_limit"] = rej.report.var_ratio_limit;
  j["total"] = rej.report.total;
  j["kept"] = out.epochs.size();
  ordered_json list = ordered_json::array();
  for (const auto& r : rej.report.rejected) {
    list.push_back({{"file", trial_file_name(r.meta)},
                    {"subject", r.meta.subject},
                    {"hand", std::string(to_string(r.meta.hand))},
                    {"condition", std::string(to_string(r.meta.condition))},
                    {"reason", std::string(to_string(r.reason))},
                    {"channel", r.channel},
                    {"value", r.value}});
  }
  j["rejected"] = list;
  write_json(p.preprocess / "rejection.json", j);
  const fs::path upstream = p.dataset / "manifest.json";
  std::vector<std::pair<Stage, fs::path>> inputs;
  if (fs::exists(upstream)) inputs.emplace_back(Stage::Synth, upstream);
  write_manifest(p.preprocess, Stage::Preprocess, cfg, cfg.seed, inputs);
}

// --- ica ---

void stage_ica(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  require(p.preprocess / "manifest.json", Stage::Preprocess);
  const Dataset ds = load_stage_dataset(p.preprocess);

  std::vector<std::pair<std::string, Hand>> fits;
  for (const auto& s : ds.subjects) {
    for (Hand h : {Hand::Right, Hand::Left}) {
      const bool any = std::any_of(ds.epochs.begin(), ds.epochs.end(),
                                   [&](const TrialEpoch& e) { return e.meta.subject == s && e.meta.hand == h; });
      if (any) fits.emplace_back(s, h);
    }
  }
  fresh_dir(p.ica);
  std::vector<UnmixingResult> results(fits.size());
  const auto n = static_cast<std::ptrdiff_t>(fits.size());
  std::vector<std::string> errors(fits.size());
  std::vector<int> kinds(fits.size(), -1);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& [subject, hand] = fits[static_cast<std::size_t>(i)];
    try {
      std::vector<TrialEpoch> eps;
      for (const auto& e : ds.epochs) {
        if (e.meta.subject == subject && e.meta.hand == hand) eps.push_back(e);
      }
      InfomaxParams ip = cfg.ica.infomax;
      ip.seed = derive_stage_seed(cfg.seed, "ica/" + hand_key(subject, hand));
      results[static_cast<std::size_t>(i)] = fit_ica(concatenate(eps), cfg.ica.retain, ip);
    } catch (const Error& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
      kinds[static_cast<std::size_t>(i)] = static_cast<int>(e.kind());
    }
  }
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (kinds[i] >= 0) {
      throw Error(static_cast<ErrorKind>(kinds[i]), hand_key(fits[i].first, fits[i].second) + ": " + errors[i]);
    }
    save_unmixing(p.ica / hand_key(fits[i].first, fits[i].second), results[i]);
  }
  write_manifest(p.ica, Stage::Ica, cfg, derive_stage_seed(cfg.seed, "ica"), {{Stage::Preprocess, p.preprocess / "manifest.json"}});
}

std::vector<RowMatrix> cell_activations(const fs::path& ica_dir, const Cell& cell, const std::vector<TrialEpoch>& eps,
                                        std::map<std::string, UnmixingResult>& cache) {
  const auto key = hand_key(cell.subject, cell.hand);
  auto it = cache.find(key);
  if (it == cache.end()) {
    if (!fs::exists(ica_dir / key / "ica.json")) {
      throw Error(ErrorKind::MissingDependency, "ica (no unmixing for " + key + ")");
    }
    it = cache.emplace(key, load_unmixing(ica_dir / key)).first;
  }
  return activations(eps, it->second);
}

// --- select ---

void write_erd_csv(const fs::path& path, const std::vector<ErdCurve>& all, const std::vector<ErdCurve>& wrist,
                   const std::vector<ErdCurve>& finger) {
  std::ostringstream out;
  out << "time_s";
  for (const auto& c : all) out << ",ic" << c.component;
  for (const auto& c : wrist) out << ",ic" << c.component << "_Wrist";
  for (const auto& c : finger) out << ",ic" << c.component << "_Finger";
  out << '\n';
  const auto& times = all.front().times_s;
  for (std::size_t t = 0; t < times.size(); ++t) {
    out << fmt_short(times[t]);
    for (const auto* set : {&all, &wrist, &finger}) {
      for (const auto& c : *set) out << ',' << fmt_short(c.values_pct[t]);
    }
    out << '\n';
  }
  write_text(path, out.str());
}

void stage_select(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  require(p.preprocess / "manifest.json", Stage::Preprocess);
  require(p.ica / "manifest.json", Stage::Ica);
  const Dataset ds = load_stage_dataset(p.preprocess);
  std::map<std::string, UnmixingResult> cache;
  fresh_dir(p.select);

  ordered_json cells = ordered_json::array();
  for (const auto& cell : cells_of(ds)) {
    const auto eps = epochs_of(ds, cell);
    const auto acts = cell_activations(p.ica, cell, eps, cache);
    const double t0 = eps.front().t0_offset_s;
    const auto curves = component_erd_curves(acts, ds.fs, t0, cfg.erd);
    const auto sel = select_components(curves, cfg.erd);

    std::vector<ErdCurve> by_class[2];
    for (int c = 0; c < 2; ++c) {
      const ClassLabel label = c == 0 ? ClassLabel::Wrist : ClassLabel::Finger;
      std::vector<RowMatrix> sub;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        if (eps[i].meta.label() == label) sub.push_back(acts[i]);
      }
      if (sub.size() >= 2) by_class[c] = component_erd_curves(sub, ds.fs, t0, cfg.erd);
    }
    write_erd_csv(p.select / cell.id() / "erd.csv", curves, by_class[0], by_class[1]);

    ordered_json scores = ordered_json::array();
    for (const auto& s : sel.ranked) {
      scores.push_back({{"component", s.component},
                        {"erd_depth_pct", s.erd_depth_pct},
                        {"ers_height_pct", s.ers_height_pct},
                        {"score", s.score}});
    }
    cells.push_back({{"cell", cell.id()},
                     {"subject", cell.subject},
                     {"hand", std::string(to_string(cell.hand))},
                     {"condition", std::string(to_string(cell.condition))},
                     {"n_trials", eps.size()},
                     {"n_components", curves.size()},
                     {"ranked", scores},
                     {"selected", sel.selected}});
  }
  ordered_json j;
  j["band_hz"] = {cfg.erd.band.lo_hz, cfg.erd.band.hi_hz};
  j["reference_window_s"] = {cfg.erd.reference.start_s, cfg.erd.reference.end_s};
  j["movement_window_s"] = {cfg.erd.movement.start_s, cfg.erd.movement.end_s};
  j["post_window_s"] = {cfg.erd.post.start_s, cfg.erd.post.end_s};
  j["score_threshold"] = cfg.erd.score_threshold;
  j["cells"] = cells;
  write_json(p.select / "components.json", j);
  write_manifest(p.select, Stage::Select, cfg, cfg.seed,
                 {{Stage::Preprocess, p.preprocess / "manifest.json"}, {Stage::Ica, p.ica / "manifest.json"}});
}

// --- features ---

void write_features_csv(const fs::path& path, const FeatureMatrix& m) {
  std::ostringstream out;
  out << "subject,hand,condition,movement,trial_index,label";
  for (const auto& c : m.columns) out << ",c" << c.component << "_w" << c.window << "_b" << c.band;
  out << '\n';
  for (std::size_t i = 0; i < m.trials(); ++i) {
    const auto& t = m.meta[i];
    out << t.subject << ',' << to_string(t.hand) << ',' << to_string(t.condition) << ',' << to_string(t.movement) << ','
        << t.trial_index << ',' << to_string(m.labels[i]);
    for (std::size_t j = 0; j < m.features(); ++j) out << ',' << fmt(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

FeatureMatrix read_features_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  const auto header = split_csv(line);
  if (header.size() < 6) throw Error(ErrorKind::Io, path.string() + ": malformed header");
  FeatureMatrix m;
  for (std::size_t j = 6; j < header.size(); ++j) {
    FeatureColumn c;
    if (std::sscanf(header[j].c_str(), "c%zu_w%zu_b%zu", &c.component, &c.window, &c.band) != 3) {
      throw Error(ErrorKind::Io, path.string() + ": bad column " + header[j]);
    }
    m.columns.push_back(c);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw Error(ErrorKind::Io, path.string() + ": ragged row");
    TrialMeta t{cells[0], parse_hand(cells[1]), parse_condition(cells[2]), parse_movement(cells[3]), std::stoi(cells[4])};
    m.meta.push_back(t);
    m.labels.push_back(cells[5] == "Wrist" ? ClassLabel::Wrist : ClassLabel::Finger);
    std::vector<double> v(header.size() - 6);
    for (std::size_t j = 6; j < cells.size(); ++j) v[j - 6] = std::strtod(cells[j].c_str(), nullptr);
    rows.push_back(std::move(v));
  }
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void stage_features(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  require(p.select / "manifest.json", Stage::Select);
  const Dataset ds = load_stage_dataset(p.preprocess);
  const json comps = read_json(p.select / "components.json");
  std::map<std::string, UnmixingResult> cache;
  fresh_dir(p.features);

  for (const auto& cell : cells_of(ds)) {
    std::vector<std::size_t> selected;
    for (const auto& c : comps.at("cells")) {
      if (c.at("cell") == cell.id()) selected = c.at("selected").get<std::vector<std::size_t>>();
    }
    if (selected.empty()) throw Error(ErrorKind::MissingDependency, "select (no components for " + cell.id() + ")");
    const auto eps = epochs_of(ds, cell);
    const auto acts = cell_activations(p.ica, cell, eps, cache);
    std::vector<TrialMeta> meta;
    for (const auto& e : eps) meta.push_back(e.meta);
    FeatureMatrix m = extract_feature_matrix(acts, meta, selected, cfg.features.grid, ds.fs, eps.front().t0_offset_s);
    if (cfg.features.log_power) log_transform(m);
    const fs::path dir = p.features / cell.id();
    write_features_csv(dir / "features.csv", m);

    const auto sel = select_top_k(m, cfg.features.k);
    ordered_json cols = ordered_json::array();
    for (auto j : sel.selected_columns) {
      const auto& c = m.columns[j];
      cols.push_back({{"column", j}, {"component", c.component}, {"window", c.window}, {"band", c.band}, {"bd", sel.bd_scores[j]}});
    }
    ordered_json j;
    j["cell"] = cell.id();
    j["n_trials"] = m.trials();
    j["n_components"] = selected.size();
    j["n_windows"] = cfg.features.grid.window_count();
    j["n_bands"] = cfg.features.grid.bands.size();
    j["n_features"] = m.features();
    j["k"] = cfg.features.k;
    j["log_power"] = cfg.features.log_power;
    j["selected"] = cols;
    j["bd_scores"] = sel.bd_scores;
    write_json(dir / "selection.json", j);
  }
  write_manifest(p.features, Stage::Features, cfg, cfg.seed, {{Stage::Select, p.select / "manifest.json"}});
}

// --- classify ---

ordered_json confusion_json(const ConfusionCounts& c) {
  return {{"T_W", c.true_wrist}, {"F_W", c.false_wrist}, {"T_F", c.true_finger}, {"F_F", c.false_finger}};
}

ordered_json labels_json(const std::vector<ClassLabel>& v) {
  ordered_json out = ordered_json::array();
  for (auto l : v) out.push_back(std::string(to_string(l)));
  return out;
}

void stage_classify(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  require(p.features / "manifest.json", Stage::Features);
  const json fman = read_json(p.features / "manifest.json");

  std::vector<std::string> cell_ids;
  for (const auto& o : fman.at("outputs")) {
    const std::string f = o.at("file");
    const auto slash = f.find('/');
    if (slash != std::string::npos && f.substr(slash + 1) == "selection.json") cell_ids.push_back(f.substr(0, slash));
  }
  // manifest order is lexicographic; restore subject / hand / condition order
  auto rank = [](const std::string& id) {
    const bool left = id.find("_LH_") != std::string::npos;
    const bool imag = id.find("_Imagined") != std::string::npos;
    return id.substr(0, id.find('_')) + (left ? "1" : "0") + (imag ? "1" : "0");
  };
  std::sort(cell_ids.begin(), cell_ids.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });

  fresh_dir(p.classify);
  ordered_json cells = ordered_json::array();
  for (const auto& id : cell_ids) {
    const FeatureMatrix full = read_features_csv(p.features / id / "features.csv");
    const json sel = read_json(p.features / id / "selection.json");
    std::vector<std::size_t> columns;
    for (const auto& c : sel.at("selected")) columns.push_back(c.at("column").get<std::size_t>());
    const CellResult r = classify_cell(full, columns, cfg, derive_stage_seed(cfg.seed, "classify/" + id));
    const LooResult& md = r.md;
    const MlpResult& ann = r.ann;
    const std::size_t dropped = r.outliers_dropped;
    const std::uint64_t ann_seed = r.ann_seed;

    ordered_json trials = ordered_json::array();
    for (const auto& t : full.meta) trials.push_back(trial_file_name(t));
    cells.push_back({{"cell", id},
                     {"subject", full.meta.front().subject},
                     {"hand", std::string(to_string(full.meta.front().hand))},
                     {"condition", std::string(to_string(full.meta.front().condition))},
                     {"n_trials", full.trials()},
                     {"n_features", full.features()},
                     {"md",
                      {{"protocol", cfg.features.nested_selection ? "leave-one-out, selection nested in folds"
                                                                   : "leave-one-out over all trials"},
                       {"shrinkage", cfg.classify.shrinkage},
                       {"confusion", confusion_json(md.confusion)},
                       {"ssa", md.ssa},
                       {"predictions", labels_json(md.predictions)}}},
                     {"ann",
                      {{"protocol", "stratified 7:3 split, test-set confusion"},
                       {"seed", ann_seed},
                       {"train", ann.split.train},
                       {"test", ann.split.test},
                       {"outliers_dropped", dropped},
                       {"epochs_run", ann.epochs_run},
                       {"final_loss", ann.model.training_log.empty() ? 0.0 : ann.model.training_log.back()},
                       {"confusion", confusion_json(ann.confusion)},
                       {"ssa", ann.ssa},
                       {"predictions", labels_json(ann.test_predictions)}}},
                     {"trials", trials}});
  }
  ordered_json j;
  j["config_hash"] = config_hash(cfg);
  j["cells"] = cells;
  write_json(p.classify / "classify.json", j);
  write_manifest(p.classify, Stage::Classify, cfg, derive_stage_seed(cfg.seed, "classify"),
                 {{Stage::Features, p.features / "manifest.json"}});
}

// --- report ---

struct CellScore {
  std::string subject;
  Hand hand;
  Condition condition;
  double md = 0.0;
  double ann = 0.0;
};

const std::pair<Condition, Hand> kColumns[] = {{Condition::Real, Hand::Right},
                                               {Condition::Real, Hand::Left},
                                               {Condition::Imagined, Hand::Right},
                                               {Condition::Imagined, Hand::Left}};

std::string column_name(Condition c, Hand h) {
  return std::string(c == Condition::Real ? "Real" : "Imaginary") + " " + std::string(short_name(h));
}

struct Table {
  std::vector<std::string> subjects;
  std::vector<std::array<std::optional<double>, 4>> cells;
  std::vector<double> averages;
  double grand = 0.0;
};

Table build_table(const std::vector<CellScore>& scores, bool ann) {
  Table t;
  for (const auto& s : scores) {
    if (std::find(t.subjects.begin(), t.subjects.end(), s.subject) == t.subjects.end()) t.subjects.push_back(s.subject);
  }
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& subj : t.subjects) {
    std::array<std::optional<double>, 4> row;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      for (const auto& s : scores) {
        if (s.subject == subj && s.condition == kColumns[c].first && s.hand == kColumns[c].second) {
          row[c] = ann ? s.ann : s.md;
          sum += *row[c];
          ++n;
          total += *row[c];
          ++count;
        }
      }
    }
    t.cells.push_back(row);
    t.averages.push_back(n ? sum / static_cast<double>(n) : 0.0);
  }
  t.grand = count ? total / static_cast<double>(count) : 0.0;
  return t;
}

ordered_json table_json(const Table& t) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < t.subjects.size(); ++i) {
    ordered_json r;
    r["subject"] = t.subjects[i];
    for (std::size_t c = 0; c < 4; ++c) {
      const auto name = column_name(kColumns[c].first, kColumns[c].second);
      if (t.cells[i][c]) {
        r[name] = *t.cells[i][c];
      } else {
        r[name] = nullptr;
      }
    }
    r["Average"] = t.averages[i];
    rows.push_back(r);
  }
  return {{"rows", rows}, {"grand_average", t.grand}, {"grand_average_text", format_percent(t.grand)}};
}

std::string cell_text(const std::optional<double>& v) { return v ? format_percent(*v) : "-"; }

std::string table_text(const Table& t, const std::string& title) {
  std::ostringstream out;
  char buf[256];
  out << title << '\n';
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %14s %14s %9s\n", "Subject", "Real RH", "Real LH", "Imaginary RH",
                "Imaginary LH", "Average");
  out << buf;
  for (std::size_t i = 0; i < t.subjects.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-10s %9s %9s %14s %14s %9s\n", t.subjects[i].c_str(), cell_text(t.cells[i][0]).c_str(),
                  cell_text(t.cells[i][1]).c_str(), cell_text(t.cells[i][2]).c_str(), cell_text(t.cells[i][3]).c_str(),
                  format_percent(t.averages[i]).c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s %59s\n", "Grand Average", format_percent(t.grand).c_str());
  out << buf;
  return out.str();
}

std::string table_csv(const Table& t, const std::string& method) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.subjects.size(); ++i) {
    out << method << ',' << t.subjects[i];
    for (std::size_t c = 0; c < 4; ++c) out << ',' << (t.cells[i][c] ? fmt_short(*t.cells[i][c]) : "-");
    out << ',' << fmt_short(t.averages[i]) << '\n';
  }
  out << method << ",Grand Average,,,,," << fmt_short(t.grand) << '\n';
  return out.str();
}

// Minimal line plot of one component's ERD curves.
std::string erd_svg(const std::string& title, const std::vector<double>& times,
                    const std::vector<std::pair<std::string, const std::vector<double>*>>& series, const ErdScoring& erd) {
  const double W = 640, H = 360, ml = 56, mr = 16, mt = 28, mb = 40;
  double lo = -100.0, hi = 50.0;
  for (const auto& s : series)
    for (double v : *s.second) hi = std::max(hi, v);
  hi = std::ceil(hi / 50.0) * 50.0;
  const double t0 = times.front(), t1 = times.back();
  auto X = [&](double t) { return ml + (t - t0) / (t1 - t0) * (W - ml - mr); };
  auto Y = [&](double v) { return mt + (hi - v) / (hi - lo) * (H - mt - mb); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto shade = [&](const TimeWindow& w, const char* colour) {
    o << "<rect x=\"" << fmt_short(X(w.start_s)) << "\" y=\"" << mt << "\" width=\"" << fmt_short(X(w.end_s) - X(w.start_s))
      << "\" height=\"" << (H - mt - mb) << "\" fill=\"" << colour << "\" fill-opacity=\"0.12\"/>\n";
  };
  shade(erd.reference, "gray");
  shade(erd.movement, "blue");
  shade(erd.post, "red");
  for (double v = lo; v <= hi; v += 50.0) {
    o << "<line x1=\"" << ml << "\" x2=\"" << (W - mr) << "\" y1=\"" << fmt_short(Y(v)) << "\" y2=\"" << fmt_short(Y(v))
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << (ml - 6) << "\" y=\"" << fmt_short(Y(v) + 4) << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (int t = static_cast<int>(std::ceil(t0)); t <= static_cast<int>(std::floor(t1)); ++t) {
    o << "<text x=\"" << fmt_short(X(t)) << "\" y=\"" << (H - mb + 16) << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  o << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 6) << "\" text-anchor=\"middle\">time (s)</text>\n";
  o << "<text x=\"14\" y=\"" << (H / 2) << "\" transform=\"rotate(-90 14 " << (H / 2) << ")\" text-anchor=\"middle\">ERD/ERS (%)</text>\n";
  o << "<text x=\"" << ml << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  const char* colours[] = {"black", "#1f5fbf", "#c0392b"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    o << "<polyline fill=\"none\" stroke=\"" << colours[s % 3] << "\" stroke-width=\"1.2\" points=\"";
    const auto& v = *series[s].second;
    for (std::size_t i = 0; i < v.size(); i += 2) o << fmt_short(X(times[i])) << ',' << fmt_short(Y(std::max(lo, v[i]))) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << (W - mr - 70) << "\" y=\"" << (mt + 14 + 14 * s) << "\" fill=\"" << colours[s % 3] << "\">"
      << series[s].first << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

CsvTable read_numeric_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
  CsvTable t;
  std::string line;
  std::getline(f, line);
  t.header = split_csv(line);
  t.columns.resize(t.header.size());
  while (std::getline(f, line)) {
    const auto cells = split_csv(line);
    for (std::size_t j = 0; j < cells.size() && j < t.columns.size(); ++j) t.columns[j].push_back(std::strtod(cells[j].c_str(), nullptr));
  }
  return t;
}

void stage_report(const PipelineConfig& cfg) {
  const StagePaths p(cfg);
  require(p.classify / "manifest.json", Stage::Classify);
  const json cls = read_json(p.classify / "classify.json");
  const json comps = read_json(p.select / "components.json");
  const json rej = read_json(p.preprocess / "rejection.json");
  if (cls.at("cells").empty()) throw Error(ErrorKind::EmptyInput, "no classifier results to report");

  fresh_dir(p.report);
  std::vector<CellScore> scores;
  ordered_json cells = ordered_json::array();
  for (const auto& c : cls.at("cells")) {
    CellScore s{c.at("subject"), parse_hand(c.at("hand").get<std::string>()), parse_condition(c.at("condition").get<std::string>()),
                c.at("md").at("ssa"), c.at("ann").at("ssa")};
    scores.push_back(s);
    std::vector<std::size_t> selected;
    for (const auto& k : comps.at("cells")) {
      if (k.at("cell") == c.at("cell")) selected = k.at("selected").get<std::vector<std::size_t>>();
    }
    std::size_t rejected = 0;
    for (const auto& r : rej.at("rejected")) {
      if (r.at("subject") == c.at("subject") && r.at("hand") == c.at("hand") && r.at("condition") == c.at("condition")) ++rejected;
    }
    cells.push_back({{"cell", c.at("cell")},
                     {"subject", c.at("subject")},
                     {"hand", c.at("hand")},
                     {"condition", c.at("condition")},
                     {"n_trials", c.at("n_trials")},
                     {"n_rejected", rejected},
                     {"selected_components", selected},
                     {"n_features", c.at("n_features")},
                     {"MD", {{"ssa", c.at("md").at("ssa")}, {"confusion", c.at("md").at("confusion")}, {"protocol", c.at("md").at("protocol")}}},
                     {"ANN",
                      {{"ssa", c.at("ann").at("ssa")},
                       {"confusion", c.at("ann").at("confusion")},
                       {"protocol", c.at("ann").at("protocol")},
                       {"seed", c.at("ann").at("seed")},
                       {"epochs_run", c.at("ann").at("epochs_run")}}}});

    // ERD plots for the selected components
    const CsvTable erd = read_numeric_csv(p.select / c.at("cell").get<std::string>() / "erd.csv");
    for (auto comp : selected) {
      std::vector<std::pair<std::string, const std::vector<double>*>> series;
      const std::string base = "ic" + std::to_string(comp);
      for (const auto& [suffix, label] : {std::pair<std::string, std::string>{"", "all trials"}, {"_Wrist", "Wrist"}, {"_Finger", "Finger"}}) {
        const auto it = std::find(erd.header.begin(), erd.header.end(), base + suffix);
        if (it != erd.header.end()) series.emplace_back(label, &erd.columns[static_cast<std::size_t>(it - erd.header.begin())]);
      }
      const std::string name = c.at("cell").get<std::string>() + "_" + base;
      write_text(p.report / ("erd_" + name + ".svg"), erd_svg(name, erd.columns[0], series, cfg.erd));
    }
  }

  const Table md = build_table(scores, false);
  const Table ann = build_table(scores, true);
  ordered_json j;
  j["version"] = kVersion;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["metric"] = "SSA, the mean of wrist and finger sensitivities";
  j["cells"] = cells;
  j["tables"] = {{"MD", table_json(md)}, {"ANN", table_json(ann)}};
  write_json(p.report / "report.json", j);

  write_text(p.report / "report.csv", "method,subject,real_rh,real_lh,imaginary_rh,imaginary_lh,average\n" +
                                          table_csv(md, "MD") + table_csv(ann, "ANN"));
  write_text(p.report / "report.txt",
             table_text(md, "Classification accuracy (SSA, %) - Mahalanobis distance, leave-one-out") + "\n" +
                 table_text(ann, "Classification accuracy (SSA, %) - MLP, 7:3 test split"));
  write_manifest(p.report, Stage::Report, cfg, cfg.seed, {{Stage::Classify, p.classify / "manifest.json"}});
}

} // namespace

CellResult classify_cell(const FeatureMatrix& full, const std::vector<std::size_t>& columns, const PipelineConfig& cfg,
                         std::uint64_t ann_seed) {
  const std::size_t k = cfg.features.k;
  const bool nested = cfg.features.nested_selection;
  if (!nested && columns.empty()) throw Error(ErrorKind::InvalidArgument, "no selected feature columns");
  CellResult r;
  r.md = nested ? md_loo_classify_nested(full, k, cfg.classify.shrinkage)
                : md_loo_classify(restrict_columns(full, columns), cfg.classify.shrinkage);

  MlpParams mp = cfg.classify.mlp;
  mp.seed = ann_seed;
  r.ann_seed = ann_seed;
  Split split = stratified_split(full.labels, mp.train_fraction, mp.seed);
  std::vector<std::size_t> ann_cols = columns;
  if (nested) {
    FeatureMatrix train;
    train.values.resize(static_cast<Eigen::Index>(split.train.size()), full.values.cols());
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      train.values.row(static_cast<Eigen::Index>(i)) = full.values.row(static_cast<Eigen::Index>(split.train[i]));
      train.labels.push_back(full.labels[split.train[i]]);
    }
    ann_cols = select_top_k(train, k).selected_columns;
  }
  const FeatureMatrix ann_m = restrict_columns(full, ann_cols);
  if (cfg.classify.outlier_filter) {
    // only training trials are ever dropped
    FeatureMatrix train = restrict_columns(ann_m, {});
    train.values.resize(static_cast<Eigen::Index>(split.train.size()), ann_m.values.cols());
    train.labels.clear();
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      train.values.row(static_cast<Eigen::Index>(i)) = ann_m.values.row(static_cast<Eigen::Index>(split.train[i]));
      train.labels.push_back(ann_m.labels[split.train[i]]);
    }
    const auto keep = md_outlier_filter(train, cfg.classify.shrinkage, cfg.classify.outlier_quantile);
    std::vector<std::size_t> kept;
    for (auto i : keep) kept.push_back(split.train[i]);
    r.outliers_dropped = split.train.size() - kept.size();
    split.train = kept;
  }
  r.ann = mlp_train(ann_m, split, mp);
  return r;
}

FeatureMatrix load_features(const std::filesystem::path& csv) { return read_features_csv(csv); }

std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

std::optional<Stage> parse_stage(std::string_view s) {
  for (int i = 0; i < 7; ++i) {
    if (s == kStageNames[i]) return static_cast<Stage>(i);
  }
  return std::nullopt;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidSynthConfig:
    case ErrorKind::InvalidFilterSpec:
      return 2;
    case ErrorKind::MissingDependency:
      return 3;
    case ErrorKind::RankDeficient:
    case ErrorKind::IcaDiverged:
    case ErrorKind::SingularMatrix:
    case ErrorKind::SingularCovariance:
    case ErrorKind::TrainingDiverged:
    case ErrorKind::ZeroReference:
    case ErrorKind::InsufficientTrials:
    case ErrorKind::TooFewComponents:
    case ErrorKind::AllTrialsRejected:
    case ErrorKind::MissingClass:
    case ErrorKind::EmptyClass:
      return 4;
    case ErrorKind::EmptyInput:
      return 5;
    default:
      return 1;
  }
}

std::string Cell::id() const {
  return subject + "_" + std::string(short_name(hand)) + "_" + std::string(to_string(condition));
}

StagePaths::StagePaths(const PipelineConfig& cfg)
    : dataset(cfg.dataset_dir),
      preprocess(stage_dir(cfg, Stage::Preprocess)),
      ica(stage_dir(cfg, Stage::Ica)),
      select(stage_dir(cfg, Stage::Select)),
      features(stage_dir(cfg, Stage::Features)),
      classify(stage_dir(cfg, Stage::Classify)),
      report(stage_dir(cfg, Stage::Report)) {}

std::string format_percent(double fraction) { return std::to_string(std::lround(100.0 * fraction)) + " %"; }

void run_stage(Stage stage, const PipelineConfig& cfg) {
  switch (stage) {
    case Stage::Synth: return stage_synth(cfg);
    case Stage::Preprocess: return stage_preprocess(cfg);
    case Stage::Ica: return stage_ica(cfg);
    case Stage::Select: return stage_select(cfg);
    case Stage::Features: return stage_features(cfg);
    case Stage::Classify: return stage_classify(cfg);
    case Stage::Report: return stage_report(cfg);
  }
}

void run_all(const PipelineConfig& cfg) {
  for (int i = cfg.run_synth ? 0 : 1; i < 7; ++i) run_stage(static_cast<Stage>(i), cfg);
}

} // namespace bcihand
