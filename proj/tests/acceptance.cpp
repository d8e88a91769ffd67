// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance --work DIR [--config cfg.json] [--report out.txt] [--only 3 --only 9]

#include "bcihand/classify.hpp"
#include "bcihand/epoch.hpp"
#include "bcihand/erders.hpp"
#include "bcihand/features.hpp"
#include "bcihand/filter.hpp"
#include "bcihand/ica.hpp"
#include "bcihand/pipeline.hpp"
#include "bcihand/synth.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <numeric>
#include <sstream>

using namespace bcihand;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Context {
  fs::path work;
  PipelineConfig cfg;
  double run1_seconds = -1;

  PipelineConfig run_config(const std::string& name) const {
    PipelineConfig c = cfg;
    c.dataset_dir = (work / name / "dataset").string();
    c.output_dir = (work / name / "out").string();
    return c;
  }

  // the first full run is shared by several criteria
  void ensure_run1() {
    if (run1_seconds >= 0) return;
    const auto c = run_config("run1");
    fs::remove_all(work / "run1");
    const auto t0 = std::chrono::steady_clock::now();
    run_all(c);
    run1_seconds = seconds_since(t0);
  }

  std::vector<std::string> cell_ids() {
    ensure_run1();
    const auto report = nlohmann::json::parse(slurp(StagePaths(run_config("run1")).report / "report.json"));
    std::vector<std::string> ids;
    for (const auto& c : report.at("cells")) ids.push_back(c.at("cell"));
    return ids;
  }
};

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return oracle::pearson(std::vector<double>(a.data(), a.data() + a.size()), std::vector<double>(b.data(), b.data() + b.size()));
}

// one row of every trial joined end to end
Eigen::VectorXd joined_row(const std::vector<RowMatrix>& trials, Eigen::Index row) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(trials.size()) * trials.front().cols());
  Eigen::Index p = 0;
  for (const auto& t : trials) {
    out.segment(p, t.cols()) = t.row(row).transpose();
    p += t.cols();
  }
  return out;
}

// synth -> broadband, notch and band filters -> ICA, as the pipeline does
struct IcaRun {
  SynthOutput out;
  UnmixingResult ica;
  std::vector<RowMatrix> acts;
  std::vector<RowMatrix> truth; // sources through the same filters
};

IcaRun ica_run(const SynthConfig& sc, const PreprocessConfig& pp, const IcaConfig& ic) {
  IcaRun r;
  r.out = generate(sc);
  Dataset ds = to_dataset(r.out);
  const std::vector<SosFilter> chain{SosFilter(FilterSpec::highpass(pp.broadband_lo_hz, ds.fs, pp.filter_order)),
                                     SosFilter(FilterSpec::notch(pp.notch_hz, ds.fs, pp.notch_q)),
                                     SosFilter(FilterSpec::bandpass(pp.band.lo_hz, pp.band.hi_hz, ds.fs, pp.filter_order))};
  for (const auto& f : chain) filter_epochs(ds.epochs, f);
  r.ica = fit_ica(concatenate(ds.epochs), ic.retain, ic.infomax);
  r.acts = activations(ds.epochs, r.ica);
  r.truth = r.out.truth.subjects[0].epoch_sources;
  for (auto& s : r.truth)
    for (const auto& f : chain) filter_rows_zero_phase(s, f);
  return r;
}

// best |r| of any component against one true source
std::pair<std::size_t, double> best_match(const IcaRun& r, std::size_t source) {
  const Eigen::VectorXd truth = joined_row(r.truth, static_cast<Eigen::Index>(source));
  std::pair<std::size_t, double> best{0, 0.0};
  for (std::size_t c = 0; c < r.ica.components(); ++c) {
    const double v = std::abs(corr(joined_row(r.acts, static_cast<Eigen::Index>(c)), truth));
    if (v > best.second) best = {c, v};
  }
  return best;
}

// --- criteria ---

Outcome criterion1(Context& ctx) {
  ctx.ensure_run1();
  const auto report = nlohmann::json::parse(slurp(StagePaths(ctx.run_config("run1")).report / "report.json"));
  bool ok = report.at("cells").size() == 4;
  double worst_md = 1, worst_ann = 1;
  std::string cells;
  for (const auto& c : report.at("cells")) {
    const double md = c.at("MD").at("ssa"), ann = c.at("ANN").at("ssa");
    worst_md = std::min(worst_md, md);
    worst_ann = std::min(worst_ann, ann);
    cells += fmt(" %s MD %.3f ANN %.3f;", c.at("cell").get<std::string>().c_str(), md, ann);
  }
  ok = ok && worst_md >= 0.85 && worst_ann >= 0.85 && ctx.run1_seconds <= 300.0;
  return {ok, fmt("%zu cells, min MD SSA %.3f, min ANN SSA %.3f (>= 0.85), run-all %.1f s (<= 300);", report.at("cells").size(),
                  worst_md, worst_ann, ctx.run1_seconds) +
                  cells};
}

Outcome criterion2(Context& ctx) {
  const auto ids = ctx.cell_ids();
  const auto c = ctx.run_config("run1");
  const StagePaths p(c);
  std::vector<FeatureMatrix> full;
  for (const auto& id : ids) full.push_back(load_features(p.features / id / "features.csv"));
  constexpr int kSeeds = 100;
  std::vector<double> md(kSeeds, 0.0), ann(kSeeds, 0.0);
  for (int s = 0; s < kSeeds; ++s) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      FeatureMatrix m = full[i];
      std::mt19937_64 rng(derive_stage_seed(static_cast<std::uint64_t>(s), "null/" + ids[i]));
      std::shuffle(m.labels.begin(), m.labels.end(), rng);
      // without nesting, selection sees the permuted labels on all trials, as the stage does
      const std::vector<std::size_t> cols =
          c.features.nested_selection ? std::vector<std::size_t>{} : select_top_k(m, c.features.k).selected_columns;
      const auto r = classify_cell(m, cols, c, derive_stage_seed(c.seed, "null/" + std::to_string(s) + "/" + ids[i]));
      md[static_cast<std::size_t>(s)] += r.md.ssa / double(ids.size());
      ann[static_cast<std::size_t>(s)] += r.ann.ssa / double(ids.size());
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, v] : {std::pair<const char*, const std::vector<double>*>{"MD", &md}, {"ANN", &ann}}) {
    const double mean = oracle::mean(*v);
    const auto [lo, hi] = std::minmax_element(v->begin(), v->end());
    const bool pass = std::abs(mean - 0.5) <= 0.03 && *lo >= 0.35 && *hi <= 0.65;
    ok = ok && pass;
    detail += fmt("%s mean %.3f (0.5 +/- 0.03), per-seed range [%.3f, %.3f] (within [0.35, 0.65]); ", name, mean, *lo, *hi);
  }
  return {ok, detail + fmt("%d seeds x %zu cells", kSeeds, ids.size())};
}

Outcome criterion3(Context& ctx) {
  const FeatureGrid grid = ctx.cfg.features.grid;
  bool ok = grid.window_count() == 28 && sliding_windows(grid, 200.0).size() == 28;
  std::string detail = fmt("windows %zu; ", grid.window_count());
  for (std::size_t n = 8; n <= 12; ++n) {
    std::vector<std::size_t> sel(n);
    for (std::size_t i = 0; i < n; ++i) sel[i] = i;
    ok = ok && feature_columns(sel, grid).size() == 196 * n;
  }
  std::vector<std::size_t> s8(8), s12(12);
  std::iota(s8.begin(), s8.end(), 0);
  std::iota(s12.begin(), s12.end(), 0);
  const auto lo = feature_columns(s8, grid).size(), hi = feature_columns(s12, grid).size();
  ok = ok && lo == 1568 && hi == 2352;
  detail += fmt("length 196 x n for n = 8..12, range %zu..%zu; ", lo, hi);

  // the acceptance run's stored matrices obey the same identity
  const auto ids = ctx.cell_ids();
  const StagePaths p(ctx.run_config("run1"));
  for (const auto& id : ids) {
    const auto sel = nlohmann::json::parse(slurp(p.features / id / "selection.json"));
    const std::size_t n = sel.at("n_components"), f = sel.at("n_features");
    ok = ok && f == 196 * n && n >= 8 && n <= 12 && sel.at("n_windows") == 28;
    detail += fmt("%s %zu ICs -> %zu; ", id.c_str(), n, f);
  }
  return {ok, detail};
}

Outcome criterion4(Context&) {
  double worst = 0;
  auto rel = [&](double got, double want) {
    const double e = want == 0.0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
    worst = std::max(worst, e);
  };
  ClassStats s;
  s.mean = Eigen::Vector2d(0.3, -1.7);
  s.cov = s.cov_inv = Eigen::Matrix2d::Identity();
  rel(mahalanobis_sq(s.mean, s), 0.0);
  rel(mahalanobis_sq(s.mean + Eigen::Vector2d(3, 4), s), 25.0);
  s.cov = Eigen::Vector2d(2.0, 0.5).asDiagonal();
  s.cov_inv = s.cov.inverse();
  rel(mahalanobis_sq(s.mean + Eigen::Vector2d(1, 1), s), 0.5 + 2.0);
  // the same example through class_stats: rows whose unbiased covariance is diag(2, 0.5)
  Eigen::MatrixXd x(4, 2);
  x << 1, 0.5, -1, -0.5, 1, -0.5, -1, 0.5;
  x.col(0) *= std::sqrt(1.5);
  x.col(1) *= std::sqrt(1.5);
  const ClassStats fit = class_stats(x, 0.0);
  rel(mahalanobis_sq(fit.mean + Eigen::Vector2d(1, 1), fit), 2.5);

  rel(ssa({10, 0, 10, 0}), 1.0);
  rel(ssa({10, 0, 0, 10}), 0.5);
  rel(ssa({8, 2, 6, 4}), 0.5 * (0.8 + 0.6));
  return {worst <= 1e-12, fmt("MD 0 / 25 / 2.5 / 2.5 (fitted), SSA 1 / 0.5 / 0.7; worst relative error %.2e (<= 1e-12)", worst)};
}

Outcome criterion5(Context& ctx) {
  const auto ids = ctx.cell_ids();
  const auto c = ctx.run_config("run1");
  const StagePaths p(c);
  std::size_t trials = 0, flip_changes = 0, ref_mismatch = 0;
  for (const auto& id : ids) {
    const FeatureMatrix full = load_features(p.features / id / "features.csv");
    const auto sel = nlohmann::json::parse(slurp(p.features / id / "selection.json"));
    std::vector<std::size_t> cols;
    for (const auto& s : sel.at("selected")) cols.push_back(s.at("column"));
    const FeatureMatrix m = restrict_columns(full, cols);
    const auto fast = md_loo_classify(m, c.classify.shrinkage);
    const auto brute = reference::md_loo_classify(m, c.classify.shrinkage);
    ref_mismatch += fast.predictions != brute.predictions;
    for (std::size_t i = 0; i < m.trials(); ++i, ++trials) {
      FeatureMatrix f = m;
      f.labels[i] = f.labels[i] == ClassLabel::Wrist ? ClassLabel::Finger : ClassLabel::Wrist;
      flip_changes += md_loo_classify(f, c.classify.shrinkage).predictions[i] != fast.predictions[i];
    }
  }
  return {flip_changes == 0 && ref_mismatch == 0,
          fmt("%zu trials in %zu cells: %zu own-prediction changes after a label flip, %zu cells where incremental != brute force",
              trials, ids.size(), flip_changes, ref_mismatch)};
}

Outcome criterion6(Context& ctx) {
  SynthConfig sc = ctx.cfg.synth;
  sc.seed = 1;
  sc.n_subjects = 1;
  sc.snr_db = 30.0;
  sc.hands = {Hand::Right};
  const IcaRun r = ica_run(sc, ctx.cfg.preprocess, ctx.cfg.ica);
  const std::size_t k = r.ica.components();
  bool ok = k == sc.n_sources;
  std::string detail = fmt("%zu sources / %zu channels, %zu components; ", sc.n_sources, sc.n_channels, k);
  if (ok) {
    const double a = amari_index(r.ica.unmixing(), r.out.truth.subjects[0].mixing);
    ok = a <= 0.1;
    detail += fmt("Amari %.4f (<= 0.1); ", a);
  }
  for (std::size_t s = 0; s < sc.motor_sources.size(); ++s) {
    const auto [comp, v] = best_match(r, s);
    ok = ok && v >= 0.95;
    detail += fmt("motor source %zu |r| %.4f (IC %zu, >= 0.95); ", s, v, comp);
  }
  return {ok, detail};
}

Outcome criterion7(Context& ctx) {
  SynthConfig sc = ctx.cfg.synth;
  sc.seed = 1;
  sc.n_subjects = 1;
  sc.snr_db = 10.0;
  sc.trials_per_movement = 20;
  sc.hands = {Hand::Right};
  sc.motor_sources[0].erd_depth_wrist = sc.motor_sources[0].erd_depth_finger = 0.4;
  const IcaRun r = ica_run(sc, ctx.cfg.preprocess, ctx.cfg.ica);
  const auto [comp, v] = best_match(r, 0);
  std::vector<RowMatrix> trials;
  for (const auto& a : r.acts) trials.push_back(a.row(static_cast<Eigen::Index>(comp)));
  const auto curve = component_erd_curves(trials, sc.fs, kEpochPreS, ctx.cfg.erd)[0];
  const double depth = score_component(curve, ctx.cfg.erd.movement, ctx.cfg.erd.post).erd_depth_pct;
  const bool recovered = depth >= -48.0 && depth <= -32.0;

  // analytic step: power halves on [2, 3] s
  const auto times = epoch_times(1400, 200.0);
  std::vector<double> step(times.size(), 2.0);
  for (std::size_t i = 0; i < step.size(); ++i)
    if (times[i] >= 2.0 && times[i] <= 3.0) step[i] = 1.0;
  const auto e = erd_percent(step, times, {-1.0, 0.0});
  bool exact = true;
  for (std::size_t i = 0; i < e.size(); ++i) exact = exact && e[i] == ((times[i] >= 2.0 && times[i] <= 3.0) ? -50.0 : 0.0);
  return {recovered && exact,
          fmt("programmed -40 %%, mu IC %zu (|r| %.3f) minimum ERD %.1f %% over the movement window (within [-48, -32]); "
              "-50 %% step %s",
              comp, v, depth, exact ? "exact" : "NOT exact")};
}

Outcome criterion8(Context&) {
  double worst = 0;
  for (std::uint64_t draw = 0; draw < 25; ++draw) {
    std::mt19937_64 rng(1000 + draw);
    std::normal_distribution<double> g;
    auto m = mlp_init(18, 24, draw);
    Eigen::VectorXd theta = flatten(m);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += 0.3 * g(rng);
    unflatten(m, theta);
    Eigen::MatrixXd z(30, 18);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y(i) = (i % 3 == 0) ? 1.0 : 0.0;
    Eigen::VectorXd grad;
    mlp_loss_and_gradient(m, z, y, &grad);
    const double eps = 1e-5;
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(p) += eps;
      tm(p) -= eps;
      const double num = double((oracle::mlp_loss(tp, z, y, 24) - oracle::mlp_loss(tm, z, y, 24)) / (2 * eps));
      worst = std::max(worst, std::abs(num - grad(p)) / std::max({std::abs(num), std::abs(grad(p)), 1e-8}));
    }
  }
  return {worst < 1e-5, fmt("25 draws x 481 parameters, central differences eps = 1e-5: max relative error %.2e (< 1e-5)", worst)};
}

Outcome criterion9(Context& ctx) {
  const auto& pp = ctx.cfg.preprocess;
  const double fs = 200.0;
  auto tone = [&](double hz) {
    std::vector<double> x(4000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * hz * double(i) / fs + 0.3);
    return x;
  };
  const SosFilter notch(FilterSpec::notch(pp.notch_hz, fs, pp.notch_q));
  const SosFilter band(FilterSpec::bandpass(pp.band.lo_hz, pp.band.hi_hz, fs, pp.filter_order));
  const double a50 = oracle::sinusoid_amplitude(apply_filter_zero_phase(tone(50), notch), 1000, 3000, 50, fs);
  const double att = -20 * std::log10(a50);
  const double a10 = oracle::sinusoid_amplitude(apply_filter_zero_phase(tone(10), band), 1000, 3000, 10, fs);
  const auto dc = apply_filter_zero_phase(std::vector<double>(1400, 1.0), band);
  double dc_max = 0;
  for (double v : dc) dc_max = std::max(dc_max, std::abs(v));
  return {att >= 40.0 && a10 >= 0.95 && a10 <= 1.05 && dc_max < 1e-6,
          fmt("notch at 50 Hz %.1f dB (>= 40); bandpass 10 Hz gain %.4f (within 1 +/- 0.05); unit DC residual %.2e (< 1e-6)", att,
              a10, dc_max)};
}

Outcome criterion10(Context& ctx) {
  ctx.ensure_run1();
  const auto c = ctx.run_config("run2");
  fs::remove_all(ctx.work / "run2");
  run_all(c);
  const std::string a = slurp(StagePaths(ctx.run_config("run1")).report / "report.json");
  const std::string b = slurp(StagePaths(c).report / "report.json");
  return {!a.empty() && a == b, fmt("report.json %zu and %zu bytes, sha256 %s / %s", a.size(), b.size(),
                                    sha256_hex(a).substr(0, 16).c_str(), sha256_hex(b).substr(0, 16).c_str())};
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work, config = BCIHAND_EXAMPLE_CONFIG, report;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for pipeline runs")->required();
  app.add_option("--config", config, "pipeline configuration for criteria 1, 2, 3, 5 and 10");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--report", report, "also write the PASS/FAIL lines to this file");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  fs::create_directories(ctx.work);
  ctx.cfg = load_config(config);

  const std::vector<std::function<Outcome(Context&)>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                                criterion6, criterion7, criterion8, criterion9, criterion10};
  std::ofstream out;
  if (!report.empty()) out.open(report);
  int failed = 0;
  for (int i = 1; i <= 10; ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), i) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(i - 1)](ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    const std::string line = fmt("%s criterion %d: ", o.pass ? "PASS" : "FAIL", i) + o.detail + fmt(" [%.1f s]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (out) out << line << '\n' << std::flush;
  }
  return failed ? 1 : 0;
}
