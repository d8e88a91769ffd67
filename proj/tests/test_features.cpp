#include "bcihand/features.hpp"
#include "bcihand/error.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <numbers>
#include <random>

using namespace bcihand;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

RowMatrix sinusoid_trial(std::size_t comps, double hz, double fs = 200) {
  RowMatrix x(static_cast<Eigen::Index>(comps), 1400);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (Eigen::Index i = 0; i < 1400; ++i) x(c, i) = std::sin(2 * std::numbers::pi * hz * double(i) / fs + 0.7 * double(c));
  return x;
}

// 40 Wrist + 60 Finger rows of N(0, 1) noise
FeatureMatrix noise_matrix(Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureMatrix m;
  m.values = RowMatrix(100, cols);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = g(rng);
  for (int i = 0; i < 100; ++i) m.labels.push_back(i < 40 ? ClassLabel::Wrist : ClassLabel::Finger);
  m.meta.resize(100);
  m.columns.resize(static_cast<std::size_t>(cols));
  return m;
}

// direct-DFT band powers of one window: demean, Hann, zero-pad, sum bins in [lo, hi)
std::vector<double> oracle_bands(std::vector<double> x, double fs, const std::vector<Band>& bands, std::size_t nfft) {
  const double m = oracle::mean(x);
  const auto w = oracle::hann(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - m) * w[i];
  const auto p = oracle::dft_power(x, nfft);
  std::vector<double> out;
  for (const auto& b : bands) {
    double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double f = double(k) * fs / double(nfft);
      if (f >= b.lo_hz && f < b.hi_hz) s += p[k];
    }
    out.push_back(s);
  }
  return out;
}

} // namespace

TEST_CASE("grid geometry") {
  const FeatureGrid g;
  CHECK(g.window_count() == 28);
  CHECK(g.bands.size() == 7);
  CHECK(g.features_per_component() == 196);
  for (std::size_t b = 0; b < 7; ++b) {
    CHECK(g.bands[b].lo_hz == 8.0 + 3.0 * double(b));
    CHECK(g.bands[b].hi_hz - g.bands[b].lo_hz == 3.0);
  }
  const auto w = sliding_windows(g, 200);
  REQUIRE(w.size() == 28);
  CHECK(w[0].t_start_s == doctest::Approx(1.0));
  CHECK(w[0].t_end_s == doctest::Approx(1.3));
  CHECK(w[0].start == 400);
  CHECK(w[0].end == 460);
  CHECK(w[27].t_start_s == doctest::Approx(3.7));
  CHECK(w[27].t_end_s == doctest::Approx(4.0));
  CHECK(w[27].start == 940);
  CHECK(w[27].end == 1000);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i].end - w[i].start == 60);
    CHECK(w[i].start == 400 + 20 * i);
  }
  // a rate where 300 ms is not integral rounds half up
  const auto odd = sliding_windows(g, 205);
  CHECK(odd[0].end - odd[0].start == 62); // 61.5
}

TEST_CASE("feature vector length is 196 per component") {
  const FeatureGrid g;
  for (std::size_t k : {8u, 10u, 12u}) {
    std::vector<std::size_t> sel(k);
    for (std::size_t i = 0; i < k; ++i) sel[i] = i;
    const auto f = band_power_features(RowMatrix::Zero(12, 1400), sel, g, 200);
    CHECK(f.size() == 196 * k);
    for (double v : f) CHECK(v == 0.0);
    CHECK(feature_columns(sel, g).size() == 196 * k);
  }
  CHECK(feature_columns({0, 1, 2, 3, 4, 5, 6, 7}, g).size() == 1568);
  CHECK(feature_columns({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, g).size() == 2352);

  const auto cols = feature_columns({4, 2}, g);
  CHECK(cols[0].component == 4);
  CHECK(cols[7].window == 1);
  CHECK(cols[7].band == 0);
  CHECK(cols[196].component == 2);
  CHECK(cols[195].window == 27);
  CHECK(cols[195].band == 6);

  CHECK(kind_of([&] { band_power_features(RowMatrix::Zero(2, 700), {0}, g, 200); }) == ErrorKind::WindowOutOfBounds);
  CHECK(kind_of([&] { band_power_features(RowMatrix::Zero(2, 1400), {}, g, 200); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { band_power_features(RowMatrix::Zero(2, 1400), {5}, g, 200); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("band powers match a direct DFT") {
  const FeatureGrid g;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  RowMatrix x(3, 1400);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng) + 2.0;
  const std::vector<std::size_t> sel{2, 0};
  const auto f = band_power_features(x, sel, g, 200);
  const auto wins = sliding_windows(g, 200);
  std::size_t col = 0;
  for (auto c : sel) {
    for (const auto& w : wins) {
      std::vector<double> seg(x.row(static_cast<Eigen::Index>(c)).data() + w.start,
                              x.row(static_cast<Eigen::Index>(c)).data() + w.end);
      const auto want = oracle_bands(seg, 200, g.bands, 256);
      for (double v : want) CHECK(f[col++] == doctest::Approx(v).epsilon(1e-10));
    }
  }
}

TEST_CASE("Parseval bound on the band sum") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  const BandPowerExtractor ex(60, 200, FeatureGrid::default_bands(), 256);
  std::vector<double> out(7);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> w(60);
    for (auto& v : w) v = n(rng) * (1 + rep % 5);
    ex.compute(w.data(), out.data());
    const double m = oracle::mean(w);
    double e = 0;
    for (double v : w) e += (v - m) * (v - m);
    double s = 0;
    for (double v : out) s += v;
    CHECK(s <= 128.0 * e);
    CHECK(s >= 0.0);
  }
}

TEST_CASE("10 Hz tone leakage equals the direct-DFT value") {
  // The estimator's own leakage for a 10 Hz tone in a 60-sample Hann window:
  // ~69 % of the 8-29 Hz power lands in [8, 11).
  const FeatureGrid g;
  const auto f = band_power_features(sinusoid_trial(1, 10), {0}, g, 200);
  const auto wins = sliding_windows(g, 200);
  const RowMatrix tone = sinusoid_trial(1, 10);
  for (std::size_t w = 0; w < wins.size(); ++w) {
    std::vector<double> seg(tone.data() + wins[w].start, tone.data() + wins[w].end);
    const auto want = oracle_bands(seg, 200, g.bands, 256);
    double tot = 0, got_tot = 0;
    for (std::size_t b = 0; b < 7; ++b) tot += want[b], got_tot += f[w * 7 + b];
    const double share = f[w * 7] / got_tot;
    CHECK(share == doctest::Approx(want[0] / tot).epsilon(1e-9));
    CHECK(share == doctest::Approx(0.69).epsilon(0.03));
  }
}

TEST_CASE("Bhattacharyya distance examples") {
  CHECK(bhattacharyya_gaussian(0, 1, 2, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(bhattacharyya_gaussian(0, 1, 0, 4) == doctest::Approx(0.5 * std::log(5.0 / 4.0)).epsilon(1e-14));
  CHECK(0.5 * std::log(5.0 / 4.0) == doctest::Approx(0.1116).epsilon(1e-3));
  CHECK(bhattacharyya_gaussian(3, 2, 3, 2) == 0.0);
  // numerical integral of sqrt(p q)
  for (auto [m1, v1, m2, v2] : {std::array{0.0, 1.0, 2.0, 1.0}, std::array{0.0, 1.0, 0.0, 4.0},
                                std::array{1.0, 0.5, -0.7, 2.5}}) {
    CHECK(bhattacharyya_gaussian(m1, v1, m2, v2) == doctest::Approx(oracle::bd_numeric(m1, v1, m2, v2)).epsilon(1e-6));
  }
}

TEST_CASE("Bhattacharyya from samples") {
  std::vector<double> x{1, 2, 3, 4, 2, 4, 6, 8, 10};
  std::vector<ClassLabel> y{ClassLabel::Wrist, ClassLabel::Wrist, ClassLabel::Wrist, ClassLabel::Wrist,
                            ClassLabel::Finger, ClassLabel::Finger, ClassLabel::Finger, ClassLabel::Finger, ClassLabel::Finger};
  // class stats by hand: wrist mean 2.5 var 5/3; finger mean 6 var 10
  const double want = bhattacharyya_gaussian(2.5, 5.0 / 3.0, 6.0, 10.0);
  CHECK(bhattacharyya(x, y) == doctest::Approx(want).epsilon(1e-14));

  // symmetric in class order, invariant under affine maps
  std::vector<ClassLabel> flipped;
  for (auto l : y) flipped.push_back(l == ClassLabel::Wrist ? ClassLabel::Finger : ClassLabel::Wrist);
  CHECK(bhattacharyya(x, flipped) == doctest::Approx(want).epsilon(1e-12));
  for (auto [a, b] : {std::pair{3.0, 1.0}, std::pair{-0.01, 250.0}, std::pair{1e4, -3.0}}) {
    std::vector<double> z;
    for (double v : x) z.push_back(a * v + b);
    CHECK(bhattacharyya(z, y) == doctest::Approx(want).epsilon(1e-9));
  }

  std::vector<double> c(9, 4.2);
  CHECK(bhattacharyya(c, y) == 0.0);
  // zero variance in one class is floored, not an error
  std::vector<double> z{1, 1, 1, 1, 2, 4, 6, 8, 10};
  CHECK(std::isfinite(bhattacharyya(z, y)));
  CHECK(bhattacharyya(z, y) > bhattacharyya(x, y));

  std::vector<ClassLabel> one(9, ClassLabel::Finger);
  CHECK(kind_of([&] { bhattacharyya(x, one); }) == ErrorKind::MissingClass);
  std::vector<ClassLabel> lone = one;
  lone[0] = ClassLabel::Wrist;
  CHECK(kind_of([&] { bhattacharyya(x, lone); }) == ErrorKind::InsufficientTrials);
}

TEST_CASE("top-k selection and ties") {
  const std::vector<double> s{0.1, 0.5, 0.5, 0.2, 0.9, 0.5};
  const auto r = select_top_k(s, 4);
  CHECK(r.selected_columns == std::vector<std::size_t>{4, 1, 2, 5});

  // a constant column never outranks a perfectly separated one
  FeatureMatrix m = noise_matrix(3, 4);
  m.values.col(0).setConstant(1.0);
  for (int i = 0; i < 100; ++i) m.values(i, 2) = i < 40 ? 0.0 + 0.01 * i : 10.0 + 0.01 * i;
  const auto sel = select_top_k(m, 1);
  CHECK(sel.selected_columns == std::vector<std::size_t>{2});
  CHECK(sel.bd_scores[0] == 0.0);

  FeatureMatrix single = m;
  for (auto& l : single.labels) l = ClassLabel::Wrist;
  CHECK(kind_of([&] { select_top_k(single, 1); }) == ErrorKind::MissingClass);
}

TEST_CASE("18 planted columns among 1568 noise columns are found") {
  int good = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    FeatureMatrix m = noise_matrix(1568 + 18, 1000 + static_cast<std::uint64_t>(seed));
    // planted columns sit at a seeded random set of positions, shifted by 1.5 sd for Wrist
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::vector<std::size_t> cols(m.features());
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
    std::shuffle(cols.begin(), cols.end(), rng);
    cols.resize(18);
    for (auto c : cols)
      for (int i = 0; i < 40; ++i) m.values(i, static_cast<Eigen::Index>(c)) += 1.5;
    const auto sel = select_top_k(m, 18);
    int hit = 0;
    for (auto c : sel.selected_columns) hit += std::find(cols.begin(), cols.end(), c) != cols.end();
    good += hit >= 16;
  }
  MESSAGE("seeds with >= 16 of 18 planted columns: " << good << " / " << seeds);
  CHECK(good >= 95);
}

TEST_CASE("selection is invariant to row permutation") {
  FeatureMatrix m = noise_matrix(200, 7);
  for (int i = 0; i < 40; ++i) m.values(i, 13) += 1.0;
  std::vector<int> perm(100);
  for (int i = 0; i < 100; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  FeatureMatrix p = m;
  for (int i = 0; i < 100; ++i) {
    p.values.row(i) = m.values.row(perm[static_cast<std::size_t>(i)]);
    p.labels[static_cast<std::size_t>(i)] = m.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(select_top_k(m, 18).selected_columns == select_top_k(p, 18).selected_columns);
}

TEST_CASE("parallel kernels equal the serial references") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::vector<RowMatrix> trials(12, RowMatrix(9, 1400));
  std::vector<TrialMeta> meta(12);
  for (std::size_t t = 0; t < trials.size(); ++t) {
    for (Eigen::Index i = 0; i < trials[t].size(); ++i) trials[t].data()[i] = n(rng);
    meta[t].trial_index = int(t);
    meta[t].movement = t % 3 == 0 ? Movement::WE : Movement::FF;
  }
  const std::vector<std::size_t> sel{8, 0, 3};
  const FeatureGrid g;
  const auto a = extract_feature_matrix(trials, meta, sel, g, 200);
  const auto b = reference::extract_feature_matrix(trials, meta, sel, g, 200);
  CHECK(a.features() == 588);
  CHECK((a.values.array() == b.values.array()).all());
  CHECK(a.labels == b.labels);
  CHECK(a.labels[0] == ClassLabel::Wrist);
  CHECK(a.labels[1] == ClassLabel::Finger);
  CHECK(bd_scores(a) == reference::bd_scores(a));

  FeatureMatrix l = a;
  log_transform(l);
  CHECK(l.values(0, 0) == doctest::Approx(std::log(a.values(0, 0))));
  const auto r = restrict_columns(a, {5, 1});
  CHECK(r.features() == 2);
  CHECK(r.values(3, 0) == a.values(3, 5));
  CHECK(r.columns[1].window == a.columns[1].window);
}
