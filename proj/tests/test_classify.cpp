#include "bcihand/classify.hpp"
#include "bcihand/error.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>
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

// n_w Wrist rows then n_f Finger rows, N(0, 1) in d dims, Wrist shifted by `shift` along every axis / sqrt(d)
FeatureMatrix clusters(int n_w, int n_f, int d, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureMatrix m;
  m.values = RowMatrix(n_w + n_f, d);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = g(rng);
  for (int i = 0; i < n_w; ++i) m.values.row(i).array() += separation / std::sqrt(double(d));
  for (int i = 0; i < n_w + n_f; ++i) {
    m.labels.push_back(i < n_w ? ClassLabel::Wrist : ClassLabel::Finger);
    TrialMeta t;
    t.trial_index = i;
    t.movement = i < n_w ? Movement::WE : Movement::FE;
    m.meta.push_back(t);
  }
  m.columns.resize(static_cast<std::size_t>(d));
  return m;
}

ClassLabel other(ClassLabel c) { return c == ClassLabel::Wrist ? ClassLabel::Finger : ClassLabel::Wrist; }

void permute_labels(FeatureMatrix& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(m.labels.begin(), m.labels.end(), rng);
}

} // namespace

TEST_CASE("squared Mahalanobis distance examples") {
  ClassStats s;
  s.mean = Eigen::Vector2d(1.0, -2.0);
  s.cov = Eigen::Matrix2d::Identity();
  s.cov_inv = Eigen::Matrix2d::Identity();
  CHECK(mahalanobis_sq(s.mean, s) == 0.0);
  CHECK(mahalanobis_sq(s.mean + Eigen::Vector2d(3, 4), s) == doctest::Approx(25.0).epsilon(1e-12));

  s.cov = Eigen::Matrix2d{{2, 0}, {0, 0.5}};
  s.cov_inv = Eigen::Matrix2d{{0.5, 0}, {0, 2}}; // inverse by hand
  CHECK(mahalanobis_sq(s.mean + Eigen::Vector2d(1, 1), s) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(kind_of([&] { mahalanobis_sq(Eigen::Vector3d::Zero(), s); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("class statistics") {
  const FeatureMatrix m = clusters(30, 0, 4, 0, 1);
  const Eigen::MatrixXd x = m.values;
  const double lambda = 0.25;
  const auto st = class_stats(x, lambda);
  CHECK(st.n == 30);
  const Eigen::VectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov = c.transpose() * c / 29.0;
  const Eigen::MatrixXd shrunk = (1 - lambda) * cov + lambda * cov.trace() / 4.0 * Eigen::MatrixXd::Identity(4, 4);
  CHECK((st.mean - mu).norm() < 1e-14);
  CHECK((st.cov - shrunk).norm() < 1e-12);
  CHECK((st.cov_inv * st.cov - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-10);
  CHECK((st.cov_inv - st.cov_inv.transpose()).norm() < 1e-12);

  CHECK(kind_of([&] { class_stats(x.topRows(3), 0.0); }) == ErrorKind::SingularCovariance);
  CHECK(kind_of([&] { class_stats(x.topRows(1), 0.1); }) == ErrorKind::InsufficientTrials);
  CHECK_NOTHROW(class_stats(x.topRows(3), 0.1));
}

TEST_CASE("SSA examples") {
  CHECK(ssa({8, 2, 6, 4}) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(ssa({40, 0, 60, 0}) == 1.0);
  CHECK(ssa({40, 0, 0, 60}) == 0.5); // everything Wrist
  CHECK(ssa({0, 40, 60, 0}) == 0.5); // everything Finger
  // swapping class names with their counts
  CHECK(ssa({6, 4, 8, 2}) == ssa({8, 2, 6, 4}));
  CHECK(kind_of([] { ssa({0, 0, 3, 1}); }) == ErrorKind::EmptyClass);

  const std::vector<ClassLabel> truth{ClassLabel::Wrist, ClassLabel::Wrist, ClassLabel::Finger, ClassLabel::Finger,
                                      ClassLabel::Finger};
  const std::vector<ClassLabel> pred{ClassLabel::Wrist, ClassLabel::Finger, ClassLabel::Wrist, ClassLabel::Finger,
                                     ClassLabel::Finger};
  CHECK(confusion(truth, pred) == ConfusionCounts{1, 1, 2, 1});
}

TEST_CASE("incremental LOO equals a brute-force refit") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (double lambda : {0.0, 0.1}) {
      const FeatureMatrix m = clusters(40, 60, 18, 2.0, seed);
      const auto fast = md_loo_classify(m, lambda);
      const auto slow = reference::md_loo_classify(m, lambda);
      CHECK(fast.predictions == slow.predictions);
      CHECK(fast.confusion == slow.confusion);
      for (std::size_t i = 0; i < m.trials(); ++i) {
        CHECK(fast.d2_wrist[i] == doctest::Approx(slow.d2_wrist[i]).epsilon(1e-8));
        CHECK(fast.d2_finger[i] == doctest::Approx(slow.d2_finger[i]).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("a trial's own label never reaches its prediction") {
  const FeatureMatrix m = clusters(40, 60, 18, 1.0, 7);
  const auto base = md_loo_classify(m, 0.1);
  for (std::size_t i = 0; i < m.trials(); ++i) {
    FeatureMatrix f = m;
    f.labels[i] = other(f.labels[i]);
    CHECK(md_loo_classify(f, 0.1).predictions[i] == base.predictions[i]);
  }
}

TEST_CASE("far-separated clusters are classified perfectly") {
  const FeatureMatrix m = clusters(40, 60, 18, 10.0, 11);
  CHECK(md_loo_classify(m, 0.1).ssa == 1.0);
  CHECK(md_loo_classify(m, 0.0).ssa == 1.0);
}

TEST_CASE("permuted labels give chance SSA") {
  std::vector<double> ssas;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FeatureMatrix m = clusters(40, 60, 18, 10.0, 500 + seed);
    permute_labels(m, seed);
    ssas.push_back(md_loo_classify(m, 0.1).ssa);
  }
  const double mean = std::accumulate(ssas.begin(), ssas.end(), 0.0) / double(ssas.size());
  const auto [lo, hi] = std::minmax_element(ssas.begin(), ssas.end());
  MESSAGE("permuted-label MD SSA: mean " << mean << ", range [" << *lo << ", " << *hi << "]");
  CHECK(std::abs(mean - 0.5) <= 0.03);
  CHECK(*lo >= 0.40);
  CHECK(*hi <= 0.60);
}

TEST_CASE("MD decisions are affine invariant without shrinkage") {
  const FeatureMatrix m = clusters(40, 60, 18, 1.5, 21);
  std::mt19937_64 rng(22);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(18, 18);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  a += 5.0 * Eigen::MatrixXd::Identity(18, 18);
  Eigen::RowVectorXd b(18);
  for (Eigen::Index i = 0; i < 18; ++i) b(i) = 100.0 * g(rng);
  FeatureMatrix t = m;
  t.values = (m.values * a.transpose()).rowwise() + b;
  const auto r0 = md_loo_classify(m, 0.0), r1 = md_loo_classify(t, 0.0);
  CHECK(r0.predictions == r1.predictions);
  for (std::size_t i = 0; i < m.trials(); ++i) CHECK(r1.d2_wrist[i] == doctest::Approx(r0.d2_wrist[i]).epsilon(1e-6));
}

TEST_CASE("LOO errors") {
  FeatureMatrix m = clusters(40, 60, 18, 1.0, 3);
  FeatureMatrix one = m;
  for (auto& l : one.labels) l = ClassLabel::Finger;
  CHECK(kind_of([&] { md_loo_classify(one, 0.1); }) == ErrorKind::MissingClass);
  FeatureMatrix small = clusters(10, 60, 18, 1.0, 3);
  CHECK(kind_of([&] { md_loo_classify(small, 0.0); }) == ErrorKind::SingularCovariance);
  CHECK_NOTHROW(md_loo_classify(small, 0.1));
}

TEST_CASE("nested selection over every column reduces to plain LOO") {
  const FeatureMatrix m = clusters(40, 60, 10, 1.5, 5);
  const auto plain = md_loo_classify(m, 0.1);
  const auto nested = md_loo_classify_nested(m, 10, 0.1);
  CHECK(plain.predictions == nested.predictions);
}

TEST_CASE("outlier filter drops a planted outlier") {
  FeatureMatrix m = clusters(40, 60, 18, 1.0, 8);
  m.values.row(45).setConstant(40.0);
  const auto keep = md_outlier_filter(m, 0.1, 0.999);
  CHECK(std::find(keep.begin(), keep.end(), std::size_t{45}) == keep.end());
  CHECK(keep.size() >= 95);
}

TEST_CASE("stratified split") {
  std::vector<ClassLabel> y;
  for (int i = 0; i < 100; ++i) y.push_back(i % 5 < 2 ? ClassLabel::Wrist : ClassLabel::Finger);
  const auto s = stratified_split(y, 0.7, 4);
  int tw = 0, tf = 0;
  for (auto i : s.train) (y[i] == ClassLabel::Wrist ? tw : tf)++;
  CHECK(tw == 28);
  CHECK(tf == 42);
  CHECK(s.train.size() + s.test.size() == 100);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK(stratified_split(y, 0.7, 4).train == s.train);
  CHECK(stratified_split(y, 0.7, 5).train != s.train);
  CHECK(kind_of([&] { stratified_split(std::vector<ClassLabel>(10, ClassLabel::Wrist), 0.7, 1); }) ==
        ErrorKind::MissingClass);
}

TEST_CASE("MLP shape") {
  const auto m = mlp_init(18, 24, 1);
  // 18x24 weights + 24 hidden biases + 24 output weights + 1 output bias
  CHECK(m.parameter_count() == 18 * 24 + 24 + 24 + 1);
  CHECK(flatten(m).size() == 481);
  auto n = m;
  Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(481, -1, 1);
  unflatten(n, theta);
  CHECK(flatten(n) == theta);
  CHECK(n.W1(0, 1) == theta(1)); // row-major
}

TEST_CASE("MLP gradient matches central differences") {
  double worst = 0;
  for (std::uint64_t draw = 0; draw < 25; ++draw) {
    std::mt19937_64 rng(100 + draw);
    std::normal_distribution<double> g;
    auto m = mlp_init(18, 24, draw);
    Eigen::VectorXd theta = flatten(m);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += 0.3 * g(rng);
    unflatten(m, theta);
    Eigen::MatrixXd z(30, 18);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y(i) = i % 3 == 0 ? 1.0 : 0.0;

    Eigen::VectorXd grad;
    const double loss = mlp_loss_and_gradient(m, z, y, &grad);
    CHECK(loss == doctest::Approx(double(oracle::mlp_loss(theta, z, y, 24))).epsilon(1e-12));
    const double eps = 1e-5;
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(p) += eps;
      tm(p) -= eps;
      const double num = double((oracle::mlp_loss(tp, z, y, 24) - oracle::mlp_loss(tm, z, y, 24)) / (2 * eps));
      const double rel = std::abs(num - grad(p)) / std::max({std::abs(num), std::abs(grad(p)), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  MESSAGE("max relative gradient error " << worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("MLP separates planted data") {
  FeatureMatrix m = clusters(40, 60, 18, 0.0, 13);
  for (int i = 0; i < 40; ++i) m.values(i, 0) += 5.0; // 5 sd margin on one feature
  MlpParams p;
  p.seed = 3;
  const auto r = mlp_train(m, p);
  CHECK(r.ssa >= 0.95);
  CHECK(r.split.test.size() == 30);

  // determinism
  const auto r2 = mlp_train(m, p);
  CHECK(flatten(r.model) == flatten(r2.model));
  CHECK(r.test_predictions == r2.test_predictions);
}

TEST_CASE("MLP on all-zero inputs is a constant predictor") {
  FeatureMatrix m = clusters(40, 60, 18, 0.0, 14);
  m.values.setZero();
  MlpParams p;
  const auto r = mlp_train(m, p);
  CHECK(r.ssa == 0.5);
  const double p0 = r.model.predict_proba(Eigen::VectorXd::Zero(18));
  // zero input reaches the output only through the biases
  const double bias_logit = r.model.w2.dot(r.model.b1.array().tanh().matrix()) + r.model.b2;
  CHECK(p0 == doctest::Approx(1.0 / (1.0 + std::exp(-bias_logit))).epsilon(1e-12));
  // a fresh model has zero hidden biases: logistic of the output bias
  CHECK(mlp_init(18, 24, 7).predict_proba(Eigen::VectorXd::Zero(18)) == 0.5);
  for (auto i : r.split.test) CHECK(r.model.predict_proba(m.values.row(static_cast<Eigen::Index>(i)).transpose()) == p0);
}

TEST_CASE("MLP divergence is reported") {
  FeatureMatrix m = clusters(40, 60, 18, 2.0, 15);
  MlpParams p;
  p.learning_rate = std::numeric_limits<double>::max();
  try {
    mlp_train(m, p);
    FAIL("expected TrainingDiverged");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TrainingDiverged);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
