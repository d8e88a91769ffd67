#include "bcihand/classify.hpp"

#include "bcihand/error.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace bcihand {

namespace {

ClassStats finish_stats(Eigen::VectorXd mean, Eigen::MatrixXd cov, std::size_t n, double shrinkage) {
  const auto d = cov.rows();
  if (shrinkage < 0.0 || shrinkage > 1.0) throw Error(ErrorKind::InvalidArgument, "shrinkage must lie in [0, 1]");
  if (shrinkage == 0.0 && n - 1 < static_cast<std::size_t>(d)) {
    throw Error(ErrorKind::SingularCovariance, std::to_string(n) + " trials cannot support a " + std::to_string(d) +
                                                   "-dimensional covariance without shrinkage");
  }
  if (shrinkage > 0.0) {
    const double mu = cov.trace() / static_cast<double>(d);
    cov *= (1.0 - shrinkage);
    cov.diagonal().array() += shrinkage * mu;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || !cov.allFinite()) {
    throw Error(ErrorKind::SingularCovariance, "class covariance is not positive definite");
  }
  ClassStats s;
  s.cov_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  s.cov_inv = 0.5 * (s.cov_inv + s.cov_inv.transpose()).eval();
  s.cov = std::move(cov);
  s.mean = std::move(mean);
  s.n = n;
  return s;
}

Eigen::MatrixXd rows_of(const FeatureMatrix& m, ClassLabel c, std::vector<std::size_t>* index = nullptr) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (index) index->assign(rows.begin(), rows.end());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.values.row(rows[r]);
  return out;
}

void check_classes(const FeatureMatrix& m) {
  if (m.labels.size() != m.trials()) throw Error(ErrorKind::DimensionMismatch, "labels and rows differ in count");
  const auto w = std::count(m.labels.begin(), m.labels.end(), ClassLabel::Wrist);
  if (w == 0 || w == static_cast<std::ptrdiff_t>(m.labels.size())) {
    throw Error(ErrorKind::MissingClass, "classification needs both classes");
  }
}

ClassLabel decide(double d2_wrist, double d2_finger) {
  return d2_wrist <= d2_finger ? ClassLabel::Wrist : ClassLabel::Finger;
}

void summarise(LooResult& r, const FeatureMatrix& m) {
  r.confusion = confusion(m.labels, r.predictions);
  r.ssa = ssa(r.confusion);
}

Eigen::MatrixXd without_row(const Eigen::MatrixXd& x, Eigen::Index skip) {
  Eigen::MatrixXd out(x.rows() - 1, x.cols());
  for (Eigen::Index r = 0, o = 0; r < x.rows(); ++r) {
    if (r != skip) out.row(o++) = x.row(r);
  }
  return out;
}

} // namespace

ClassStats class_stats(const Eigen::MatrixXd& x, double shrinkage) {
  const auto n = x.rows();
  if (n < 2) throw Error(ErrorKind::InsufficientTrials, "class statistics need at least two trials");
  Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n - 1);
  return finish_stats(std::move(mean), std::move(cov), static_cast<std::size_t>(n), shrinkage);
}

double mahalanobis_sq(const Eigen::VectorXd& x, const ClassStats& stats) {
  if (x.size() != stats.mean.size() || stats.cov_inv.rows() != x.size() || stats.cov_inv.cols() != x.size()) {
    throw Error(ErrorKind::DimensionMismatch, "feature vector and class statistics differ in dimension");
  }
  const Eigen::VectorXd d = x - stats.mean;
  return d.dot(stats.cov_inv * d);
}

double ssa(const ConfusionCounts& c) {
  const auto wrist = c.true_wrist + c.false_wrist;
  const auto finger = c.true_finger + c.false_finger;
  if (wrist == 0 || finger == 0) throw Error(ErrorKind::EmptyClass, "SSA needs trials of both classes");
  return 0.5 * (static_cast<double>(c.true_wrist) / static_cast<double>(wrist) +
                static_cast<double>(c.true_finger) / static_cast<double>(finger));
}

ConfusionCounts confusion(const std::vector<ClassLabel>& truth, const std::vector<ClassLabel>& predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorKind::DimensionMismatch, "truth and predictions differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ClassLabel::Wrist) {
      (predicted[i] == ClassLabel::Wrist ? c.true_wrist : c.false_wrist)++;
    } else {
      (predicted[i] == ClassLabel::Finger ? c.true_finger : c.false_finger)++;
    }
  }
  return c;
}

LooResult md_loo_classify(const FeatureMatrix& m, double shrinkage) {
  check_classes(m);
  std::vector<std::size_t> idx[2];
  const Eigen::MatrixXd x[2] = {rows_of(m, ClassLabel::Wrist, &idx[0]), rows_of(m, ClassLabel::Finger, &idx[1])};
  const ClassStats full[2] = {class_stats(x[0], shrinkage), class_stats(x[1], shrinkage)};

  // raw scatter per class, downdated per fold
  Eigen::MatrixXd scatter[2];
  for (int c = 0; c < 2; ++c) {
    const Eigen::MatrixXd centred = x[c].rowwise() - full[c].mean.transpose();
    scatter[c] = centred.transpose() * centred;
  }

  const auto n = static_cast<std::ptrdiff_t>(m.trials());
  LooResult r;
  r.predictions.resize(m.trials());
  r.d2_wrist.resize(m.trials());
  r.d2_finger.resize(m.trials());
  std::vector<int> failed(m.trials(), 0);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int own = m.labels[ui] == ClassLabel::Wrist ? 0 : 1;
    const Eigen::VectorXd xi = m.values.row(i).transpose();
    const auto nc = static_cast<double>(x[own].rows());
    if (nc < 3) {
      failed[ui] = 1;
      continue;
    }
    const Eigen::VectorXd dev = xi - full[own].mean;
    Eigen::VectorXd mean = (nc * full[own].mean - xi) / (nc - 1.0);
    Eigen::MatrixXd cov = (scatter[own] - (nc / (nc - 1.0)) * dev * dev.transpose()) / (nc - 2.0);
    try {
      const ClassStats loo = finish_stats(std::move(mean), std::move(cov), static_cast<std::size_t>(nc) - 1, shrinkage);
      const double d_own = mahalanobis_sq(xi, loo);
      const double d_other = mahalanobis_sq(xi, full[1 - own]);
      r.d2_wrist[ui] = own == 0 ? d_own : d_other;
      r.d2_finger[ui] = own == 0 ? d_other : d_own;
      r.predictions[ui] = decide(r.d2_wrist[ui], r.d2_finger[ui]);
    } catch (const Error&) {
      failed[ui] = 1;
    }
  }
  if (std::find(failed.begin(), failed.end(), 1) != failed.end()) {
    throw Error(ErrorKind::SingularCovariance, "a leave-one-out class covariance is singular");
  }
  summarise(r, m);
  return r;
}

namespace reference {

LooResult md_loo_classify(const FeatureMatrix& m, double shrinkage) {
  check_classes(m);
  LooResult r;
  const Eigen::MatrixXd all = m.values;
  for (std::size_t i = 0; i < m.trials(); ++i) {
    FeatureMatrix rest;
    rest.values = without_row(all, static_cast<Eigen::Index>(i));
    rest.labels = m.labels;
    rest.labels.erase(rest.labels.begin() + static_cast<std::ptrdiff_t>(i));
    const ClassStats w = class_stats(rows_of(rest, ClassLabel::Wrist), shrinkage);
    const ClassStats f = class_stats(rows_of(rest, ClassLabel::Finger), shrinkage);
    const Eigen::VectorXd xi = all.row(static_cast<Eigen::Index>(i)).transpose();
    r.d2_wrist.push_back(mahalanobis_sq(xi, w));
    r.d2_finger.push_back(mahalanobis_sq(xi, f));
    r.predictions.push_back(decide(r.d2_wrist.back(), r.d2_finger.back()));
  }
  summarise(r, m);
  return r;
}

} // namespace reference

LooResult md_loo_classify_nested(const FeatureMatrix& full, std::size_t k, double shrinkage) {
  check_classes(full);
  const auto n = static_cast<std::ptrdiff_t>(full.trials());
  LooResult r;
  r.predictions.resize(full.trials());
  r.d2_wrist.resize(full.trials());
  r.d2_finger.resize(full.trials());
  std::vector<int> failed(full.trials(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      FeatureMatrix rest;
      rest.values = without_row(full.values, i);
      rest.labels = full.labels;
      rest.labels.erase(rest.labels.begin() + i);
      const auto sel = select_top_k(reference::bd_scores(rest), k).selected_columns;
      const FeatureMatrix sub = restrict_columns(rest, sel);
      const ClassStats w = class_stats(rows_of(sub, ClassLabel::Wrist), shrinkage);
      const ClassStats f = class_stats(rows_of(sub, ClassLabel::Finger), shrinkage);
      Eigen::VectorXd xi(static_cast<Eigen::Index>(sel.size()));
      for (std::size_t j = 0; j < sel.size(); ++j) xi(static_cast<Eigen::Index>(j)) = full.values(i, static_cast<Eigen::Index>(sel[j]));
      r.d2_wrist[ui] = mahalanobis_sq(xi, w);
      r.d2_finger[ui] = mahalanobis_sq(xi, f);
      r.predictions[ui] = decide(r.d2_wrist[ui], r.d2_finger[ui]);
    } catch (const Error&) {
      failed[ui] = 1;
    }
  }
  if (std::find(failed.begin(), failed.end(), 1) != failed.end()) {
    throw Error(ErrorKind::SingularCovariance, "a nested leave-one-out fold failed");
  }
  summarise(r, full);
  return r;
}

std::vector<std::size_t> md_outlier_filter(const FeatureMatrix& m, double shrinkage, double quantile) {
  check_classes(m);
  const double limit = boost::math::quantile(boost::math::chi_squared(static_cast<double>(m.features())), quantile);
  const ClassStats stats[2] = {class_stats(rows_of(m, ClassLabel::Wrist), shrinkage),
                               class_stats(rows_of(m, ClassLabel::Finger), shrinkage)};
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < m.trials(); ++i) {
    const int c = m.labels[i] == ClassLabel::Wrist ? 0 : 1;
    if (mahalanobis_sq(m.values.row(static_cast<Eigen::Index>(i)).transpose(), stats[c]) <= limit) kept.push_back(i);
  }
  return kept;
}

// --- MLP ---

namespace {

double log1p_exp(double s) { return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))); }
double logistic(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

} // namespace

double MlpModel::logit(const Eigen::VectorXd& z) const {
  return w2.dot((W1 * z + b1).array().tanh().matrix()) + b2;
}

double MlpModel::predict_proba(const Eigen::VectorXd& raw) const {
  const Eigen::VectorXd z = ((raw - feature_mean).array() / feature_scale.array()).matrix();
  return logistic(logit(z));
}

MlpModel mlp_init(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Eigen::Index>(inputs);
  const auto h = static_cast<Eigen::Index>(hidden);
  MlpModel m;
  m.seed = seed;
  m.W1.resize(h, d);
  m.w2.resize(h);
  std::uniform_real_distribution<double> u1(-1.0, 1.0);
  const double l1 = std::sqrt(6.0 / static_cast<double>(inputs + hidden));
  const double l2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < d; ++c) m.W1(r, c) = l1 * u1(rng);
  for (Eigen::Index r = 0; r < h; ++r) m.w2(r) = l2 * u1(rng);
  m.b1 = Eigen::VectorXd::Zero(h);
  m.b2 = 0.0;
  m.feature_mean = Eigen::VectorXd::Zero(d);
  m.feature_scale = Eigen::VectorXd::Ones(d);
  return m;
}

Eigen::VectorXd flatten(const MlpModel& m) {
  const auto h = m.W1.rows(), d = m.W1.cols();
  Eigen::VectorXd t(h * d + 2 * h + 1);
  Eigen::Index p = 0;
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < d; ++c) t(p++) = m.W1(r, c);
  t.segment(p, h) = m.b1;
  p += h;
  t.segment(p, h) = m.w2;
  p += h;
  t(p) = m.b2;
  return t;
}

void unflatten(MlpModel& m, const Eigen::VectorXd& theta) {
  const auto h = m.W1.rows(), d = m.W1.cols();
  if (theta.size() != h * d + 2 * h + 1) throw Error(ErrorKind::DimensionMismatch, "parameter vector has the wrong length");
  Eigen::Index p = 0;
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < d; ++c) m.W1(r, c) = theta(p++);
  m.b1 = theta.segment(p, h);
  p += h;
  m.w2 = theta.segment(p, h);
  p += h;
  m.b2 = theta(p);
}

double mlp_loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                             Eigen::VectorXd* grad) {
  if (z.cols() != m.W1.cols() || z.rows() != y.size()) throw Error(ErrorKind::DimensionMismatch, "MLP input shape");
  const auto n = static_cast<double>(z.rows());
  const Eigen::MatrixXd a = (z * m.W1.transpose()).rowwise() + m.b1.transpose();
  const Eigen::MatrixXd hid = a.array().tanh().matrix();
  const Eigen::VectorXd s = (hid * m.w2).array() + m.b2;
  double loss = 0.0;
  Eigen::VectorXd delta(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    loss += log1p_exp(s(i)) - y(i) * s(i);
    delta(i) = (logistic(s(i)) - y(i)) / n;
  }
  loss /= n;
  if (grad) {
    const auto h = m.W1.rows(), d = m.W1.cols();
    const Eigen::MatrixXd da = ((delta * m.w2.transpose()).array() * (1.0 - hid.array().square())).matrix();
    const Eigen::MatrixXd gW1 = da.transpose() * z;
    grad->resize(h * d + 2 * h + 1);
    Eigen::Index p = 0;
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < d; ++c) (*grad)(p++) = gW1(r, c);
    grad->segment(p, h) = da.colwise().sum().transpose();
    p += h;
    grad->segment(p, h) = hid.transpose() * delta;
    p += h;
    (*grad)(p) = delta.sum();
  }
  return loss;
}

Split stratified_split(const std::vector<ClassLabel>& labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorKind::InvalidArgument, "train fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  Split s;
  for (ClassLabel c : {ClassLabel::Wrist, ClassLabel::Finger}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) idx.push_back(i);
    }
    if (idx.empty()) throw Error(ErrorKind::MissingClass, std::string("no ") + std::string(to_string(c)) + " trials");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto ntrain = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size())));
    if (ntrain == 0 || ntrain == idx.size()) {
      throw Error(ErrorKind::InsufficientTrials, std::string(to_string(c)) + " class too small to split");
    }
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

MlpModel mlp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpParams& params, int* epochs_run) {
  MlpModel m = mlp_init(static_cast<std::size_t>(x.cols()), params.hidden, params.seed);
  m.feature_mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - m.feature_mean.transpose();
  m.feature_scale = (centred.array().square().colwise().sum() / static_cast<double>(std::max<Eigen::Index>(x.rows(), 1)))
                        .sqrt()
                        .transpose();
  for (Eigen::Index j = 0; j < m.feature_scale.size(); ++j) {
    if (!(m.feature_scale(j) >= 1e-12)) m.feature_scale(j) = 1.0;
  }
  const Eigen::MatrixXd z = (centred.array().rowwise() / m.feature_scale.transpose().array()).matrix();

  Eigen::VectorXd theta = flatten(m), grad;
  int epoch = 0;
  for (; epoch < params.epochs; ++epoch) {
    const double loss = mlp_loss_and_gradient(m, z, y, &grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw Error(ErrorKind::TrainingDiverged, "non-finite loss at epoch " + std::to_string(epoch));
    }
    m.training_log.push_back(loss);
    const auto e = m.training_log.size();
    if (params.patience > 0 && e > static_cast<std::size_t>(params.patience) &&
        m.training_log[e - 1 - static_cast<std::size_t>(params.patience)] - loss < params.min_improvement) {
      ++epoch;
      break;
    }
    theta -= params.learning_rate * grad;
    unflatten(m, theta);
  }
  if (epochs_run) *epochs_run = epoch;
  return m;
}

MlpResult mlp_train(const FeatureMatrix& fm, const MlpParams& params) {
  if (fm.labels.size() != fm.trials()) throw Error(ErrorKind::DimensionMismatch, "labels and rows differ in count");
  return mlp_train(fm, stratified_split(fm.labels, params.train_fraction, params.seed), params);
}

MlpResult mlp_train(const FeatureMatrix& fm, const Split& split, const MlpParams& params) {
  if (fm.labels.size() != fm.trials()) throw Error(ErrorKind::DimensionMismatch, "labels and rows differ in count");
  MlpResult r;
  r.split = split;
  const auto d = fm.values.cols();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(r.split.train.size()), d);
  Eigen::VectorXd y(x.rows());
  for (std::size_t i = 0; i < r.split.train.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(r.split.train[i]);
    x.row(static_cast<Eigen::Index>(i)) = fm.values.row(row);
    y(static_cast<Eigen::Index>(i)) = fm.labels[r.split.train[i]] == ClassLabel::Wrist ? 1.0 : 0.0;
  }
  // the split seed and the weight seed are the same stream origin; offset the latter
  MlpParams p = params;
  p.seed = params.seed ^ 0x9e3779b97f4a7c15ULL;
  r.model = mlp_fit(x, y, p, &r.epochs_run);
  std::vector<ClassLabel> truth;
  for (auto i : r.split.test) {
    const double prob = r.model.predict_proba(fm.values.row(static_cast<Eigen::Index>(i)).transpose());
    r.test_predictions.push_back(prob >= 0.5 ? ClassLabel::Wrist : ClassLabel::Finger);
    truth.push_back(fm.labels[i]);
  }
  r.confusion = confusion(truth, r.test_predictions);
  r.ssa = ssa(r.confusion);
  return r;
}

} // namespace bcihand
