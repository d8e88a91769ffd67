#pragma once

#include "bcihand/features.hpp"
#include "bcihand/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace bcihand {

struct ClassStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;     // unbiased, after shrinkage
  Eigen::MatrixXd cov_inv;
  std::size_t n = 0;
};

// Class mean and unbiased covariance of the rows of `x`, shrunk as
//   C <- (1 - lambda) C + lambda tr(C) / d I
// and inverted by Cholesky. Throws SingularCovariance when the shrunk
// covariance is not positive definite (always the case for n - 1 < d at
// lambda = 0) and InsufficientTrials for n < 2.
ClassStats class_stats(const Eigen::MatrixXd& x, double shrinkage);

// (x - mean)^T cov_inv (x - mean). Throws DimensionMismatch.
double mahalanobis_sq(const Eigen::VectorXd& x, const ClassStats& stats);

struct ConfusionCounts {
  std::size_t true_wrist = 0;    // T_W
  std::size_t false_wrist = 0;   // F_W: wrist trials predicted Finger
  std::size_t true_finger = 0;   // T_F
  std::size_t false_finger = 0;  // F_F: finger trials predicted Wrist
  bool operator==(const ConfusionCounts&) const = default;
};

// 1/2 (T_W / (T_W + F_W) + T_F / (T_F + F_F)). Throws EmptyClass.
double ssa(const ConfusionCounts& c);

ConfusionCounts confusion(const std::vector<ClassLabel>& truth, const std::vector<ClassLabel>& predicted);

struct LooResult {
  std::vector<ClassLabel> predictions;
  std::vector<double> d2_wrist;
  std::vector<double> d2_finger;
  ConfusionCounts confusion;
  double ssa = 0.0;
};

// Leave-one-out minimum-Mahalanobis classification. Trial i is removed from
// its own class's mean and covariance before both distances are taken; equal
// distances predict Wrist. The fast path computes the other class once and
// downdates the own class per fold (folds run in parallel).
// Throws MissingClass, SingularCovariance.
LooResult md_loo_classify(const FeatureMatrix& m, double shrinkage = 0.1);

namespace reference {
// Refits both classes from scratch for every fold.
LooResult md_loo_classify(const FeatureMatrix& m, double shrinkage = 0.1);
}

// Reruns Bhattacharyya selection of k columns inside every fold, on the
// trials that remain.
LooResult md_loo_classify_nested(const FeatureMatrix& full, std::size_t k, double shrinkage = 0.1);

// Drops trials whose squared Mahalanobis distance to their own class (all
// trials of the class, shrunk covariance) exceeds the chi-squared quantile
// with d degrees of freedom. Returns kept row indices.
std::vector<std::size_t> md_outlier_filter(const FeatureMatrix& m, double shrinkage = 0.1, double quantile = 0.999);

// 18-24-1 perceptron: tanh hidden layer, logistic output (P(Wrist)).
struct MlpModel {
  Eigen::MatrixXd W1; // hidden x inputs
  Eigen::VectorXd b1;
  Eigen::VectorXd w2; // hidden
  double b2 = 0.0;
  Eigen::VectorXd feature_mean;  // standardisation from the training rows
  Eigen::VectorXd feature_scale;
  std::uint64_t seed = 0;
  std::vector<double> training_log; // loss per epoch

  std::size_t inputs() const noexcept { return static_cast<std::size_t>(W1.cols()); }
  std::size_t hidden() const noexcept { return static_cast<std::size_t>(W1.rows()); }
  std::size_t parameter_count() const noexcept { return hidden() * inputs() + 2 * hidden() + 1; }

  // Logit for an already standardised input.
  double logit(const Eigen::VectorXd& z) const;
  // P(Wrist) for a raw feature vector.
  double predict_proba(const Eigen::VectorXd& raw) const;
};

// Glorot-uniform weights, zero biases, identity standardisation.
MlpModel mlp_init(std::size_t inputs, std::size_t hidden, std::uint64_t seed);

Eigen::VectorXd flatten(const MlpModel& m); // W1 row-major, b1, w2, b2
void unflatten(MlpModel& m, const Eigen::VectorXd& theta);

// Mean binary cross-entropy over the rows of z (standardised) against y
// (1 = Wrist), computed from logits; the gradient has flatten() layout.
double mlp_loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                             Eigen::VectorXd* grad);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per class, round(train_fraction * n_c) trials go to training. Throws
// MissingClass, InsufficientTrials when either side of a class would be empty.
Split stratified_split(const std::vector<ClassLabel>& labels, double train_fraction, std::uint64_t seed);

struct MlpParams {
  std::size_t hidden = 24;
  double learning_rate = 0.05;
  int epochs = 2000;
  int patience = 50;               // early stop window
  double min_improvement = 1e-7;   // over `patience` epochs
  double train_fraction = 0.7;
  std::uint64_t seed = 1;
};

struct MlpResult {
  MlpModel model;
  Split split;
  std::vector<ClassLabel> test_predictions; // Wrist iff P >= 0.5
  ConfusionCounts confusion;
  double ssa = 0.0;
  int epochs_run = 0;
};

// Full-batch gradient descent on the training split. Throws TrainingDiverged
// (naming the epoch) on a non-finite loss.
MlpResult mlp_train(const FeatureMatrix& m, const MlpParams& params);
// Same, on a caller-supplied split.
MlpResult mlp_train(const FeatureMatrix& m, const Split& split, const MlpParams& params);
MlpModel mlp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpParams& params, int* epochs_run = nullptr);

} // namespace bcihand
