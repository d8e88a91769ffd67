#pragma once

#include "bcihand/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bcihand {

// Covariances in this module use the 1/N convention.
struct WhiteningTransform {
  Eigen::VectorXd mean;        // per channel, uV
  Eigen::MatrixXd matrix;      // retained_dims x channels
  std::size_t retained_dims = 0;
  Eigen::VectorXd eigenvalues; // full spectrum, descending, non-negative
};

struct Whitened {
  Eigen::MatrixXd data; // retained_dims x samples
  WhiteningTransform transform;
};

// PCA sphering. Keeps the smallest k whose eigenvalues capture at least
// `retain` of the total variance (retain >= 1 keeps every dimension).
// Throws RankDeficient when k exceeds the numerical rank (eigenvalues below
// 1e-10 x the largest).
Whitened whiten(const Eigen::MatrixXd& data, double retain = 0.999);

struct InfomaxParams {
  double lr0 = 0.0;        // 0 selects lr_scale / ln(k)
  double lr_scale = 0.01;
  double anneal = 0.9;     // learning-rate factor when successive updates turn by more than anneal_deg
  double anneal_deg = 60.0;
  int max_iter = 512;      // full passes over the data
  double tol = 1e-4;       // stop when the per-pass ||dW||_F drops below this
  int max_restarts = 5;
  std::size_t block = 0;   // 0 selects ceil(min(5 ln N, 0.3 N))
  bool random_init = false;
  std::uint64_t seed = 1;
};

struct IterationLog {
  int iteration = 0;
  double learning_rate = 0.0;
  double delta_norm = 0.0;
};

struct InfomaxResult {
  Eigen::MatrixXd W;
  std::vector<IterationLog> log;
  int restarts = 0;
  bool converged = false;
};

// Natural-gradient infomax with the logistic nonlinearity:
//   W <- W + lr (I + (1 - 2 g(u)) u^T) W,  u = W x,  g(u) = 1 / (1 + e^-u)
// averaged over shuffled blocks of samples, one pass per iteration. A blown-up
// W (non-finite or |w| > 1e8) restarts from a seeded random orthonormal matrix
// with half the learning rate; after max_restarts the fit throws IcaDiverged.
// `whitened` must have identity covariance to within 1e-3.
InfomaxResult infomax(const Eigen::MatrixXd& whitened, const InfomaxParams& params);

struct UnmixingResult {
  WhiteningTransform whitening;
  Eigen::MatrixXd W;      // k x k
  Eigen::MatrixXd mixing; // channels x k, pseudo-inverse of W * whitening.matrix
  std::vector<IterationLog> iteration_log;
  std::uint64_t seed = 0;
  int restarts = 0;
  bool converged = false;

  std::size_t components() const noexcept { return static_cast<std::size_t>(W.rows()); }
  std::size_t channels() const noexcept { return static_cast<std::size_t>(whitening.matrix.cols()); }
  // Rows are the component spatial filters.
  Eigen::MatrixXd unmixing() const { return W * whitening.matrix; }
};

UnmixingResult fit_ica(const Eigen::MatrixXd& data, double retain, const InfomaxParams& params);

// Joins epochs side by side (channels x total samples).
Eigen::MatrixXd concatenate(const std::vector<TrialEpoch>& epochs);

// activations = W * whitening.matrix * (data - mean), per trial.
// Throws DimensionMismatch when an epoch's channel count differs.
std::vector<RowMatrix> activations(const std::vector<TrialEpoch>& epochs, const UnmixingResult& result);

namespace reference {
std::vector<RowMatrix> activations(const std::vector<TrialEpoch>& epochs, const UnmixingResult& result);
}

// Amari index of P = W_total * A_true, normalised so that a scaled
// permutation gives 0 and the 2x2 all-ones matrix gives 0.5:
//   (sum_i (sum_j |p_ij| / max_j |p_ij| - 1) + sum_j (sum_i |p_ij| / max_i |p_ij| - 1)) / (4 k (k - 1))
// Throws DimensionMismatch unless P is square, SingularMatrix if A_true lacks
// full column rank or P has an all-zero row or column.
double amari_index(const Eigen::MatrixXd& w_total, const Eigen::MatrixXd& a_true);

// Persistence: `<dir>/ica.json` (metadata, shapes, iteration log) plus
// `<dir>/ica.w.f32` holding, in order and row-major float32: mean (1 x C),
// whitening (k x C), W (k x k), mixing (C x k).
void save_unmixing(const std::filesystem::path& dir, const UnmixingResult& result);
UnmixingResult load_unmixing(const std::filesystem::path& dir);

} // namespace bcihand
