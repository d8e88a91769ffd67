#include "bcihand/ica.hpp"

#include "bcihand/dataset.hpp"
#include "bcihand/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

namespace bcihand {

namespace fs = std::filesystem;

Whitened whiten(const Eigen::MatrixXd& data, double retain) {
  const auto channels = data.rows();
  const auto n = data.cols();
  if (!(retain > 0.0 && retain <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "retained variance fraction must lie in (0, 1]");
  }
  if (n <= channels) {
    throw Error(ErrorKind::InvalidArgument, "whitening needs more samples than channels");
  }
  if (!data.allFinite()) throw Error(ErrorKind::InvalidArgument, "data contains non-finite values");

  Whitened out;
  WhiteningTransform& t = out.transform;
  t.mean = data.rowwise().mean();
  const Eigen::MatrixXd centered = data.colwise() - t.mean;
  const Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::SingularMatrix, "covariance eigendecomposition failed");
  const Eigen::VectorXd ev_asc = eig.eigenvalues();
  const Eigen::MatrixXd vec_asc = eig.eigenvectors();

  t.eigenvalues.resize(channels);
  Eigen::MatrixXd vecs(channels, channels);
  for (Eigen::Index i = 0; i < channels; ++i) {
    const Eigen::Index src = channels - 1 - i;
    t.eigenvalues(i) = std::max(0.0, ev_asc(src));
    Eigen::VectorXd v = vec_asc.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    vecs.col(i) = v;
  }

  const double total = t.eigenvalues.sum();
  const double top = t.eigenvalues(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < channels; ++i) {
    if (t.eigenvalues(i) > 1e-10 * top) ++rank;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::RankDeficient, "data has zero variance (numerical rank 0)");

  Eigen::Index k = channels;
  if (retain < 1.0) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < channels; ++i) {
      acc += t.eigenvalues(i);
      if (acc >= retain * total) {
        k = i + 1;
        break;
      }
    }
  }
  if (k > rank) {
    throw Error(ErrorKind::RankDeficient, "numerical rank " + std::to_string(rank) + " below the " +
                                              std::to_string(k) + " dimensions needed for the retain target");
  }

  t.retained_dims = static_cast<std::size_t>(k);
  t.matrix.resize(k, channels);
  for (Eigen::Index i = 0; i < k; ++i) {
    t.matrix.row(i) = vecs.col(i).transpose() / std::sqrt(t.eigenvalues(i));
  }
  out.data = t.matrix * centered;
  return out;
}

namespace {

Eigen::MatrixXd random_orthonormal(Eigen::Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
}

bool blown_up(const Eigen::MatrixXd& w) { return !w.allFinite() || w.cwiseAbs().maxCoeff() > 1e8; }

} // namespace

InfomaxResult infomax(const Eigen::MatrixXd& x, const InfomaxParams& params) {
  const Eigen::Index k = x.rows();
  const Eigen::Index n = x.cols();
  if (k < 1 || n < 2) throw Error(ErrorKind::InvalidArgument, "infomax needs at least one row and two samples");
  {
    const Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::MatrixXd c = x.colwise() - mean;
    const Eigen::MatrixXd cov = c * c.transpose() / static_cast<double>(n);
    const double dev = (cov - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
    if (!(dev <= 1e-3)) {
      throw Error(ErrorKind::InvalidArgument,
                  "infomax input is not white (max |cov - I| = " + std::to_string(dev) + ")");
    }
  }

  const std::size_t block =
      params.block > 0
          ? std::min<std::size_t>(params.block, static_cast<std::size_t>(n))
          : static_cast<std::size_t>(std::ceil(std::min(5.0 * std::log(static_cast<double>(n)), 0.3 * static_cast<double>(n))));
  const double lr0 = params.lr0 > 0.0 ? params.lr0
                                      : (k >= 2 ? params.lr_scale / std::log(static_cast<double>(k)) : params.lr_scale);
  const double cos_limit = std::cos(params.anneal_deg * std::numbers::pi / 180.0);

  std::mt19937_64 rng(params.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  Eigen::MatrixXd xb(k, static_cast<Eigen::Index>(block));
  Eigen::MatrixXd u, y, g(k, k);

  InfomaxResult result;
  for (int attempt = 0; attempt <= params.max_restarts; ++attempt) {
    Eigen::MatrixXd w = (attempt == 0 && !params.random_init) ? eye : random_orthonormal(k, rng);
    double lr = lr0 / std::pow(2.0, attempt);
    Eigen::MatrixXd prev_delta;
    bool diverged = false;
    result.log.clear();

    for (int iter = 1; iter <= params.max_iter; ++iter) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
      std::shuffle(order.begin(), order.end(), rng);
      const Eigen::MatrixXd w_old = w;

      for (std::size_t start = 0; start < order.size(); start += block) {
        const auto len = static_cast<Eigen::Index>(std::min(block, order.size() - start));
        for (Eigen::Index j = 0; j < len; ++j) xb.col(j) = x.col(order[start + static_cast<std::size_t>(j)]);
        u.noalias() = w * xb.leftCols(len);
        // 1 - 2 logistic(u); Eigen vectorises exp but not tanh for doubles
        y = 1.0 - 2.0 / (1.0 + (-u.array()).exp());
        g.noalias() = y * u.transpose();
        g /= static_cast<double>(len);
        g += eye;
        w += lr * (g * w);
      }

      if (blown_up(w)) {
        diverged = true;
        break;
      }
      const Eigen::MatrixXd delta = w - w_old;
      const double norm = delta.norm();
      if (prev_delta.size() > 0) {
        const double denom = norm * prev_delta.norm();
        if (denom > 0.0 && (delta.cwiseProduct(prev_delta).sum() / denom) < cos_limit) lr *= params.anneal;
      }
      result.log.push_back({iter, lr, norm});
      prev_delta = delta;
      if (norm < params.tol) {
        result.converged = true;
        break;
      }
    }
    if (!diverged) {
      result.W = std::move(w);
      result.restarts = attempt;
      return result;
    }
  }
  throw Error(ErrorKind::IcaDiverged, "unmixing matrix diverged after " + std::to_string(params.max_restarts) +
                                          " learning-rate restarts");
}

UnmixingResult fit_ica(const Eigen::MatrixXd& data, double retain, const InfomaxParams& params) {
  Whitened wh = whiten(data, retain);
  InfomaxResult im = infomax(wh.data, params);
  UnmixingResult r;
  r.whitening = std::move(wh.transform);
  r.W = std::move(im.W);
  r.iteration_log = std::move(im.log);
  r.seed = params.seed;
  r.restarts = im.restarts;
  r.converged = im.converged;
  r.mixing = r.unmixing().completeOrthogonalDecomposition().pseudoInverse();
  return r;
}

Eigen::MatrixXd concatenate(const std::vector<TrialEpoch>& epochs) {
  if (epochs.empty()) return {};
  Eigen::Index total = 0;
  const Eigen::Index channels = epochs.front().data.rows();
  for (const auto& e : epochs) {
    if (e.data.rows() != channels) throw Error(ErrorKind::DimensionMismatch, "epochs differ in channel count");
    total += e.data.cols();
  }
  Eigen::MatrixXd out(channels, total);
  Eigen::Index at = 0;
  for (const auto& e : epochs) {
    out.middleCols(at, e.data.cols()) = e.data;
    at += e.data.cols();
  }
  return out;
}

namespace {

RowMatrix project(const TrialEpoch& e, const Eigen::MatrixXd& filters, const Eigen::VectorXd& mean) {
  if (static_cast<Eigen::Index>(e.channels()) != filters.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "epoch has " + std::to_string(e.channels()) +
                                                  " channels, unmixing expects " + std::to_string(filters.cols()));
  }
  RowMatrix centered = e.data.colwise() - mean;
  return filters * centered;
}

} // namespace

std::vector<RowMatrix> activations(const std::vector<TrialEpoch>& epochs, const UnmixingResult& result) {
  const Eigen::MatrixXd filters = result.unmixing();
  for (const auto& e : epochs) {
    if (static_cast<Eigen::Index>(e.channels()) != filters.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "epoch has " + std::to_string(e.channels()) +
                                                    " channels, unmixing expects " + std::to_string(filters.cols()));
    }
  }
  std::vector<RowMatrix> out(epochs.size());
  const auto n = static_cast<std::ptrdiff_t>(epochs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out[idx] = project(epochs[idx], filters, result.whitening.mean);
  }
  return out;
}

namespace reference {

std::vector<RowMatrix> activations(const std::vector<TrialEpoch>& epochs, const UnmixingResult& result) {
  const Eigen::MatrixXd filters = result.unmixing();
  std::vector<RowMatrix> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(project(e, filters, result.whitening.mean));
  return out;
}

} // namespace reference

double amari_index(const Eigen::MatrixXd& w_total, const Eigen::MatrixXd& a_true) {
  if (w_total.cols() != a_true.rows()) throw Error(ErrorKind::DimensionMismatch, "W_total * A_true undefined");
  const Eigen::MatrixXd p = w_total * a_true;
  if (p.rows() != p.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "W_total * A_true is " + std::to_string(p.rows()) + "x" +
                                                  std::to_string(p.cols()) + ", expected square");
  }
  const Eigen::Index k = p.rows();
  if (!p.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite entries in W_total * A_true");
  if (k < 2) return 0.0;
  // the true mixing (channels x sources, possibly tall) needs full column
  // rank; an estimate may be rank-deficient (the all-ones P is the textbook
  // worst case) as long as no row or column of P vanishes
  if (Eigen::FullPivLU<Eigen::MatrixXd>(a_true).rank() < a_true.cols()) {
    throw Error(ErrorKind::SingularMatrix, "A_true is singular");
  }
  const Eigen::MatrixXd a = p.cwiseAbs();
  if ((a.rowwise().maxCoeff().array() == 0.0).any() || (a.colwise().maxCoeff().array() == 0.0).any()) {
    throw Error(ErrorKind::SingularMatrix, "W_total * A_true has a zero row or column");
  }
  double rows = 0.0, cols = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) rows += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
  for (Eigen::Index j = 0; j < k; ++j) cols += a.col(j).sum() / a.col(j).maxCoeff() - 1.0;
  return (rows + cols) / (4.0 * static_cast<double>(k) * static_cast<double>(k - 1));
}

void save_unmixing(const fs::path& dir, const UnmixingResult& r) {
  fs::create_directories(dir);
  const auto c = static_cast<Eigen::Index>(r.channels());
  const auto k = static_cast<Eigen::Index>(r.components());

  std::ofstream bin(dir / "ica.w.f32", std::ios::binary | std::ios::trunc);
  if (!bin) throw Error(ErrorKind::Io, "cannot write " + (dir / "ica.w.f32").string());
  write_f32(bin, RowMatrix(r.whitening.mean.transpose()));
  write_f32(bin, RowMatrix(r.whitening.matrix));
  write_f32(bin, RowMatrix(r.W));
  write_f32(bin, RowMatrix(r.mixing));

  nlohmann::json j;
  j["format"] = "bci-hand-ica";
  j["version"] = 1;
  j["channels"] = c;
  j["components"] = k;
  j["seed"] = r.seed;
  j["restarts"] = r.restarts;
  j["converged"] = r.converged;
  j["eigenvalues"] = std::vector<double>(r.whitening.eigenvalues.data(),
                                         r.whitening.eigenvalues.data() + r.whitening.eigenvalues.size());
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.iteration_log) log.push_back({e.iteration, e.learning_rate, e.delta_norm});
  j["iteration_log"] = std::move(log);
  j["matrices"] = {{"file", "ica.w.f32"},
                   {"dtype", "float32-le"},
                   {"layout",
                    {{{"name", "mean"}, {"rows", 1}, {"cols", c}},
                     {{"name", "whitening"}, {"rows", k}, {"cols", c}},
                     {{"name", "unmixing"}, {"rows", k}, {"cols", k}},
                     {{"name", "mixing"}, {"rows", c}, {"cols", k}}}}};
  std::ofstream out(dir / "ica.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "ica.json").string());
  out << j.dump(1) << '\n';
}

UnmixingResult load_unmixing(const fs::path& dir) {
  std::ifstream in(dir / "ica.json");
  if (!in) throw Error(ErrorKind::Io, "cannot open " + (dir / "ica.json").string());
  try {
    nlohmann::json j;
    in >> j;
    const auto c = j.at("channels").get<std::size_t>();
    const auto k = j.at("components").get<std::size_t>();
    UnmixingResult r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.restarts = j.at("restarts").get<int>();
    r.converged = j.at("converged").get<bool>();
    const auto ev = j.at("eigenvalues").get<std::vector<double>>();
    r.whitening.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    for (const auto& e : j.at("iteration_log")) {
      r.iteration_log.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
    }
    const fs::path bin_path = dir / j.at("matrices").at("file").get<std::string>();
    const auto expected = static_cast<std::uintmax_t>(4 * (c + k * c + k * k + c * k));
    if (fs::file_size(bin_path) != expected) throw Error(ErrorKind::Io, bin_path.string() + ": unexpected size");
    std::ifstream bin(bin_path, std::ios::binary);
    r.whitening.mean = read_f32(bin, 1, c).transpose();
    r.whitening.matrix = read_f32(bin, k, c);
    r.whitening.retained_dims = k;
    r.W = read_f32(bin, k, k);
    r.mixing = read_f32(bin, c, k);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, (dir / "ica.json").string() + ": " + e.what());
  }
}

} // namespace bcihand
