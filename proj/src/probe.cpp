#include "eclip/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "eclip/error.hpp"
#include "eclip/train.hpp"

namespace eclip {

const std::array<std::array<double, 3>, kNumEmotions>& emotion_vad() {
  static const std::array<std::array<double, 3>, kNumEmotions> kTable = {{
      {0.10, 0.85, 0.70},  // anger
      {0.15, 0.55, 0.50},  // disgust
      {0.15, 0.80, 0.20},  // fear
      {0.90, 0.65, 0.65},  // happiness
      {0.15, 0.25, 0.25},  // sadness
      {0.60, 0.90, 0.45},  // surprise
      {0.50, 0.30, 0.50},  // neutral
  }};
  return kTable;
}

Matrix probe_targets(std::span<const ClipRecord> records, ProbeTask task) {
  Matrix out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw ValidationError("probe: clip '" + r.id + "' has no label");
    const auto y = static_cast<std::size_t>(*r.label);
    if (task == ProbeTask::kRegression) {
      const auto& vad = emotion_vad()[y];
      out.emplace_back(vad.begin(), vad.end());
    } else {
      std::vector<double> row(kNumEmotions, 0.0);
      row[y] = 1.0;
      out.push_back(std::move(row));
    }
  }
  return out;
}

namespace {

using Eigen::MatrixXd;

MatrixXd to_eigen(const Matrix& m, const std::vector<std::size_t>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < m.front().size(); ++k)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = m[rows[i]][k];
  return out;
}

Matrix to_rows(const MatrixXd& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = m(i, k);
  return out;
}

// Appends a bias column after standardizing with the given statistics.
MatrixXd design(const MatrixXd& x, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& scale) {
  MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = (x.rowwise() - mean).array().rowwise() / scale.array();
  out.col(x.cols()).setOnes();
  return out;
}

void softmax_rows(MatrixXd& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp();
    z.row(i) /= z.row(i).sum();
  }
}

// Full-batch gradient descent on mean cross-entropy + (l2/2)‖W‖² (bias row
// unpenalized) with step 1/L from the curvature bound.
MatrixXd fit_logistic(const MatrixXd& x, const MatrixXd& y, bool multiclass, const ProbeOptions& opt,
                      std::size_t& steps) {
  const double n = static_cast<double>(x.rows());
  const MatrixXd gram = x.transpose() * x / n;
  const double lmax = Eigen::SelfAdjointEigenSolver<MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double curvature = (multiclass ? 0.5 : 0.25) * lmax + opt.l2;
  const double lr = 1.0 / curvature;

  MatrixXd w = MatrixXd::Zero(x.cols(), y.cols());
  steps = 0;
  for (; steps < opt.max_steps; ++steps) {
    MatrixXd p = x * w;
    if (multiclass) {
      softmax_rows(p);
    } else {
      p = (1.0 + (-p.array()).exp()).inverse().matrix();
    }
    MatrixXd grad = x.transpose() * (p - y) / n;
    grad.topRows(w.rows() - 1) += opt.l2 * w.topRows(w.rows() - 1);
    if (grad.norm() < opt.tolerance) break;
    w -= lr * grad;
  }
  return w;
}

}  // namespace

ProbeResult fit_probe(const Matrix& features, const Matrix& targets, ProbeTask task, const ProbeOptions& opt) {
  if (features.size() != targets.size()) {
    throw ValidationError("probe: " + std::to_string(features.size()) + " feature rows vs " +
                          std::to_string(targets.size()) + " target rows");
  }
  if (features.size() < 2) throw ValidationError("probe: need at least two samples");
  if (!(opt.train_fraction > 0.0 && opt.train_fraction < 1.0)) {
    throw ValidationError("probe: train_fraction must lie in (0, 1)");
  }
  const std::size_t d = features.front().size(), k = targets.front().size();
  if (d == 0 || k == 0) throw ValidationError("probe: empty feature or target rows");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != d || targets[i].size() != k) throw ValidationError("probe: ragged input rows");
  }
  if (task != ProbeTask::kRegression) {
    for (const auto& row : targets) {
      double sum = 0.0;
      for (double v : row) {
        if (v != 0.0 && v != 1.0) throw ValidationError("probe: classification targets must be 0/1");
        sum += v;
      }
      if (task == ProbeTask::kMulticlass && sum != 1.0) {
        throw ValidationError("probe: multiclass targets must be one-hot");
      }
    }
  }

  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(order.size()))), 1,
      order.size() - 1);
  const std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const MatrixXd x_train_raw = to_eigen(features, train_idx);
  const Eigen::RowVectorXd mean = x_train_raw.colwise().mean();
  Eigen::RowVectorXd scale =
      ((x_train_raw.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n_train)).sqrt();
  for (Eigen::Index c = 0; c < scale.size(); ++c)
    if (scale(c) < 1e-12) scale(c) = 1.0;
  const MatrixXd x_train = design(x_train_raw, mean, scale);
  const MatrixXd x_test = design(to_eigen(features, test_idx), mean, scale);
  const MatrixXd y_train = to_eigen(targets, train_idx);

  ProbeResult result;
  result.train_size = train_idx.size();
  result.test_size = test_idx.size();
  MatrixXd scores;
  if (task == ProbeTask::kRegression) {
    const MatrixXd w = x_train.colPivHouseholderQr().solve(y_train);
    scores = x_test * w;
  } else {
    const bool multiclass = task == ProbeTask::kMulticlass;
    const MatrixXd w = fit_logistic(x_train, y_train, multiclass, opt, result.steps);
    scores = x_test * w;
    if (multiclass) {
      softmax_rows(scores);
    } else {
      scores = (1.0 + (-scores.array()).exp()).inverse().matrix();
    }
  }
  Matrix test_targets;
  for (auto i : test_idx) test_targets.push_back(targets[i]);
  result.report = compute_metrics(to_rows(scores), test_targets, task);
  return result;
}

ProbeResult linear_probe(const EmotionClipModel& model, std::span<const ClipRecord> records, ProbeTask task,
                         const ProbeOptions& options) {
  const Matrix targets = probe_targets(records, task);
  const Tensor v = extract_video_features(model, records, options.mask_threshold);
  Matrix features(v.rows(), std::vector<double>(v.cols()));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t c = 0; c < v.cols(); ++c) features[i][c] = v.at(i, c);
  return fit_probe(features, targets, task, options);
}

}  // namespace eclip
