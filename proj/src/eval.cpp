#include "evnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "evnet/explain.hpp"
#include "evnet/parallel.hpp"
#include "evnet/random.hpp"

namespace evnet {

std::vector<std::size_t> distance_ranks(const Matrix& x, std::size_t i) {
  const auto m = static_cast<std::size_t>(x.rows());
  require(i < m, "distance_ranks: row out of range");
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    if (j == i) continue;
    order.emplace_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm(), j);
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> ranks(m, 0);
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r].second] = r + 1;
  return ranks;
}

double rre_normalizer(std::size_t m, std::size_t k) {
  double s = 0.0;
  for (std::size_t kp = 1; kp <= k; ++kp) {
    s += std::abs(static_cast<double>(m) - 2.0 * static_cast<double>(kp)) / static_cast<double>(kp);
  }
  return 1.0 / (static_cast<double>(m) * s);
}

double mean_rank_error(const Matrix& from, const Matrix& to, std::size_t k, std::size_t threads) {
  const auto m = static_cast<std::size_t>(from.rows());
  require(to.rows() == from.rows(), "rre: spaces have different row counts");
  require(k >= 1, "rre: k must be >= 1");
  require(m > 2 * k, "rre: need M > 2k (M=" + std::to_string(m) + ", k=" + std::to_string(k) + ")");
  std::vector<double> per_point(m, 0.0);
  parallel_for(m, threads, [&](std::size_t i) {
    const auto r_from = distance_ranks(from, i);
    const auto r_to = distance_ranks(to, i);
    std::vector<std::size_t> hood(m - 1);
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) hood[r_from[j] - 1] = j;
    }
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const std::size_t j = hood[p];
      const double a = static_cast<double>(r_from[j]);
      const double b = static_cast<double>(r_to[j]);
      s += std::abs(a - b) / a;
    }
    per_point[i] = s;
  });
  double total = 0.0;
  for (double v : per_point) total += v;
  return rre_normalizer(m, k) * total;
}

double rre(const Matrix& high, const Matrix& low, std::size_t k, std::size_t threads) {
  return (mean_rank_error(high, low, k, threads) + mean_rank_error(low, high, k, threads)) / 2.0;
}

Eigen::MatrixXd contingency(const std::vector<std::size_t>& assignments, const std::vector<int>& labels) {
  require(assignments.size() == labels.size(), "clustering: assignments (" + std::to_string(assignments.size()) +
                                                   ") and labels (" + std::to_string(labels.size()) +
                                                   ") differ in length");
  std::map<std::size_t, Eigen::Index> rows;
  std::map<int, Eigen::Index> cols;
  for (auto a : assignments) rows.emplace(a, 0);
  for (auto l : labels) cols.emplace(l, 0);
  Eigen::Index r = 0;
  for (auto& [key, idx] : rows) idx = r++;
  Eigen::Index c = 0;
  for (auto& [key, idx] : cols) idx = c++;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(r, c);
  for (std::size_t i = 0; i < labels.size(); ++i) t(rows[assignments[i]], cols[labels[i]]) += 1.0;
  return t;
}

std::vector<long> max_weight_matching(const Eigen::MatrixXd& weights) {
  const auto rows = static_cast<std::size_t>(weights.rows());
  const auto cols = static_cast<std::size_t>(weights.cols());
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  const double top = weights.size() > 0 ? weights.maxCoeff() : 0.0;
  // Square cost matrix; padding cells cost as much as a zero-weight pair.
  auto cost = [&](std::size_t i, std::size_t j) {
    const double w = (i < rows && j < cols) ? weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) : 0.0;
    return top - w;
  };
  // Shortest augmenting path form with potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<long> match(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols) match[i - 1] = static_cast<long>(j - 1);
  }
  return match;
}

double clustering_accuracy(const std::vector<std::size_t>& assignments, const std::vector<int>& labels) {
  require(!labels.empty(), "clustering: no points");
  const Eigen::MatrixXd t = contingency(assignments, labels);
  const auto match = max_weight_matching(t);
  double hit = 0.0;
  for (std::size_t r = 0; r < match.size(); ++r) {
    if (match[r] >= 0) hit += t(static_cast<Eigen::Index>(r), match[r]);
  }
  return hit / static_cast<double>(labels.size());
}

std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, "folds must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  require(by_class.size() >= 2, "linear classifier needs at least 2 classes");
  std::vector<std::size_t> fold(labels.size(), 0);
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < folds) {
      fail(ErrorCode::kInvalidArgument, "class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                            " members, fewer than " + std::to_string(folds) + " folds");
    }
    auto rng = make_stream({tag(StreamTag::kFolds), seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(label))});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    // Rotating the start keeps fold sizes balanced across classes.
    for (std::size_t p = 0; p < idx.size(); ++p) fold[idx[p]] = (p + offset) % folds;
    offset += idx.size();
  }
  return fold;
}

namespace {

struct Whitener {
  RowVector mean;
  Matrix transform;  // d x d, symmetric inverse square root of the covariance

  static Whitener fit(const Matrix& x) {
    Whitener w;
    w.mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - w.mean;
    Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
    const double ridge = 1e-12 * std::max(cov.trace(), 1e-300);
    cov.diagonal().array() += ridge;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector inv = eig.eigenvalues().cwiseMax(ridge).cwiseSqrt().cwiseInverse();
    w.transform = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    return w;
  }

  Matrix apply(const Matrix& x) const { return (x.rowwise() - mean) * transform; }
};

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double top = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - top).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

double linear_accuracy(const Matrix& x, const std::vector<int>& labels, const LinearClassifierOptions& opts) {
  const auto m = static_cast<std::size_t>(x.rows());
  require(labels.size() == m, "linear classifier: labels (" + std::to_string(labels.size()) + ") and rows (" +
                                  std::to_string(m) + ") differ");
  if (!x.allFinite()) fail(ErrorCode::kNumeric, "linear classifier: non-finite features");
  const auto fold = stratified_folds(labels, opts.folds, opts.seed);
  std::map<int, Eigen::Index> class_id;
  for (int l : labels) class_id.emplace(l, 0);
  Eigen::Index nc = 0;
  for (auto& [l, id] : class_id) id = nc++;

  double acc_sum = 0.0;
  for (std::size_t f = 0; f < opts.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < m; ++i) (fold[i] == f ? test : train).push_back(i);
    Matrix xtr(static_cast<Eigen::Index>(train.size()), x.cols());
    Matrix ytr = Matrix::Zero(static_cast<Eigen::Index>(train.size()), nc);
    for (std::size_t r = 0; r < train.size(); ++r) {
      xtr.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(train[r]));
      ytr(static_cast<Eigen::Index>(r), class_id[labels[train[r]]]) = 1.0;
    }
    const Whitener white = Whitener::fit(xtr);
    const Matrix a = white.apply(xtr);
    Matrix w = Matrix::Zero(x.cols(), nc);
    RowVector b = RowVector::Zero(nc);
    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (std::size_t t = 0; t < opts.iterations; ++t) {
      Matrix logits = a * w;
      logits.rowwise() += b;
      const Matrix resid = softmax_rows(logits) - ytr;
      const Matrix gw = a.transpose() * resid * inv_n + opts.l2 * w;
      const RowVector gb = resid.colwise().sum() * inv_n;
      const double lr = opts.lr / (1.0 + opts.lr_decay * static_cast<double>(t));
      w -= lr * gw;
      b -= lr * gb;
    }
    std::size_t hit = 0;
    for (std::size_t i : test) {
      const Matrix z = white.apply(x.row(static_cast<Eigen::Index>(i)));
      RowVector logits = z * w + b;
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      if (arg == class_id[labels[i]]) ++hit;
    }
    acc_sum += static_cast<double>(hit) / static_cast<double>(test.size());
  }
  return acc_sum / static_cast<double>(opts.folds);
}

double kmeans_accuracy(const Matrix& x, const std::vector<int>& labels, std::uint64_t seed) {
  std::vector<int> distinct = labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const ClusterModel model = kmeans_fit(x, distinct.size(), seed);
  return clustering_accuracy(model.assignments, labels);
}

}  // namespace evnet
