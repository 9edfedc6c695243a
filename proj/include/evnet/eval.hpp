#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evnet/types.hpp"

namespace evnet {

inline constexpr std::size_t kDefaultRreK = 10;
inline constexpr std::size_t kDefaultFolds = 5;

// 1-based rank of every other point in the distance ordering from `i`
// (ties go to the lower index). ranks[j] is 0 for j == i.
std::vector<std::size_t> distance_ranks(const Matrix& x, std::size_t i);

// The k-neighborhood normalizer 1 / (M * sum_{k'=1..k} |M - 2k'| / k').
double rre_normalizer(std::size_t m, std::size_t k);

// Mean relative rank error between two row-aligned spaces. Each point's
// contribution is summed over its neighbors in rank order, then points are
// added in index order.
double rre(const Matrix& high, const Matrix& low, std::size_t k = kDefaultRreK, std::size_t threads = 1);

// One direction: neighborhoods taken in `from`, ranks compared against `to`.
double mean_rank_error(const Matrix& from, const Matrix& to, std::size_t k, std::size_t threads = 1);

// K x C table of co-occurrence counts; ids are compacted in ascending order.
Eigen::MatrixXd contingency(const std::vector<std::size_t>& assignments, const std::vector<int>& labels);

// Maximum-weight assignment of rows to columns (Hungarian method). Returns,
// for each row, its column or -1 when the table is wider than tall.
std::vector<long> max_weight_matching(const Eigen::MatrixXd& weights);

double clustering_accuracy(const std::vector<std::size_t>& assignments, const std::vector<int>& labels);

struct LinearClassifierOptions {
  std::size_t folds = kDefaultFolds;
  std::uint64_t seed = 0;
  double l2 = 1e-4;
  std::size_t iterations = 500;
  double lr = 0.1;
  double lr_decay = 0.01;  // lr_t = lr / (1 + lr_decay * t)
};

// Stratified k-fold mean held-out accuracy of a multinomial logistic
// regression on whitened features.
double linear_accuracy(const Matrix& x, const std::vector<int>& labels, const LinearClassifierOptions& opts = {});

// Fold ids for stratified cross-validation.
std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed);

// K-means with one cluster per class, scored by clustering_accuracy.
double kmeans_accuracy(const Matrix& x, const std::vector<int>& labels, std::uint64_t seed);

}  // namespace evnet
