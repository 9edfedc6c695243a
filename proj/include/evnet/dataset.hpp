#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evnet/types.hpp"

namespace evnet {

enum class NormMode { kMinMax, kZScore };

std::string to_string(NormMode mode);
NormMode parse_norm_mode(const std::string& text);

// Per-feature affine map x -> (x - offset) / scale. A zero scale marks a
// constant feature, which maps to 0.
struct NormalizationStats {
  NormMode mode = NormMode::kMinMax;
  std::vector<double> offset;
  std::vector<double> scale;
};

using NeighborLists = std::vector<std::vector<std::size_t>>;

struct Dataset {
  Matrix features;  // M x n
  std::optional<std::vector<int>> labels;
  std::vector<std::string> feature_names;
  std::string label_name;  // column the labels were read from, if any
  NeighborLists neighbors;
  std::optional<NeighborLists> supervised_neighbors;
  std::size_t knn_k = 0;
  std::optional<NormalizationStats> normalization;
  std::vector<std::size_t> noise_features;  // synthetic fixtures only

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(features.cols()); }
  bool has_labels() const { return labels.has_value(); }
  bool has_knn() const { return !neighbors.empty(); }
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Reads a headered CSV. Non-label cells must parse as real numbers. Labels
// that are all integers are kept as-is; otherwise distinct strings are
// numbered in order of first appearance.
Dataset load_csv(const std::string& path, const std::optional<std::string>& label_column = {});
Dataset parse_csv(const std::string& text, const std::optional<std::string>& label_column = {},
                  const std::string& source = "<memory>");

// Writes features (and a trailing label column when present).
void save_csv(const Dataset& d, const std::string& path);
std::string to_csv(const Dataset& d);

// Fits statistics on d and applies them.
Dataset normalize(const Dataset& d, NormMode mode);
NormalizationStats fit_normalization(const Matrix& x, NormMode mode);
Matrix apply_normalization(const Matrix& x, const NormalizationStats& stats);
Dataset apply_normalization(const Dataset& d, const NormalizationStats& stats);

// Exact brute-force kNN under Euclidean distance, ties to the lower index.
// With supervised=true the lists are additionally computed inside each label
// group; those may be shorter than k.
Dataset build_knn(const Dataset& d, std::size_t k, bool supervised, std::size_t threads = 1);
NeighborLists knn_lists(const Matrix& x, std::size_t k, std::size_t threads = 1);

// Deterministic partition into (train, test). kNN graphs are not carried over.
std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

SplitIndices split_indices(std::size_t rows, const SplitSpec& spec);

// Keeps only the given rows (in the given order); drops kNN graphs.
Dataset select_rows(const Dataset& d, const std::vector<std::size_t>& rows);

enum class SyntheticKind { kGaussians, kSwissRoll, kNoisyGaussians };

struct SyntheticParams {
  SyntheticKind kind = SyntheticKind::kGaussians;
  std::size_t clusters = 3;   // k
  std::size_t per_cluster = 100;
  std::size_t dim = 5;
  double separation = 10.0;   // minimum center distance, in units of sigma
  double sigma = 1.0;
  std::size_t noise_features = 0;
  std::size_t duplicate_columns = 0;  // appended copies of the first columns
  double roll_noise = 0.05;
};

// Parses "gaussians:k=3,per=100,dim=5,sep=10". Keys: k, per, dim, sep, sigma,
// noise, dup (and noise for swiss_roll meaning jitter).
SyntheticParams parse_synthetic_spec(const std::string& spec);
std::string to_string(const SyntheticParams& p);

Dataset make_synthetic(const SyntheticParams& params, std::uint64_t seed);

}  // namespace evnet
