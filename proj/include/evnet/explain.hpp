#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evnet/augment.hpp"
#include "evnet/dataset.hpp"
#include "evnet/network.hpp"
#include "evnet/types.hpp"

namespace evnet {

inline constexpr std::size_t kDefaultRepeats = 8;
inline constexpr double kDenominatorGuard = 1e-8;

struct ClusterModel {
  Matrix centers;  // K x d
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  std::size_t iterations = 0;

  std::size_t k() const { return static_cast<std::size_t>(centers.rows()); }
  std::vector<std::size_t> members(std::size_t c) const;
};

struct KMeansOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // largest center movement that still counts as converged
  std::size_t restarts = 10;  // independent seedings; the lowest inertia wins
};

// k-means++ seeding then Lloyd iterations, repeated `restarts` times. An
// emptied cluster is reseeded at the point farthest from its own center.
ClusterModel kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {});

// Nearest center per row; ties go to the lower id.
std::vector<std::size_t> assign_clusters(const Matrix& points, const Matrix& centers);

// Softmax over t-kernel similarities between z and every center.
Vector cluster_similarity(const Eigen::Ref<const RowVector>& z, const Matrix& centers, double nu);

enum class ImportanceKind { kGlobal, kLocal, kTransformation };

std::string to_string(ImportanceKind kind);

struct ImportanceReport {
  ImportanceKind kind = ImportanceKind::kGlobal;
  std::vector<std::size_t> clusters;  // {}, {c} or {c1, c2}
  Vector values;
  std::vector<std::string> feature_names;
  std::vector<std::size_t> skipped_draws;  // per feature
  std::vector<bool> active;                // open gates
  std::size_t sample_count = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  bool average_all = false;
  std::vector<std::string> warnings;
};

ImportanceReport global_importance(const ModelParams& params, const std::vector<std::string>& feature_names = {});

struct ExplainOptions {
  AugmentConfig augment;
  std::size_t repeats = kDefaultRepeats;
  std::uint64_t seed = 0;
  double nu_z = 0.01;
  bool average_all = false;  // average over every row instead of cluster members
  std::size_t threads = 1;
};

// Clusters for the saliency estimators: centers in embedding space and the
// rows belonging to each.
struct ClusterView {
  Matrix centers;
  std::vector<std::vector<std::size_t>> members;

  static ClusterView from_model(const ClusterModel& model);
};

// A user selection becomes an extra cluster (id = K) centered at the
// selection's centroid; the fitted centers stay as competitors.
ClusterView with_selection(const ClusterView& base, const Matrix& embedding, const std::vector<std::size_t>& rows);

// `d` must be normalized like the training data and carry a kNN graph.
ImportanceReport local_importance(const Dataset& d, const ModelParams& params, const ClusterView& clusters,
                                  std::size_t c, const ExplainOptions& opts);

ImportanceReport transform_importance(const Dataset& d, const ModelParams& params, const ClusterView& clusters,
                                      std::size_t c1, std::size_t c2, const ExplainOptions& opts);

}  // namespace evnet
