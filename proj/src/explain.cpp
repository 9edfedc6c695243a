#include "evnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evnet/loss.hpp"
#include "evnet/parallel.hpp"
#include "evnet/random.hpp"

namespace evnet {

std::vector<std::size_t> ClusterModel::members(std::size_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == c) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> assign_clusters(const Matrix& points, const Matrix& centers) {
  require(centers.rows() >= 1, "assign_clusters: no centers");
  require(points.cols() == centers.cols(), "assign_clusters: dimension mismatch");
  std::vector<std::size_t> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double dist = (points.row(i) - centers.row(c)).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = static_cast<std::size_t>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

namespace {

ClusterModel kmeans_once(const Matrix& points, std::size_t k, SplitMix64& rng, const KMeansOptions& opts) {
  const auto m = static_cast<std::size_t>(points.rows());
  const auto d = points.cols();

  Matrix centers(static_cast<Eigen::Index>(k), d);
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(m)));
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      nearest[i] = std::min(nearest[i], (points.row(row) - centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        acc += nearest[i];
        if (acc > u && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(m);
    }
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
  }

  ClusterModel model;
  std::vector<std::size_t> assign;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    assign = assign_clusters(points, centers);
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += points.row(static_cast<Eigen::Index>(i));
      counts[assign[i]] += 1;
    }
    Matrix next = centers;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        next.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty: take the point farthest from its assigned center.
      double far = -1.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const double dist =
            (points.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(assign[i]))).squaredNorm();
        if (dist > far) {
          far = dist;
          arg = i;
        }
      }
      next.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(arg));
      assign[arg] = c;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, (next.row(static_cast<Eigen::Index>(c)) - centers.row(static_cast<Eigen::Index>(c))).norm());
    }
    centers = std::move(next);
    model.iterations = it + 1;
    if (shift < opts.tolerance) break;
  }
  model.centers = centers;
  model.assignments = assign_clusters(points, centers);
  for (std::size_t i = 0; i < m; ++i) {
    model.inertia += (points.row(static_cast<Eigen::Index>(i)) -
                      centers.row(static_cast<Eigen::Index>(model.assignments[i])))
                         .squaredNorm();
  }
  return model;
}

}  // namespace

ClusterModel kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  const auto m = static_cast<std::size_t>(points.rows());
  require(k >= 1, "kmeans: k must be >= 1");
  require(k <= m, "kmeans: k (" + std::to_string(k) + ") exceeds the number of points (" + std::to_string(m) + ")");
  require(opts.restarts >= 1, "kmeans: restarts must be >= 1");
  if (!points.allFinite()) fail(ErrorCode::kNumeric, "kmeans: non-finite input");
  ClusterModel best;
  for (std::size_t r = 0; r < opts.restarts; ++r) {
    auto rng = make_stream({tag(StreamTag::kKMeans), seed, static_cast<std::uint64_t>(r)});
    ClusterModel model = kmeans_once(points, k, rng, opts);
    if (r == 0 || model.inertia < best.inertia) best = std::move(model);
  }
  return best;
}

Vector cluster_similarity(const Eigen::Ref<const RowVector>& z, const Matrix& centers, double nu) {
  require(centers.rows() >= 1, "cluster_similarity: no centers");
  require(z.size() == centers.cols(), "cluster_similarity: dimension mismatch");
  Vector s(centers.rows());
  for (Eigen::Index c = 0; c < centers.rows(); ++c) s(c) = t_kernel_sq((z - centers.row(c)).squaredNorm(), nu);
  // Similarities lie in (0, 1], so exp cannot overflow; shift anyway for
  // a well-conditioned softmax.
  const double top = s.maxCoeff();
  Vector e = (s.array() - top).exp();
  return e / e.sum();
}

std::string to_string(ImportanceKind kind) {
  switch (kind) {
    case ImportanceKind::kGlobal: return "global";
    case ImportanceKind::kLocal: return "local";
    case ImportanceKind::kTransformation: return "transformation";
  }
  return "global";
}

namespace {

std::vector<std::string> names_or_default(const std::vector<std::string>& names, std::size_t n) {
  if (names.size() == n) return names;
  std::vector<std::string> out;
  for (std::size_t j = 0; j < n; ++j) out.push_back("f" + std::to_string(j));
  return out;
}

std::vector<bool> open_mask(const ModelParams& params) {
  std::vector<bool> out;
  for (Eigen::Index j = 0; j < params.gate.size(); ++j) out.push_back(gate_open(params.gate(j), params.epsilon));
  return out;
}

struct SampleTally {
  std::vector<double> sum;
  std::vector<std::size_t> used;
  std::vector<std::size_t> skipped;
};

ImportanceReport saliency(const Dataset& d, const ModelParams& params, const ClusterView& clusters, std::size_t c1,
                          std::size_t c2, bool transform, const ExplainOptions& opts) {
  const std::size_t n = d.cols();
  const std::size_t k = static_cast<std::size_t>(clusters.centers.rows());
  require(n == params.input_dim(), "explain: dataset has " + std::to_string(n) + " features, model expects " +
                                       std::to_string(params.input_dim()));
  require(static_cast<std::size_t>(clusters.centers.cols()) == params.output_dim(),
          "explain: cluster centers do not live in the model's embedding space");
  require(clusters.members.size() == k, "explain: cluster membership does not match centers");
  require(c1 < k, "explain: cluster " + std::to_string(c1) + " does not exist (K=" + std::to_string(k) + ")");
  require(c2 < k, "explain: cluster " + std::to_string(c2) + " does not exist (K=" + std::to_string(k) + ")");
  require(opts.repeats >= 1, "explain: repeats must be >= 1");
  require(d.has_knn(), "explain: dataset has no kNN graph");
  if (clusters.members[c1].empty()) fail(ErrorCode::kInvalidArgument, "explain: cluster " + std::to_string(c1) + " is empty");
  if (clusters.members[c2].empty()) fail(ErrorCode::kInvalidArgument, "explain: cluster " + std::to_string(c2) + " is empty");
  for (std::size_t row : clusters.members[c1]) require(row < d.rows(), "explain: cluster member out of range");

  std::vector<std::size_t> samples = clusters.members[c1];
  if (opts.average_all) {
    samples.resize(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) samples[i] = i;
  }
  const std::vector<bool> open = open_mask(params);

  std::vector<SampleTally> tallies(samples.size());
  parallel_for(samples.size(), opts.threads, [&](std::size_t s) {
    const std::size_t i = samples[s];
    SampleTally& t = tallies[s];
    t.sum.assign(n, 0.0);
    t.used.assign(n, 0);
    t.skipped.assign(n, 0);
    const auto x = d.features.row(static_cast<Eigen::Index>(i));
    Matrix batch(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < opts.repeats; ++r) {
      auto rng = make_stream({tag(StreamTag::kExplain), opts.seed, static_cast<std::uint64_t>(i),
                              static_cast<std::uint64_t>(r)});
      const Augmented aug = augment_point(d, i, opts.augment, rng);
      // Row 0 is x-f (augmented everywhere); row f+1 is x+f.
      batch.row(0) = aug.x.transpose();
      for (std::size_t f = 0; f < n; ++f) {
        const auto row = static_cast<Eigen::Index>(f + 1);
        batch.row(row) = aug.x.transpose();
        batch(row, static_cast<Eigen::Index>(f)) = x(static_cast<Eigen::Index>(f));
      }
      const Matrix z = forward_output(batch, params, 1);
      const Vector p_neg = cluster_similarity(z.row(0), clusters.centers, opts.nu_z);
      for (std::size_t f = 0; f < n; ++f) {
        const double denom = aug.x(static_cast<Eigen::Index>(f)) - x(static_cast<Eigen::Index>(f));
        if (std::abs(denom) < kDenominatorGuard) {
          t.skipped[f] += 1;
          continue;
        }
        t.used[f] += 1;
        // A closed gate hides the only coordinate in which the pair differs.
        if (!open[f]) continue;
        const Vector p_pos = cluster_similarity(z.row(static_cast<Eigen::Index>(f + 1)), clusters.centers, opts.nu_z);
        double num = p_pos(static_cast<Eigen::Index>(c1)) - p_neg(static_cast<Eigen::Index>(c1));
        if (transform) num -= p_pos(static_cast<Eigen::Index>(c2)) - p_neg(static_cast<Eigen::Index>(c2));
        t.sum[f] += std::abs(num / denom);
      }
    }
  });

  ImportanceReport rep;
  rep.kind = transform ? ImportanceKind::kTransformation : ImportanceKind::kLocal;
  rep.clusters = transform ? std::vector<std::size_t>{c1, c2} : std::vector<std::size_t>{c1};
  rep.feature_names = names_or_default(d.feature_names, n);
  rep.active = open;
  rep.sample_count = samples.size();
  rep.repeats = opts.repeats;
  rep.seed = opts.seed;
  rep.average_all = opts.average_all;
  rep.values = Vector::Zero(static_cast<Eigen::Index>(n));
  rep.skipped_draws.assign(n, 0);
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> used(n, 0);
  for (const auto& t : tallies) {
    for (std::size_t f = 0; f < n; ++f) {
      sum[f] += t.sum[f];
      used[f] += t.used[f];
      rep.skipped_draws[f] += t.skipped[f];
    }
  }
  for (std::size_t f = 0; f < n; ++f) {
    if (used[f] > 0) rep.values(static_cast<Eigen::Index>(f)) = sum[f] / static_cast<double>(used[f]);
  }
  if (!rep.values.allFinite()) fail(ErrorCode::kNumeric, "explain: non-finite importance");
  return rep;
}

}  // namespace

ImportanceReport global_importance(const ModelParams& params, const std::vector<std::string>& feature_names) {
  ImportanceReport rep;
  rep.kind = ImportanceKind::kGlobal;
  const std::size_t n = params.input_dim();
  rep.feature_names = names_or_default(feature_names, n);
  rep.active = open_mask(params);
  rep.skipped_draws.assign(n, 0);
  const double top = params.gate.size() > 0 ? params.gate.maxCoeff() : 0.0;
  if (top > 0.0) {
    rep.values = params.gate / top;
  } else {
    rep.values = Vector::Zero(params.gate.size());
    rep.warnings.push_back("all gate weights are zero");
  }
  return rep;
}

ClusterView ClusterView::from_model(const ClusterModel& model) {
  ClusterView v;
  v.centers = model.centers;
  v.members.resize(model.k());
  for (std::size_t i = 0; i < model.assignments.size(); ++i) {
    require(model.assignments[i] < model.k(), "cluster model: assignment out of range");
    v.members[model.assignments[i]].push_back(i);
  }
  return v;
}

ClusterView with_selection(const ClusterView& base, const Matrix& embedding, const std::vector<std::size_t>& rows) {
  require(!rows.empty(), "selection is empty");
  require(embedding.cols() == base.centers.cols(), "selection: embedding dimension mismatch");
  std::vector<std::size_t> sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  RowVector centroid = RowVector::Zero(embedding.cols());
  for (std::size_t r : sorted) {
    require(r < static_cast<std::size_t>(embedding.rows()),
            "selection: point id " + std::to_string(r) + " out of range");
    centroid += embedding.row(static_cast<Eigen::Index>(r));
  }
  centroid /= static_cast<double>(sorted.size());
  ClusterView v = base;
  v.centers.conservativeResize(v.centers.rows() + 1, Eigen::NoChange);
  v.centers.row(v.centers.rows() - 1) = centroid;
  v.members.push_back(std::move(sorted));
  return v;
}

ImportanceReport local_importance(const Dataset& d, const ModelParams& params, const ClusterView& clusters,
                                  std::size_t c, const ExplainOptions& opts) {
  return saliency(d, params, clusters, c, c, false, opts);
}

ImportanceReport transform_importance(const Dataset& d, const ModelParams& params, const ClusterView& clusters,
                                      std::size_t c1, std::size_t c2, const ExplainOptions& opts) {
  return saliency(d, params, clusters, c1, c2, true, opts);
}

}  // namespace evnet
