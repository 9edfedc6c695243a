#include "evnet/augment.hpp"

#include <string>

namespace evnet {

Vector interpolate(const Eigen::Ref<const RowVector>& x, const Eigen::Ref<const RowVector>& neighbor,
                   const std::vector<double>& ratios) {
  require(static_cast<std::size_t>(x.size()) == ratios.size() && x.size() == neighbor.size(),
          "interpolate: size mismatch");
  Vector out(x.size());
  for (Eigen::Index f = 0; f < x.size(); ++f) {
    const double r = ratios[static_cast<std::size_t>(f)];
    out(f) = (1.0 - r) * x(f) + r * neighbor(f);
  }
  return out;
}

Augmented augment_point(const Dataset& d, std::size_t i, const AugmentConfig& cfg, SplitMix64& rng) {
  require(i < d.rows(), "augment: point index " + std::to_string(i) + " out of range");
  require(cfg.p_u >= 0.0, "augment: p_U must be non-negative");
  require(d.has_knn(), "augment: dataset has no kNN graph");

  const NeighborLists* lists = &d.neighbors;
  if (cfg.mode == AugmentMode::kSupervised) {
    if (!d.supervised_neighbors) {
      fail(ErrorCode::kInvalidArgument, "augment: supervised mode requires supervised neighbor lists");
    }
    lists = &*d.supervised_neighbors;
  }
  const auto& candidates = (*lists)[i];
  const std::size_t n = d.cols();

  Augmented out;
  out.record.source = i;
  out.record.ratios.assign(n, 0.0);
  if (candidates.empty()) {
    if (cfg.mode == AugmentMode::kUnsupervised) {
      fail(ErrorCode::kState, "augment: point " + std::to_string(i) + " has no neighbors");
    }
    out.record.identity_fallback = true;
    out.x = d.features.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
  }

  const std::size_t nb = candidates[rng.below(candidates.size())];
  out.record.neighbor = nb;
  if (cfg.shared_ru) {
    out.record.ratios.assign(n, rng.uniform(0.0, cfg.p_u));
  } else {
    for (auto& r : out.record.ratios) r = rng.uniform(0.0, cfg.p_u);
  }
  out.x = interpolate(d.features.row(static_cast<Eigen::Index>(i)), d.features.row(static_cast<Eigen::Index>(nb)),
                      out.record.ratios);
  return out;
}

FeaturePair feature_pair_from(const Dataset& d, const Augmented& aug, std::size_t f) {
  require(f < d.cols(), "feature index " + std::to_string(f) + " out of range");
  FeaturePair pair;
  pair.negative = aug.x;
  pair.positive = aug.x;
  pair.positive(static_cast<Eigen::Index>(f)) =
      d.features(static_cast<Eigen::Index>(aug.record.source), static_cast<Eigen::Index>(f));
  pair.tau_f = aug.x(static_cast<Eigen::Index>(f));
  return pair;
}

FeaturePair augment_feature_pair(const Dataset& d, std::size_t i, std::size_t f, const AugmentConfig& cfg,
                                 SplitMix64& rng) {
  return feature_pair_from(d, augment_point(d, i, cfg, rng), f);
}

}  // namespace evnet
