#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "evnet/dataset.hpp"
#include "evnet/random.hpp"
#include "evnet/types.hpp"

namespace evnet {

enum class AugmentMode { kUnsupervised, kSupervised };

struct AugmentConfig {
  double p_u = 2.0;  // r_u ~ U(0, p_u); values above 1 extrapolate past the neighbor
  AugmentMode mode = AugmentMode::kUnsupervised;
  bool shared_ru = false;  // one r_u per point instead of one per feature
};

// Bookkeeping that stands in for the inverse augmentation: the original is
// always dataset row `source`.
struct AugmentRecord {
  std::size_t source = 0;
  std::optional<std::size_t> neighbor;  // empty on identity fallback
  bool identity_fallback = false;
  std::vector<double> ratios;  // r_u per feature
};

struct Augmented {
  Vector x;
  AugmentRecord record;
};

// Interpolates row i towards one uniformly chosen neighbor:
// x'_f = (1 - r_f) x_f + r_f xn_f. A supervised point without same-label
// neighbors gets x' = x and a flagged record.
Augmented augment_point(const Dataset& d, std::size_t i, const AugmentConfig& cfg, SplitMix64& rng);

// The same interpolation with explicit neighbor and ratios.
Vector interpolate(const Eigen::Ref<const RowVector>& x, const Eigen::Ref<const RowVector>& neighbor,
                   const std::vector<double>& ratios);

struct FeaturePair {
  Vector positive;  // x+f: augmented everywhere except f, which keeps x_f
  Vector negative;  // x-f: augmented everywhere
  double tau_f = 0.0;  // augmented value of feature f
};

// Both vectors come from one draw (neighbor and all ratios shared) and differ
// at most at coordinate f.
FeaturePair augment_feature_pair(const Dataset& d, std::size_t i, std::size_t f, const AugmentConfig& cfg,
                                 SplitMix64& rng);
FeaturePair feature_pair_from(const Dataset& d, const Augmented& aug, std::size_t f);

}  // namespace evnet
