#include "evnet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evnet {
namespace {

double norm_factor(Eigen::Index b) {
  require(b >= 2, "structure-preserving loss needs a batch of at least 2 items");
  const double bm1 = static_cast<double>(b - 1);
  return 1.0 / (bm1 * bm1);
}

}  // namespace

Matrix pairwise_squared_distances(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "pairwise distances: dimension mismatch");
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  return d;
}

void validate(const LossConfig& cfg) {
  require(cfg.nu_y > 0.0, "nu_Y must be positive");
  require(cfg.nu_z > 0.0, "nu_Z must be positive");
  require(cfg.clamp > 0.0 && cfg.clamp < 0.5, "similarity clamp must lie in (0, 0.5)");
  require(cfg.lambda_init_ratio > 0.0, "lambda init ratio must be positive");
  require(cfg.lambda_growth >= 0.0, "lambda growth must be non-negative");
}

double t_kernel_sq(double squared_distance, double nu) {
  return std::pow(1.0 + squared_distance / nu, -(nu + 1.0) / 2.0);
}

double t_kernel_sq_derivative(double squared_distance, double nu) {
  const double base = 1.0 + squared_distance / nu;
  return -((nu + 1.0) / (2.0 * nu)) * std::pow(base, -(nu + 1.0) / 2.0 - 1.0);
}

double t_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double nu) {
  require(u.size() == v.size(), "t_kernel: dimension mismatch");
  require(nu > 0.0, "t_kernel: nu must be positive");
  return t_kernel_sq((u - v).squaredNorm(), nu);
}

SimilarityMatrices similarity_matrices(const Matrix& latent_original, const Matrix& latent_augmented,
                                       const Matrix& output_augmented, const LossConfig& cfg) {
  require(latent_original.rows() == latent_augmented.rows() && latent_augmented.rows() == output_augmented.rows(),
          "similarity_matrices: batch sizes differ");
  SimilarityMatrices s;
  s.target = pairwise_squared_distances(latent_original, latent_augmented).unaryExpr([&](double d) { return t_kernel_sq(d, cfg.nu_y); });
  s.low = pairwise_squared_distances(output_augmented, output_augmented).unaryExpr([&](double d) { return t_kernel_sq(d, cfg.nu_z); });
  return s;
}

LossPartials loss_sp_partials(const Matrix& target, const Matrix& low, const LossConfig& cfg) {
  require(target.rows() == target.cols() && low.rows() == low.cols() && target.rows() == low.rows(),
          "loss_sp: matrices must be square and of equal size");
  if (!target.allFinite() || !low.allFinite()) fail(ErrorCode::kNumeric, "loss_sp: non-finite similarity");
  const double scale = norm_factor(target.rows());
  const double lo = cfg.clamp;
  const double hi = 1.0 - cfg.clamp;
  LossPartials out;
  out.d_target = Matrix::Zero(target.rows(), target.cols());
  out.d_low = Matrix::Zero(low.rows(), low.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    for (Eigen::Index j = 0; j < target.cols(); ++j) {
      if (i == j && !cfg.include_diagonal) continue;
      const double t = target(i, j);
      const double s = low(i, j);
      const double c = std::clamp(s, lo, hi);
      const double log_c = std::log(c);
      const double log_1c = std::log1p(-c);
      sum += t * log_c + (1.0 - t) * log_1c;
      out.d_target(i, j) = -scale * (log_c - log_1c);
      if (s > lo && s < hi) out.d_low(i, j) = -scale * (t / c - (1.0 - t) / (1.0 - c));
    }
  }
  out.value = -scale * sum;
  return out;
}

double loss_sp(const Matrix& target, const Matrix& low, const LossConfig& cfg) {
  return loss_sp_partials(target, low, cfg).value;
}

double loss_reg(const Eigen::Ref<const Vector>& gate) { return gate.cwiseAbs().sum(); }

LambdaState lambda_init(double l_sp, double l_r, double ratio) {
  if (!(l_r > 0.0)) {
    fail(ErrorCode::kState, "lambda_init: L_r is zero (all gates closed), cannot scale the regularizer");
  }
  LambdaState s;
  s.lambda = l_sp / (ratio * l_r);
  s.initialized = true;
  return s;
}

LambdaState lambda_step(const LambdaState& state, std::size_t active_count, std::size_t target_features,
                        double growth) {
  LambdaState next = state;
  if (next.frozen) return next;
  if (active_count <= target_features) {
    next.frozen = true;
  } else {
    next.lambda = state.lambda * (1.0 + growth);
  }
  return next;
}

}  // namespace evnet
