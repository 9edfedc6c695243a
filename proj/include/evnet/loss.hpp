#pragma once

#include <cstddef>

#include "evnet/types.hpp"

namespace evnet {

struct LossConfig {
  double nu_y = 100.0;   // latent-space kernel degrees of freedom
  double nu_z = 0.01;    // embedding-space kernel degrees of freedom
  double lambda_init_ratio = 0.1;
  double lambda_growth = 0.005;  // per epoch, multiplicative
  std::size_t target_features = 0;  // A_f; 0 means "all features"
  double clamp = 1e-7;
  bool include_diagonal = true;
};

void validate(const LossConfig& cfg);

// Student-t kernel (1 + d^2/nu)^(-(nu+1)/2) on a squared distance.
double t_kernel_sq(double squared_distance, double nu);
double t_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double nu);

// d kappa / d(d^2).
double t_kernel_sq_derivative(double squared_distance, double nu);

// D(i, j) = |a_i - b_j|^2.
Matrix pairwise_squared_distances(const Matrix& a, const Matrix& b);

struct SimilarityMatrices {
  Matrix target;  // S~Y: row i = un-augmented original i, column j = augment j
  Matrix low;     // S^Z between augments, not clamped
};

// latent_original[i] = f(g(x_i)), latent_augmented[j] = f(g(x'_j)),
// output_augmented[j] = m(f(g(x'_j))).
SimilarityMatrices similarity_matrices(const Matrix& latent_original, const Matrix& latent_augmented,
                                       const Matrix& output_augmented, const LossConfig& cfg);

// Cross-entropy between targets and embedding similarities:
// -1/(B-1)^2 sum_ij [ T log c(S) + (1 - T) log(1 - c(S)) ], c = clamp to
// [clamp, 1 - clamp]. The normalizer is (B-1)^2 even though the sum has B^2
// terms.
double loss_sp(const Matrix& target, const Matrix& low, const LossConfig& cfg);

struct LossPartials {
  double value = 0.0;
  Matrix d_target;  // dL/dT
  Matrix d_low;     // dL/dS, zero where the clamp is active
};

LossPartials loss_sp_partials(const Matrix& target, const Matrix& low, const LossConfig& cfg);

// L1 norm of the gate.
double loss_reg(const Eigen::Ref<const Vector>& gate);

struct LambdaState {
  double lambda = 0.0;
  bool frozen = false;
  bool initialized = false;
};

// lambda = L_sp / (ratio * L_r), exactly as the recipe prints it.
LambdaState lambda_init(double l_sp, double l_r, double ratio = 0.1);

// Grows lambda by (1 + growth) while more than target_features gates are
// open; latches once the count reaches the target.
LambdaState lambda_step(const LambdaState& state, std::size_t active_count, std::size_t target_features,
                        double growth = 0.005);

}  // namespace evnet
