#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "evnet/types.hpp"

namespace evnet {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kDefaultEpsilon = 0.01;
inline constexpr double kGateInit = 0.2;

// Hidden widths after the gate. The last entry of `projection` is the latent
// width, the last entry of `head` the output width.
struct NetworkShape {
  std::vector<std::size_t> projection{200, 200, 200, 80};
  std::vector<std::size_t> head{200, 2};

  bool operator==(const NetworkShape&) const = default;
};

// y = x * weight + bias, with weight stored fan_in x fan_out. An empty bias
// means the layer has none (the embedding output layer).
struct DenseLayer {
  Matrix weight;
  RowVector bias;

  bool has_bias() const { return bias.size() > 0; }
};

struct ModelParams {
  Vector gate;  // W, one entry per input feature
  std::vector<DenseLayer> projection;  // f_theta, hidden layers leaky, last linear
  std::vector<DenseLayer> head;        // m_phi, same convention
  double epsilon = kDefaultEpsilon;

  std::size_t input_dim() const { return static_cast<std::size_t>(gate.size()); }
  std::size_t latent_dim() const;
  std::size_t output_dim() const;
  NetworkShape shape() const;
};

// W = 0.2 everywhere, Kaiming-normal weights (sd = sqrt(2 / fan_in)), zero
// biases, no bias on the final embedding layer. Deterministic per seed.
ModelParams init_params(std::size_t n, std::uint64_t seed, const NetworkShape& shape = {},
                        double epsilon = kDefaultEpsilon);

// Throws if layer shapes do not chain or any value is non-finite.
void validate(const ModelParams& params);

inline bool gate_open(double w, double epsilon) { return w > epsilon; }

// Effective per-feature multiplier: W_j when open, 0 otherwise.
Vector gate_multiplier(const ModelParams& params);

Vector gate_forward(const Eigen::Ref<const Vector>& x, const ModelParams& params);

struct LayerTrace {
  Matrix pre;  // before activation
  Matrix act;  // after activation (== pre for the linear last layer)
};

struct ForwardTrace {
  Matrix input;
  Matrix gated;
  std::vector<LayerTrace> projection;
  std::vector<LayerTrace> head;  // empty when the head was not evaluated

  const Matrix& latent() const { return projection.back().act; }
  const Matrix& output() const { return head.back().act; }
  bool has_head() const { return !head.empty(); }
};

// Batched forward over the rows of x.
ForwardTrace forward(const Matrix& x, const ModelParams& params, bool with_head = true);

// Only z, evaluated in fixed row chunks; parallel over chunks.
Matrix forward_output(const Matrix& x, const ModelParams& params, std::size_t threads = 1);

// Sorted indices j with W_j > epsilon.
std::vector<std::size_t> active_features(const ModelParams& params);

double leaky(double v);

}  // namespace evnet
