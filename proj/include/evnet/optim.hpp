#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evnet/loss.hpp"
#include "evnet/network.hpp"
#include "evnet/types.hpp"

namespace evnet {

// Shape-congruent with ModelParams (epsilon excluded).
struct Gradients {
  Vector gate;
  std::vector<DenseLayer> projection;
  std::vector<DenseLayer> head;

  static Gradients zeros_like(const ModelParams& params);
  Gradients& operator+=(const Gradients& other);
  bool all_finite() const;
  // Name of the first tensor holding a non-finite value, or "".
  std::string first_non_finite() const;
};

// Reverse pass through head and projection for one forward trace. d_latent is
// dL/dy, d_output is dL/dz (ignored when null). Closed gates get exactly zero.
Gradients backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& d_latent,
                   const Matrix* d_output);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;       // theta and phi
  double gate_weight_decay = 0.0;   // L1 lives in the loss
};

struct AdamWState {
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const ModelParams& params);
};

// Decoupled weight decay Adam; the gate is clamped to [0, inf) afterwards.
// A non-finite gradient rejects the step and names the offending tensor.
void adamw_step(ModelParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg);

// Everything needed to score one minibatch: row i of `original` is the
// un-augmented source of row i of `augmented`.
struct ObjectiveOptions {
  LossConfig loss;
  double lambda = 0.0;
  bool detach_target = false;
  std::size_t threads = 1;
};

struct ObjectiveResult {
  double l_sp = 0.0;
  double l_r = 0.0;
  double total = 0.0;
  Gradients grads;
};

// L = L_sp + lambda * L_r and, unless value_only, its exact gradient.
ObjectiveResult evaluate_objective(const ModelParams& params, const Matrix& original, const Matrix& augmented,
                                   const ObjectiveOptions& opts, bool value_only = false);

struct GradCheckGroup {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;  // gate, projection, head
  double max_rel_error() const;
};

// Central differences (Richardson-extrapolated over h and h/2) against backward. Gate entries within 2h of
// epsilon or of 0 are skipped (non-differentiable points), as are closed gates
// and entries whose probe flips the sign of a hidden pre-activation. With
// detach_target the differenced function holds the target at its base value.
GradCheckReport grad_check(const ModelParams& params, const Matrix& original, const Matrix& augmented,
                           const ObjectiveOptions& opts, double h = 1e-4);

// The same checker on an arbitrary scalar function of the parameters. When
// `region` is given, an entry is skipped if either probe changes its value
// (the stencil straddles a kink).
using ParamLoss = std::function<double(const ModelParams&)>;
using ParamRegion = std::function<std::vector<bool>(const ModelParams&)>;
GradCheckReport grad_check_function(const ModelParams& params, const ParamLoss& loss, const Gradients& analytic,
                                    double h = 1e-4, const ParamRegion& region = {});

// |a - n| / max(|a| + |n|, 1e-6).
double relative_error(double analytic, double numeric);

}  // namespace evnet
