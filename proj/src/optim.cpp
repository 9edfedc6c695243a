#include "evnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "evnet/parallel.hpp"

namespace evnet {
namespace {

std::vector<DenseLayer> zero_stack(const std::vector<DenseLayer>& like) {
  std::vector<DenseLayer> out;
  out.reserve(like.size());
  for (const auto& l : like) {
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), RowVector::Zero(l.bias.size())});
  }
  return out;
}

void add_stack(std::vector<DenseLayer>& dst, const std::vector<DenseLayer>& src) {
  for (std::size_t l = 0; l < dst.size(); ++l) {
    dst[l].weight += src[l].weight;
    dst[l].bias += src[l].bias;
  }
}

// Reverse through one dense stack; returns dL/d(stack input).
Matrix backward_stack(const std::vector<DenseLayer>& layers, const std::vector<LayerTrace>& trace,
                      const Matrix& stack_input, Matrix upstream, std::vector<DenseLayer>& grads) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    const bool hidden = l + 1 < layers.size();
    if (hidden) {
      const Matrix& pre = trace[l].pre;
      for (Eigen::Index r = 0; r < upstream.rows(); ++r) {
        for (Eigen::Index c = 0; c < upstream.cols(); ++c) {
          if (!(pre(r, c) > 0.0)) upstream(r, c) *= kLeakySlope;
        }
      }
    }
    const Matrix& input = l == 0 ? stack_input : trace[l - 1].act;
    grads[l].weight.noalias() += input.transpose() * upstream;
    if (layers[l].has_bias()) grads[l].bias += upstream.colwise().sum();
    Matrix next;
    next.noalias() = upstream * layers[l].weight.transpose();
    upstream = std::move(next);
  }
  return upstream;
}

template <typename G, typename Fn>
void for_each_tensor(G& g, Fn fn) {
  fn("gate", g.gate);
  for (std::size_t l = 0; l < g.projection.size(); ++l) {
    fn("projection[" + std::to_string(l) + "].weight", g.projection[l].weight);
    fn("projection[" + std::to_string(l) + "].bias", g.projection[l].bias);
  }
  for (std::size_t l = 0; l < g.head.size(); ++l) {
    fn("head[" + std::to_string(l) + "].weight", g.head[l].weight);
    fn("head[" + std::to_string(l) + "].bias", g.head[l].bias);
  }
}

template <typename Dense>
void adam_update(Eigen::DenseBase<Dense>& param, const auto& grad, auto& m, auto& v, const AdamWConfig& cfg,
                 double weight_decay, double bias1, double bias2) {
  auto& p = param.derived();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double g = grad.data()[i];
    double& mi = m.data()[i];
    double& vi = v.data()[i];
    double& pi = p.data()[i];
    pi -= cfg.lr * weight_decay * pi;
    mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * g;
    vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * g * g;
    const double m_hat = mi / bias1;
    const double v_hat = vi / bias2;
    pi -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

struct ChunkTraces {
  ForwardTrace original;
  ForwardTrace augmented;
};

}  // namespace

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.gate = Vector::Zero(params.gate.size());
  g.projection = zero_stack(params.projection);
  g.head = zero_stack(params.head);
  return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  gate += other.gate;
  add_stack(projection, other.projection);
  add_stack(head, other.head);
  return *this;
}

std::string Gradients::first_non_finite() const {
  std::string bad;
  for_each_tensor(*this, [&](const std::string& name, const auto& t) {
    if (bad.empty() && !t.allFinite()) bad = name;
  });
  return bad;
}

bool Gradients::all_finite() const { return first_non_finite().empty(); }

AdamWState AdamWState::zeros_like(const ModelParams& params) {
  return {Gradients::zeros_like(params), Gradients::zeros_like(params), 0};
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& d_latent,
                   const Matrix* d_output) {
  require(d_latent.rows() == trace.input.rows() &&
              static_cast<std::size_t>(d_latent.cols()) == params.latent_dim(),
          "backward: d_latent shape mismatch");
  Gradients g = Gradients::zeros_like(params);
  Matrix upstream = d_latent;
  if (d_output) {
    require(trace.has_head(), "backward: d_output given but the trace has no head pass");
    require(d_output->rows() == trace.input.rows() &&
                static_cast<std::size_t>(d_output->cols()) == params.output_dim(),
            "backward: d_output shape mismatch");
    upstream += backward_stack(params.head, trace.head, trace.latent(), *d_output, g.head);
  }
  const Matrix d_gated = backward_stack(params.projection, trace.projection, trace.gated, std::move(upstream), g.projection);
  for (Eigen::Index j = 0; j < g.gate.size(); ++j) {
    if (gate_open(params.gate(j), params.epsilon)) {
      g.gate(j) = d_gated.col(j).dot(trace.input.col(j));
    }
  }
  return g;
}

void adamw_step(ModelParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg) {
  const std::string bad = grads.first_non_finite();
  if (!bad.empty()) fail(ErrorCode::kNumeric, "adamw_step: non-finite gradient in " + bad + "; step rejected");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  adam_update(params.gate, grads.gate, state.m.gate, state.v.gate, cfg, cfg.gate_weight_decay, bias1, bias2);
  for (std::size_t l = 0; l < params.projection.size(); ++l) {
    adam_update(params.projection[l].weight, grads.projection[l].weight, state.m.projection[l].weight,
                state.v.projection[l].weight, cfg, cfg.weight_decay, bias1, bias2);
    adam_update(params.projection[l].bias, grads.projection[l].bias, state.m.projection[l].bias,
                state.v.projection[l].bias, cfg, cfg.weight_decay, bias1, bias2);
  }
  for (std::size_t l = 0; l < params.head.size(); ++l) {
    adam_update(params.head[l].weight, grads.head[l].weight, state.m.head[l].weight, state.v.head[l].weight, cfg,
                cfg.weight_decay, bias1, bias2);
    adam_update(params.head[l].bias, grads.head[l].bias, state.m.head[l].bias, state.v.head[l].bias, cfg,
                cfg.weight_decay, bias1, bias2);
  }
  params.gate = params.gate.cwiseMax(0.0);
}

namespace {

// `fixed_target`, when given, replaces the target similarities (value only).
ObjectiveResult evaluate(const ModelParams& params, const Matrix& original, const Matrix& augmented,
                         const ObjectiveOptions& opts, bool value_only, const Matrix* fixed_target,
                         Matrix* target_out) {
  require(original.rows() == augmented.rows() && original.cols() == augmented.cols(),
          "objective: original and augmented batches differ in shape");
  const auto rows = static_cast<std::size_t>(original.rows());
  const std::size_t chunks = chunk_count(rows);
  const Eigen::Index latent = static_cast<Eigen::Index>(params.latent_dim());
  const Eigen::Index out_dim = static_cast<Eigen::Index>(params.output_dim());

  std::vector<ChunkTraces> traces(chunks);
  Matrix y_orig(original.rows(), latent), y_aug(original.rows(), latent), z_aug(original.rows(), out_dim);
  auto chunk_range = [&](std::size_t c) {
    const auto begin = static_cast<Eigen::Index>(c * kRowChunk);
    return std::pair{begin, std::min<Eigen::Index>(static_cast<Eigen::Index>(kRowChunk), original.rows() - begin)};
  };
  parallel_for(chunks, opts.threads, [&](std::size_t c) {
    const auto [begin, count] = chunk_range(c);
    traces[c].original = forward(original.middleRows(begin, count), params, false);
    traces[c].augmented = forward(augmented.middleRows(begin, count), params, true);
    y_orig.middleRows(begin, count) = traces[c].original.latent();
    y_aug.middleRows(begin, count) = traces[c].augmented.latent();
    z_aug.middleRows(begin, count) = traces[c].augmented.output();
  });

  const Matrix dy2 = pairwise_squared_distances(y_orig, y_aug);
  const Matrix dz2 = pairwise_squared_distances(z_aug, z_aug);
  const Matrix target =
      fixed_target ? *fixed_target : Matrix(dy2.unaryExpr([&](double d) { return t_kernel_sq(d, opts.loss.nu_y); }));
  if (target_out) *target_out = target;
  const Matrix low = dz2.unaryExpr([&](double d) { return t_kernel_sq(d, opts.loss.nu_z); });
  ObjectiveResult result;
  result.l_r = loss_reg(params.gate);
  if (value_only) {
    result.l_sp = loss_sp(target, low, opts.loss);
    result.total = result.l_sp + opts.lambda * result.l_r;
    return result;
  }
  require(fixed_target == nullptr, "objective: a fixed target is only supported for values");
  LossPartials partials = loss_sp_partials(target, low, opts.loss);
  result.l_sp = partials.value;
  result.total = result.l_sp + opts.lambda * result.l_r;

  // Chain through the kernels: G = dL/dT * dkappa/d(d^2), similarly H for S^Z.
  Matrix g_target = Matrix::Zero(target.rows(), target.cols());
  if (!opts.detach_target) {
    g_target = partials.d_target.cwiseProduct(
        dy2.unaryExpr([&](double d) { return t_kernel_sq_derivative(d, opts.loss.nu_y); }));
  }
  const Matrix h_low = partials.d_low.cwiseProduct(
      dz2.unaryExpr([&](double d) { return t_kernel_sq_derivative(d, opts.loss.nu_z); }));
  const Matrix h_sym = h_low + h_low.transpose();

  Matrix d_y_orig = 2.0 * (g_target.rowwise().sum().asDiagonal() * y_orig - g_target * y_aug);
  Matrix d_y_aug = 2.0 * (g_target.colwise().sum().transpose().asDiagonal() * y_aug - g_target.transpose() * y_orig);
  Matrix d_z_aug = 2.0 * (h_sym.rowwise().sum().asDiagonal() * z_aug - h_sym * z_aug);

  std::vector<Gradients> per_chunk(chunks);
  parallel_for(chunks, opts.threads, [&](std::size_t c) {
    const auto [begin, count] = chunk_range(c);
    Gradients g = backward(params, traces[c].original, d_y_orig.middleRows(begin, count), nullptr);
    const Matrix dz = d_z_aug.middleRows(begin, count);
    g += backward(params, traces[c].augmented, d_y_aug.middleRows(begin, count), &dz);
    per_chunk[c] = std::move(g);
  });
  result.grads = tree_reduce(std::move(per_chunk), [](Gradients a, Gradients b) {
    a += b;
    return a;
  });

  // L1 on open gates; closed gates are frozen and receive nothing.
  for (Eigen::Index j = 0; j < params.gate.size(); ++j) {
    const double w = params.gate(j);
    if (gate_open(w, params.epsilon) && w != 0.0) result.grads.gate(j) += opts.lambda * (w > 0.0 ? 1.0 : -1.0);
  }
  return result;
}

}  // namespace

ObjectiveResult evaluate_objective(const ModelParams& params, const Matrix& original, const Matrix& augmented,
                                   const ObjectiveOptions& opts, bool value_only) {
  return evaluate(params, original, augmented, opts, value_only, nullptr, nullptr);
}

double relative_error(double analytic, double numeric) {
  // The floor sits above central-difference rounding noise (about 1e-16 * |L| / h),
  // so exact zeros such as translation-invariant biases compare as equal.
  constexpr double kFloor = 1e-6;
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), kFloor);
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& g : groups) worst = std::max(worst, g.max_rel_error);
  return worst;
}

GradCheckReport grad_check_function(const ModelParams& params, const ParamLoss& loss, const Gradients& analytic,
                                    double h, const ParamRegion& region) {
  GradCheckReport report;
  ModelParams probe = params;
  const std::vector<bool> base_region = region ? region(params) : std::vector<bool>{};
  // Richardson-extrapolated central difference (steps h and h/2, error
  // O(h^4)), or nullopt when the stencil leaves the base region.
  auto central = [&](double& slot) -> std::optional<double> {
    const double saved = slot;
    bool smooth = true;
    auto at = [&](double offset) {
      slot = saved + offset;
      const double v = loss(probe);
      if (region && smooth && std::abs(offset) == h) smooth = region(probe) == base_region;
      return v;
    };
    const double wide = (at(h) - at(-h)) / (2.0 * h);
    const double narrow = (at(0.5 * h) - at(-0.5 * h)) / h;
    slot = saved;
    if (!smooth) return std::nullopt;
    return (4.0 * narrow - wide) / 3.0;
  };
  auto record = [&](GradCheckGroup& group, double analytic_value, double& slot) {
    const auto numeric = central(slot);
    if (!numeric) {
      ++group.skipped;
      return;
    }
    group.max_rel_error = std::max(group.max_rel_error, relative_error(analytic_value, *numeric));
    ++group.checked;
  };

  GradCheckGroup gate{"gate"};
  for (Eigen::Index j = 0; j < probe.gate.size(); ++j) {
    const double w = probe.gate(j);
    if (!gate_open(w, probe.epsilon) || std::abs(w - probe.epsilon) < 2.0 * h || std::abs(w) < 2.0 * h) {
      ++gate.skipped;
      continue;
    }
    record(gate, analytic.gate(j), probe.gate(j));
  }
  report.groups.push_back(gate);

  auto check_stack = [&](const std::string& name, std::vector<DenseLayer>& layers, const std::vector<DenseLayer>& grads) {
    GradCheckGroup group{name};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (Eigen::Index i = 0; i < layers[l].weight.size(); ++i) {
        record(group, grads[l].weight.data()[i], layers[l].weight.data()[i]);
      }
      for (Eigen::Index i = 0; i < layers[l].bias.size(); ++i) {
        record(group, grads[l].bias.data()[i], layers[l].bias.data()[i]);
      }
    }
    report.groups.push_back(group);
  };
  check_stack("projection", probe.projection, analytic.projection);
  check_stack("head", probe.head, analytic.head);
  return report;
}

GradCheckReport grad_check(const ModelParams& params, const Matrix& original, const Matrix& augmented,
                           const ObjectiveOptions& opts, double h) {
  const ObjectiveResult analytic = evaluate_objective(params, original, augmented, opts);
  Matrix target;
  evaluate(params, original, augmented, opts, true, nullptr, &target);
  const Matrix* held = opts.detach_target ? &target : nullptr;
  const ParamLoss loss = [&](const ModelParams& p) {
    return evaluate(p, original, augmented, opts, true, held, nullptr).total;
  };
  // Signs of every hidden pre-activation on both passes.
  const ParamRegion region = [&](const ModelParams& p) {
    std::vector<bool> signs;
    for (const Matrix* x : {&original, &augmented}) {
      const ForwardTrace tr = forward(*x, p, true);
      for (const auto* stack : {&tr.projection, &tr.head}) {
        for (std::size_t l = 0; l + 1 < stack->size(); ++l) {
          const Matrix& pre = (*stack)[l].pre;
          for (Eigen::Index i = 0; i < pre.size(); ++i) signs.push_back(pre.data()[i] > 0.0);
        }
      }
    }
    return signs;
  };
  return grad_check_function(params, loss, analytic.grads, h, region);
}

}  // namespace evnet
