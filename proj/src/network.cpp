#include "evnet/network.hpp"

#include <cmath>

#include "evnet/parallel.hpp"
#include "evnet/random.hpp"

namespace evnet {
namespace {

std::vector<DenseLayer> make_stack(std::size_t fan_in, const std::vector<std::size_t>& widths, SplitMix64& rng,
                                   bool output_bias) {
  std::vector<DenseLayer> layers;
  for (std::size_t w : widths) {
    require(w >= 1, "layer widths must be >= 1");
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(w));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = sd * rng.normal();
    }
    const bool last = layers.size() + 1 == widths.size();
    layer.bias = RowVector::Zero(last && !output_bias ? 0 : static_cast<Eigen::Index>(w));
    layers.push_back(std::move(layer));
    fan_in = w;
  }
  return layers;
}

void run_stack(const Matrix& input, const std::vector<DenseLayer>& layers, std::vector<LayerTrace>& out) {
  out.resize(layers.size());
  const Matrix* prev = &input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerTrace& t = out[l];
    t.pre.noalias() = (*prev) * layers[l].weight;
    if (layers[l].has_bias()) t.pre.rowwise() += layers[l].bias;
    if (l + 1 < layers.size()) {
      t.act = t.pre.unaryExpr([](double v) { return leaky(v); });
    } else {
      t.act = t.pre;
    }
    prev = &t.act;
  }
}

void check_stack(const std::vector<DenseLayer>& layers, std::size_t fan_in, const std::string& name) {
  require(!layers.empty(), name + " has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string where = name + "[" + std::to_string(l) + "]";
    require(static_cast<std::size_t>(layer.weight.rows()) == fan_in,
            where + ".weight has " + std::to_string(layer.weight.rows()) + " rows, expected " + std::to_string(fan_in));
    require(!layer.has_bias() || layer.bias.size() == layer.weight.cols(), where + ".bias width does not match weight");
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) fail(ErrorCode::kNumeric, where + " has non-finite values");
    fan_in = static_cast<std::size_t>(layer.weight.cols());
  }
}

}  // namespace

double leaky(double v) { return v > 0.0 ? v : kLeakySlope * v; }

std::size_t ModelParams::latent_dim() const {
  return projection.empty() ? 0 : static_cast<std::size_t>(projection.back().weight.cols());
}

std::size_t ModelParams::output_dim() const {
  return head.empty() ? 0 : static_cast<std::size_t>(head.back().weight.cols());
}

NetworkShape ModelParams::shape() const {
  NetworkShape s;
  s.projection.clear();
  s.head.clear();
  for (const auto& l : projection) s.projection.push_back(static_cast<std::size_t>(l.weight.cols()));
  for (const auto& l : head) s.head.push_back(static_cast<std::size_t>(l.weight.cols()));
  return s;
}

ModelParams init_params(std::size_t n, std::uint64_t seed, const NetworkShape& shape, double epsilon) {
  require(n >= 1, "init_params: feature count must be >= 1");
  require(!shape.projection.empty() && !shape.head.empty(), "init_params: empty network shape");
  auto rng = make_stream({tag(StreamTag::kInit), seed});
  ModelParams p;
  p.gate = Vector::Constant(static_cast<Eigen::Index>(n), kGateInit);
  p.projection = make_stack(n, shape.projection, rng, true);
  // Embedding similarities depend only on differences between outputs, so an
  // output bias could never receive a gradient.
  p.head = make_stack(shape.projection.back(), shape.head, rng, false);
  p.epsilon = epsilon;
  return p;
}

void validate(const ModelParams& params) {
  require(params.gate.size() >= 1, "model has an empty gate");
  if (!params.gate.allFinite()) fail(ErrorCode::kNumeric, "gate has non-finite values");
  check_stack(params.projection, params.input_dim(), "projection");
  check_stack(params.head, params.latent_dim(), "head");
}

Vector gate_multiplier(const ModelParams& params) {
  Vector m(params.gate.size());
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    m(j) = gate_open(params.gate(j), params.epsilon) ? params.gate(j) : 0.0;
  }
  return m;
}

Vector gate_forward(const Eigen::Ref<const Vector>& x, const ModelParams& params) {
  require(x.size() == params.gate.size(), "gate_forward: input has " + std::to_string(x.size()) +
                                              " features, model expects " + std::to_string(params.gate.size()));
  Vector out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    out(j) = gate_open(params.gate(j), params.epsilon) ? x(j) * params.gate(j) : 0.0;
  }
  return out;
}

ForwardTrace forward(const Matrix& x, const ModelParams& params, bool with_head) {
  require(static_cast<std::size_t>(x.cols()) == params.input_dim(),
          "forward: input has " + std::to_string(x.cols()) + " features, model expects " +
              std::to_string(params.input_dim()));
  ForwardTrace t;
  t.input = x;
  t.gated.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (gate_open(params.gate(j), params.epsilon)) {
      t.gated.col(j) = x.col(j) * params.gate(j);
    } else {
      t.gated.col(j).setZero();
    }
  }
  run_stack(t.gated, params.projection, t.projection);
  if (with_head) run_stack(t.latent(), params.head, t.head);
  return t;
}

Matrix forward_output(const Matrix& x, const ModelParams& params, std::size_t threads) {
  const auto rows = static_cast<std::size_t>(x.rows());
  Matrix out(x.rows(), static_cast<Eigen::Index>(params.output_dim()));
  parallel_for(chunk_count(rows), threads, [&](std::size_t c) {
    const auto begin = static_cast<Eigen::Index>(c * kRowChunk);
    const auto count = std::min<Eigen::Index>(static_cast<Eigen::Index>(kRowChunk), x.rows() - begin);
    const Matrix block = x.middleRows(begin, count);
    out.middleRows(begin, count) = forward(block, params).output();
  });
  return out;
}

std::vector<std::size_t> active_features(const ModelParams& params) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < params.gate.size(); ++j) {
    if (gate_open(params.gate(j), params.epsilon)) out.push_back(static_cast<std::size_t>(j));
  }
  return out;
}

}  // namespace evnet
