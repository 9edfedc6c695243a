#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "evnet/serialize.hpp"

namespace evnet {
namespace {

[[noreturn]] void bad(const std::string& what) { fail(ErrorCode::kFormat, what); }

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) bad(where + " must be an object");
  auto it = j.find(key);
  if (it == j.end()) bad(where + " is missing '" + key + "'");
  return *it;
}

template <typename T>
T get_as(const Json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(what + " has the wrong type");
  }
}

Json vec_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vec_from(const Json& j, const std::string& what) {
  auto vals = get_as<std::vector<double>>(j, what);
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Json layer_json(const DenseLayer& l) {
  Json o;
  o["rows"] = l.weight.rows();
  o["cols"] = l.weight.cols();
  o["weight"] = std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size());
  if (l.has_bias()) {
    o["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
  } else {
    o["bias"] = nullptr;
  }
  return o;
}

DenseLayer layer_from(const Json& j, const std::string& where) {
  DenseLayer l;
  const auto rows = get_as<Eigen::Index>(field(j, "rows", where), where + ".rows");
  const auto cols = get_as<Eigen::Index>(field(j, "cols", where), where + ".cols");
  if (rows < 1 || cols < 1) bad(where + " has an empty shape");
  auto w = get_as<std::vector<double>>(field(j, "weight", where), where + ".weight");
  if (static_cast<Eigen::Index>(w.size()) != rows * cols) {
    bad(where + ".weight has " + std::to_string(w.size()) + " values, shape needs " + std::to_string(rows * cols));
  }
  l.weight = Eigen::Map<const Matrix>(w.data(), rows, cols);
  const Json& b = field(j, "bias", where);
  if (!b.is_null()) {
    auto bv = get_as<std::vector<double>>(b, where + ".bias");
    if (static_cast<Eigen::Index>(bv.size()) != cols) bad(where + ".bias length does not match cols");
    l.bias = Eigen::Map<const RowVector>(bv.data(), cols);
  }
  return l;
}

Json stack_json(const std::vector<DenseLayer>& layers) {
  Json a = Json::array();
  for (const auto& l : layers) a.push_back(layer_json(l));
  return a;
}

std::vector<DenseLayer> stack_from(const Json& j, const std::string& where) {
  if (!j.is_array()) bad(where + " must be an array");
  std::vector<DenseLayer> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(layer_from(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

Json grads_json(const Gradients& g) {
  Json o;
  o["gate"] = vec_json(g.gate);
  o["projection"] = stack_json(g.projection);
  o["head"] = stack_json(g.head);
  return o;
}

Gradients grads_from(const Json& j, const std::string& where) {
  Gradients g;
  g.gate = vec_from(field(j, "gate", where), where + ".gate");
  g.projection = stack_from(field(j, "projection", where), where + ".projection");
  g.head = stack_from(field(j, "head", where), where + ".head");
  return g;
}

bool same_shapes(const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols()) return false;
    if (a[i].bias.size() != b[i].bias.size()) return false;
  }
  return true;
}

}  // namespace

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    bad(what + " is not valid JSON: " + e.what());
  }
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["k"] = c.k;
  j["p_u"] = c.p_u;
  j["nu_y"] = c.nu_y;
  j["nu_z"] = c.nu_z;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["target_features"] = c.target_features;
  j["seed"] = c.seed;
  j["supervised"] = c.supervised;
  j["detach_target"] = c.detach_target;
  j["shared_ru"] = c.shared_ru;
  j["include_diagonal"] = c.include_diagonal;
  j["epsilon"] = c.epsilon;
  j["normalization"] = to_string(c.normalization);
  j["projection_shape"] = c.shape.projection;
  j["head_shape"] = c.shape.head;
  return j;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const Json& v = it.value();
    auto num = [&](auto& dst) {
      using T = std::decay_t<decltype(dst)>;
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) fail(ErrorCode::kInvalidArgument, "config." + key + " must be a number");
      } else {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
          fail(ErrorCode::kInvalidArgument, "config." + key + " must be a non-negative integer");
        }
      }
      dst = v.get<T>();
    };
    auto flag = [&](bool& dst) {
      if (!v.is_boolean()) fail(ErrorCode::kInvalidArgument, "config." + key + " must be a boolean");
      dst = v.get<bool>();
    };
    auto widths = [&](std::vector<std::size_t>& dst) {
      if (!v.is_array() || v.empty()) fail(ErrorCode::kInvalidArgument, "config." + key + " must be a non-empty array");
      dst.clear();
      for (const auto& w : v) {
        if (!w.is_number_unsigned() || w.get<std::size_t>() == 0) {
          fail(ErrorCode::kInvalidArgument, "config." + key + " entries must be positive integers");
        }
        dst.push_back(w.get<std::size_t>());
      }
    };
    if (key == "epochs") num(c.epochs);
    else if (key == "batch_size") num(c.batch_size);
    else if (key == "k") num(c.k);
    else if (key == "p_u") num(c.p_u);
    else if (key == "nu_y") num(c.nu_y);
    else if (key == "nu_z") num(c.nu_z);
    else if (key == "lr") num(c.lr);
    else if (key == "weight_decay") num(c.weight_decay);
    else if (key == "target_features") num(c.target_features);
    else if (key == "seed") num(c.seed);
    else if (key == "threads") num(c.threads);
    else if (key == "supervised") flag(c.supervised);
    else if (key == "detach_target") flag(c.detach_target);
    else if (key == "shared_ru") flag(c.shared_ru);
    else if (key == "include_diagonal") flag(c.include_diagonal);
    else if (key == "epsilon") num(c.epsilon);
    else if (key == "normalization") {
      if (!v.is_string()) fail(ErrorCode::kInvalidArgument, "config.normalization must be a string");
      c.normalization = parse_norm_mode(v.get<std::string>());
    } else if (key == "projection_shape") widths(c.shape.projection);
    else if (key == "head_shape") widths(c.shape.head);
    else fail(ErrorCode::kInvalidArgument, "config: unknown key '" + key + "'");
  }
  return c;
}

Json to_json(const TrainReport& r, bool with_wall_time) {
  Json j;
  j["pruning"] = r.pruning;
  j["target_features"] = r.target_features;
  j["target_reached"] = r.target_reached;
  j["warnings"] = r.warnings;
  // Derived from the state, so resumed runs never duplicate it.
  Json flags = Json::array();
  if (r.pruning && !r.target_reached && !r.history.empty()) {
    flags.push_back("A_f not reached: " + std::to_string(r.history.back().active) + " features still active, target " +
                    std::to_string(r.target_features));
  }
  j["flags"] = std::move(flags);
  Json h = Json::array();
  for (const auto& e : r.history) {
    Json row;
    row["epoch"] = e.epoch;
    row["l_sp"] = e.l_sp;
    row["l_r"] = e.l_r;
    row["lambda"] = e.lambda;
    row["total"] = e.total;
    row["active"] = e.active;
    if (with_wall_time) row["wall_ms"] = e.wall_ms;
    h.push_back(std::move(row));
  }
  j["history"] = std::move(h);
  return j;
}

TrainReport train_report_from_json(const Json& j) {
  const std::string w = "report";
  TrainReport r;
  r.pruning = get_as<bool>(field(j, "pruning", w), "report.pruning");
  r.target_features = get_as<std::size_t>(field(j, "target_features", w), "report.target_features");
  r.target_reached = get_as<bool>(field(j, "target_reached", w), "report.target_reached");
  r.warnings = get_as<std::vector<std::string>>(field(j, "warnings", w), "report.warnings");
  for (const auto& row : field(j, "history", w)) {
    EpochRecord e;
    e.epoch = get_as<std::size_t>(field(row, "epoch", "history"), "history.epoch");
    e.l_sp = get_as<double>(field(row, "l_sp", "history"), "history.l_sp");
    e.l_r = get_as<double>(field(row, "l_r", "history"), "history.l_r");
    e.lambda = get_as<double>(field(row, "lambda", "history"), "history.lambda");
    e.total = get_as<double>(field(row, "total", "history"), "history.total");
    e.active = get_as<std::size_t>(field(row, "active", "history"), "history.active");
    r.history.push_back(e);
  }
  return r;
}

Json to_json(const NormalizationStats& s) {
  Json j;
  j["mode"] = to_string(s.mode);
  j["offset"] = s.offset;
  j["scale"] = s.scale;
  return j;
}

NormalizationStats normalization_from_json(const Json& j) {
  NormalizationStats s;
  try {
    s.mode = parse_norm_mode(get_as<std::string>(field(j, "mode", "normalization"), "normalization.mode"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormat) throw;
    bad(std::string("normalization.mode: ") + e.what());
  }
  s.offset = get_as<std::vector<double>>(field(j, "offset", "normalization"), "normalization.offset");
  s.scale = get_as<std::vector<double>>(field(j, "scale", "normalization"), "normalization.scale");
  if (s.offset.size() != s.scale.size()) bad("normalization offset and scale lengths differ");
  return s;
}

Json to_json(const ModelParams& p) {
  Json j;
  j["epsilon"] = p.epsilon;
  j["gate"] = vec_json(p.gate);
  j["projection"] = stack_json(p.projection);
  j["head"] = stack_json(p.head);
  return j;
}

ModelParams model_params_from_json(const Json& j) {
  ModelParams p;
  p.epsilon = get_as<double>(field(j, "epsilon", "model"), "model.epsilon");
  p.gate = vec_from(field(j, "gate", "model"), "model.gate");
  p.projection = stack_from(field(j, "projection", "model"), "model.projection");
  p.head = stack_from(field(j, "head", "model"), "model.head");
  try {
    validate(p);
  } catch (const Error& e) {
    bad(std::string("model shape inconsistency: ") + e.what());
  }
  return p;
}

Checkpoint make_checkpoint(TrainerState state, const Dataset& prepared) {
  Checkpoint c;
  c.state = std::move(state);
  c.feature_names = prepared.feature_names;
  if (!prepared.label_name.empty()) c.label_name = prepared.label_name;
  c.normalization = prepared.normalization;
  return c;
}

Json to_json(const Checkpoint& c) {
  const auto& s = c.state;
  Json j;
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(s.config);
  j["feature_names"] = c.feature_names;
  j["label_name"] = c.label_name ? Json(*c.label_name) : Json(nullptr);
  j["normalization"] = c.normalization ? to_json(*c.normalization) : Json(nullptr);
  j["model"] = to_json(s.params);
  Json opt;
  opt["step"] = s.optimizer.step;
  opt["m"] = grads_json(s.optimizer.m);
  opt["v"] = grads_json(s.optimizer.v);
  j["optimizer"] = std::move(opt);
  Json lam;
  lam["lambda"] = s.lambda.lambda;
  lam["frozen"] = s.lambda.frozen;
  lam["initialized"] = s.lambda.initialized;
  j["lambda"] = std::move(lam);
  j["epochs_completed"] = s.epochs_completed;
  j["report"] = to_json(s.report);
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  if (!j.is_object()) bad("checkpoint must be a JSON object");
  auto vit = j.find("version");
  if (vit == j.end() || !vit->is_string() || vit->get<std::string>() != kCheckpointVersion) {
    const std::string got = (vit != j.end() && vit->is_string()) ? "'" + vit->get<std::string>() + "'" : "none";
    bad(std::string("unsupported checkpoint version ") + got + ", expected \"" + kCheckpointVersion + "\"");
  }
  Checkpoint c;
  auto& s = c.state;
  try {
    s.config = train_config_from_json(field(j, "config", "checkpoint"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormat) throw;
    bad(e.what());
  }
  c.feature_names = get_as<std::vector<std::string>>(field(j, "feature_names", "checkpoint"), "feature_names");
  const Json& ln = field(j, "label_name", "checkpoint");
  if (!ln.is_null()) c.label_name = get_as<std::string>(ln, "label_name");
  const Json& norm = field(j, "normalization", "checkpoint");
  if (!norm.is_null()) c.normalization = normalization_from_json(norm);
  s.params = model_params_from_json(field(j, "model", "checkpoint"));
  const std::size_t n = s.params.input_dim();
  if (c.feature_names.size() != n) bad("feature_names length does not match the model input width");
  if (c.normalization && c.normalization->offset.size() != n) bad("normalization width does not match the model");
  if (!(s.params.shape() == s.config.shape)) bad("model layer widths do not match config shape");

  const Json& opt = field(j, "optimizer", "checkpoint");
  s.optimizer.step = get_as<std::uint64_t>(field(opt, "step", "optimizer"), "optimizer.step");
  s.optimizer.m = grads_from(field(opt, "m", "optimizer"), "optimizer.m");
  s.optimizer.v = grads_from(field(opt, "v", "optimizer"), "optimizer.v");
  for (const Gradients* g : {&s.optimizer.m, &s.optimizer.v}) {
    if (g->gate.size() != s.params.gate.size() || !same_shapes(g->projection, s.params.projection) ||
        !same_shapes(g->head, s.params.head)) {
      bad("optimizer moments do not match the model shape");
    }
  }
  const Json& lam = field(j, "lambda", "checkpoint");
  s.lambda.lambda = get_as<double>(field(lam, "lambda", "lambda"), "lambda.lambda");
  s.lambda.frozen = get_as<bool>(field(lam, "frozen", "lambda"), "lambda.frozen");
  s.lambda.initialized = get_as<bool>(field(lam, "initialized", "lambda"), "lambda.initialized");
  s.epochs_completed = get_as<std::size_t>(field(j, "epochs_completed", "checkpoint"), "epochs_completed");
  s.report = train_report_from_json(field(j, "report", "checkpoint"));
  if (s.report.history.size() != s.epochs_completed) bad("report history length does not match epochs_completed");
  return c;
}

std::string checkpoint_to_string(const Checkpoint& ckpt) { return to_json(ckpt).dump(1) + "\n"; }

Checkpoint checkpoint_from_string(const std::string& text) {
  return checkpoint_from_json(parse_json(text, "checkpoint"));
}

void write_text_atomic(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open '" + tmp.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::kIo, "cannot move checkpoint into place at '" + path + "'");
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_text_atomic(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_string(read_text(path)); }

}  // namespace evnet
