#include "evnet/serialize.hpp"

namespace evnet {

Json to_json(const ImportanceReport& r) {
  Json j;
  j["version"] = kReportVersion;
  j["kind"] = to_string(r.kind);
  j["clusters"] = r.clusters;
  if (r.kind != ImportanceKind::kGlobal) {
    j["sample_count"] = r.sample_count;
    j["repeats"] = r.repeats;
    j["seed"] = r.seed;
    j["average_all"] = r.average_all;
  }
  Json feats = Json::array();
  for (std::size_t f = 0; f < static_cast<std::size_t>(r.values.size()); ++f) {
    Json e;
    e["name"] = f < r.feature_names.size() ? r.feature_names[f] : "f" + std::to_string(f);
    e["index"] = f;
    e["value"] = r.values(static_cast<Eigen::Index>(f));
    e["skipped_draws"] = f < r.skipped_draws.size() ? r.skipped_draws[f] : 0;
    e["active"] = f < r.active.size() ? static_cast<bool>(r.active[f]) : true;
    feats.push_back(std::move(e));
  }
  j["features"] = std::move(feats);
  j["warnings"] = r.warnings;
  return j;
}

Json to_json(const ClusterModel& m, bool with_assignments) {
  Json j;
  j["version"] = kReportVersion;
  j["k"] = m.k();
  Json centers = Json::array();
  for (Eigen::Index c = 0; c < m.centers.rows(); ++c) {
    centers.push_back(std::vector<double>(m.centers.row(c).data(), m.centers.row(c).data() + m.centers.cols()));
  }
  j["centers"] = std::move(centers);
  std::vector<std::size_t> sizes(m.k(), 0);
  for (auto a : m.assignments) {
    if (a < sizes.size()) sizes[a] += 1;
  }
  j["sizes"] = sizes;
  j["inertia"] = m.inertia;
  j["iterations"] = m.iterations;
  if (with_assignments) j["assignments"] = m.assignments;
  return j;
}

ClusterModel cluster_model_from_json(const Json& j) {
  ClusterModel m;
  try {
    const auto centers = j.at("centers").get<std::vector<std::vector<double>>>();
    if (centers.empty()) fail(ErrorCode::kFormat, "cluster model has no centers");
    const auto d = static_cast<Eigen::Index>(centers.front().size());
    m.centers.resize(static_cast<Eigen::Index>(centers.size()), d);
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (static_cast<Eigen::Index>(centers[c].size()) != d) fail(ErrorCode::kFormat, "cluster centers differ in width");
      for (Eigen::Index k = 0; k < d; ++k) m.centers(static_cast<Eigen::Index>(c), k) = centers[c][static_cast<std::size_t>(k)];
    }
    m.assignments = j.at("assignments").get<std::vector<std::size_t>>();
    m.inertia = j.value("inertia", 0.0);
    m.iterations = j.value("iterations", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("cluster model: ") + e.what());
  }
  for (auto a : m.assignments) {
    if (a >= m.k()) fail(ErrorCode::kFormat, "cluster model: assignment " + std::to_string(a) + " out of range");
  }
  return m;
}

Json to_json(const MetricRecord& m) {
  Json j;
  j["version"] = kReportVersion;
  j["metric"] = m.metric;
  j["value"] = m.value;
  j["k_or_folds"] = m.k_or_folds;
  j["seed"] = m.seed;
  return j;
}

Dataset prepare_for_model(const Dataset& raw, const Checkpoint& ckpt, std::size_t threads) {
  const auto& p = ckpt.state.params;
  require(raw.cols() == p.input_dim(), "dataset has " + std::to_string(raw.cols()) + " features, model expects " +
                                           std::to_string(p.input_dim()));
  Dataset d = ckpt.normalization ? apply_normalization(raw, *ckpt.normalization) : raw;
  const auto& cfg = ckpt.state.config;
  require(d.rows() > cfg.k, "dataset has " + std::to_string(d.rows()) + " rows, need more than k=" +
                                std::to_string(cfg.k));
  return build_knn(d, cfg.k, cfg.supervised, threads);
}

ExplainOptions explain_options_from_json(const Json& request, const TrainConfig& cfg, std::size_t threads) {
  ExplainOptions o;
  o.augment = augment_config(cfg);
  o.nu_z = cfg.nu_z;
  o.threads = threads;
  if (request.is_null()) return o;
  require(request.is_object(), "explain request must be a JSON object");
  if (auto it = request.find("repeats"); it != request.end()) {
    require(it->is_number_unsigned() && it->get<std::size_t>() >= 1, "repeats must be a positive integer");
    o.repeats = it->get<std::size_t>();
  }
  if (auto it = request.find("seed"); it != request.end()) {
    require(it->is_number_unsigned(), "seed must be a non-negative integer");
    o.seed = it->get<std::uint64_t>();
  }
  if (auto it = request.find("average_all"); it != request.end()) {
    require(it->is_boolean(), "average_all must be a boolean");
    o.average_all = it->get<bool>();
  }
  return o;
}

}  // namespace evnet
