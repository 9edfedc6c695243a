#include "evnet/service.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <mutex>
#include <shared_mutex>
#include <thread>
#include <vector>

#include "evnet/eval.hpp"
#include "evnet/explain.hpp"
#include "evnet/serialize.hpp"
#include "evnet/trainer.hpp"

// After Eigen: httplib pulls in system headers whose macros clash with it.
#include <httplib.h>

namespace evnet {

std::map<std::string, std::string> parse_query(const std::string& query) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos <= query.size()) {
    const std::size_t amp = std::min(query.find('&', pos), query.size());
    const std::string part = query.substr(pos, amp - pos);
    if (!part.empty()) {
      const std::size_t eq = part.find('=');
      const std::string key = httplib::detail::decode_url(part.substr(0, eq), true);
      const std::string val = eq == std::string::npos ? "" : httplib::detail::decode_url(part.substr(eq + 1), true);
      out[key] = val;
    }
    pos = amp + 1;
  }
  return out;
}

namespace {

struct ApiError {
  int status;
  std::string code;
  std::string message;
  std::string field;
};

[[noreturn]] void throw_api(int status, std::string code, std::string message, std::string field = {}) {
  throw ApiError{status, std::move(code), std::move(message), std::move(field)};
}

[[noreturn]] void bad_request(std::string message, std::string field = {}) {
  throw_api(400, "bad_request", std::move(message), std::move(field));
}

HttpResponse json_response(int status, const Json& body) { return {status, body.dump(), "application/json"}; }

HttpResponse error_response(const ApiError& e) {
  Json j;
  j["code"] = e.code;
  j["message"] = e.message;
  if (!e.field.empty()) j["field"] = e.field;
  return json_response(e.status, j);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    const std::size_t slash = std::min(path.find('/', pos), path.size());
    if (slash > pos) parts.push_back(path.substr(pos, slash - pos));
    pos = slash + 1;
  }
  return parts;
}

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  try {
    Json j = Json::parse(body);
    if (!j.is_object()) bad_request("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    bad_request(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::size_t uint_field(const Json& body, const char* key, std::optional<std::size_t> fallback = std::nullopt) {
  auto it = body.find(key);
  if (it == body.end()) {
    if (fallback) return *fallback;
    bad_request(std::string("missing required field '") + key + "'", key);
  }
  if (!it->is_number_unsigned()) bad_request(std::string("'") + key + "' must be a non-negative integer", key);
  return it->get<std::size_t>();
}

struct StoredDataset {
  std::string id;
  std::string name;
  Dataset raw;
};

struct ClusterState {
  ClusterModel model;
  ClusterView view;
  std::uint64_t seed = 0;
};

struct ModelEntry {
  std::string id;
  std::string dataset_id;
  Checkpoint ckpt;
  Dataset train;  // normalized, with kNN graph
  Dataset test;   // normalized
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  Matrix train_embedding;
  Matrix test_embedding;

  std::mutex mu;
  std::shared_ptr<const ClusterState> clusters;
  std::optional<Json> metrics;
};

enum class JobState { kQueued, kRunning, kDone, kFailed };

const char* to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "failed";
}

struct Job {
  std::string id;
  std::string dataset_id;
  std::string model_id;
  TrainConfig config;
  double train_fraction = 0.8;
  JobState state = JobState::kQueued;
  std::vector<EpochRecord> history;
  std::string error;
};

Json job_json(const Job& j) {
  Json o;
  o["id"] = j.id;
  o["kind"] = "train";
  o["state"] = to_string(j.state);
  o["dataset_id"] = j.dataset_id;
  o["model_id"] = j.model_id;
  Json prog;
  prog["epoch"] = j.history.empty() ? 0 : j.history.back().epoch;
  prog["epochs"] = j.config.epochs;
  if (!j.history.empty()) {
    const auto& h = j.history.back();
    prog["l_sp"] = h.l_sp;
    prog["l_r"] = h.l_r;
    prog["lambda"] = h.lambda;
    prog["active"] = h.active;
  }
  o["progress"] = std::move(prog);
  TrainReport r;
  r.history = j.history;
  o["history"] = to_json(r)["history"];
  o["config"] = to_json(j.config);
  if (!j.error.empty()) o["error"] = j.error;
  return o;
}

Json summary_json(const StoredDataset& s) {
  const Dataset& d = s.raw;
  Json j;
  j["id"] = s.id;
  j["name"] = s.name;
  j["rows"] = d.rows();
  j["cols"] = d.cols();
  j["feature_names"] = d.feature_names;
  j["has_labels"] = d.has_labels();
  if (d.has_labels()) {
    j["label_name"] = d.label_name;
    std::map<int, std::size_t> counts;
    for (int l : *d.labels) counts[l] += 1;
    Json classes = Json::array();
    for (auto [label, count] : counts) classes.push_back({{"label", label}, {"count", count}});
    j["classes"] = std::move(classes);
  }
  constexpr int kBins = 10;
  Json feats = Json::array();
  for (Eigen::Index f = 0; f < d.features.cols(); ++f) {
    const double lo = d.features.col(f).minCoeff();
    const double hi = d.features.col(f).maxCoeff();
    std::vector<std::size_t> hist(kBins, 0);
    for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
      int b = hi > lo ? static_cast<int>((d.features(i, f) - lo) / (hi - lo) * kBins) : 0;
      hist[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))] += 1;
    }
    Json e;
    e["name"] = d.feature_names[static_cast<std::size_t>(f)];
    e["min"] = lo;
    e["max"] = hi;
    e["histogram"] = hist;
    feats.push_back(std::move(e));
  }
  j["features"] = std::move(feats);
  return j;
}

}  // namespace

struct Service::Impl {
  ServiceOptions opts;

  std::shared_mutex mu;  // guards the maps below
  std::map<std::string, std::shared_ptr<const StoredDataset>> datasets;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::map<std::string, std::string> job_of_model;
  std::map<std::string, std::shared_ptr<ModelEntry>> models;
  std::size_t next_id = 1;

  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::condition_variable idle_cv;
  std::deque<std::string> queue;
  bool busy = false;
  std::atomic<bool> shutting_down{false};
  std::thread worker;

  std::mutex server_mu;
  httplib::Server* server = nullptr;

  explicit Impl(ServiceOptions o) : opts(std::move(o)) {
    if (opts.data_dir) {
      std::filesystem::create_directories(std::filesystem::path(*opts.data_dir) / "datasets");
      std::filesystem::create_directories(std::filesystem::path(*opts.data_dir) / "models");
    }
    worker = std::thread([this] { work(); });
  }

  ~Impl() {
    {
      std::lock_guard<std::mutex> lock(queue_mu);
      shutting_down = true;
    }
    queue_cv.notify_all();
    worker.join();
  }

  std::string make_id(const char* prefix) { return std::string(prefix) + "-" + std::to_string(next_id++); }

  void work() {
    for (;;) {
      std::string job_id;
      {
        std::unique_lock<std::mutex> lock(queue_mu);
        queue_cv.wait(lock, [&] { return shutting_down || !queue.empty(); });
        if (shutting_down) return;
        job_id = queue.front();
        queue.pop_front();
        busy = true;
      }
      run_job(job_id);
      {
        std::lock_guard<std::mutex> lock(queue_mu);
        busy = false;
      }
      idle_cv.notify_all();
    }
  }

  void run_job(const std::string& job_id) {
    std::shared_ptr<Job> job;
    std::shared_ptr<const StoredDataset> data;
    {
      std::unique_lock lock(mu);
      job = jobs.at(job_id);
      data = datasets.at(job->dataset_id);
      job->state = JobState::kRunning;
    }
    try {
      auto entry = std::make_shared<ModelEntry>();
      entry->id = job->model_id;
      entry->dataset_id = job->dataset_id;
      TrainConfig cfg = job->config;
      cfg.threads = opts.threads;
      Dataset raw_train = data->raw;
      Dataset raw_test;
      if (job->train_fraction < 1.0) {
        SplitIndices idx = split_indices(data->raw.rows(), SplitSpec{job->train_fraction, cfg.seed});
        raw_train = select_rows(data->raw, idx.train);
        raw_test = select_rows(data->raw, idx.test);
        entry->train_rows = std::move(idx.train);
        entry->test_rows = std::move(idx.test);
      } else {
        entry->train_rows.resize(data->raw.rows());
        for (std::size_t i = 0; i < entry->train_rows.size(); ++i) entry->train_rows[i] = i;
      }
      entry->train = prepare_training_data(raw_train, cfg);
      TrainerState state = fit(entry->train, cfg, [&](const TrainerState& s) {
        if (shutting_down) fail(ErrorCode::kState, "service shutting down");
        std::unique_lock lock(mu);
        job->history.push_back(s.report.history.back());
      });
      state.config.threads = 1;
      entry->ckpt = make_checkpoint(std::move(state), entry->train);
      entry->train_embedding = embed(entry->train.features, entry->ckpt.state.params, opts.threads);
      if (!entry->test_rows.empty()) {
        entry->test = apply_normalization(raw_test, *entry->ckpt.normalization);
        entry->test_embedding = embed(entry->test.features, entry->ckpt.state.params, opts.threads);
      }
      if (opts.data_dir) {
        save_checkpoint(entry->ckpt,
                        (std::filesystem::path(*opts.data_dir) / "models" / (entry->id + ".ckpt")).string());
      }
      std::unique_lock lock(mu);
      models[entry->id] = entry;
      job->state = JobState::kDone;
    } catch (const std::exception& e) {
      std::unique_lock lock(mu);
      job->state = JobState::kFailed;
      job->error = e.what();
    }
  }

  HttpResponse post_dataset(const HttpRequest& req) {
    std::string name = "upload";
    Dataset raw;
    const auto first = req.body.find_first_not_of(" \t\r\n");
    const bool is_json = first != std::string::npos && req.body[first] == '{';
    try {
      if (is_json) {
        const Json body = parse_body(req.body);
        if (body.contains("synthetic")) {
          if (!body["synthetic"].is_string()) bad_request("'synthetic' must be a string", "synthetic");
          const std::uint64_t seed = uint_field(body, "seed", 0);
          raw = make_synthetic(parse_synthetic_spec(body["synthetic"].get<std::string>()), seed);
          name = body["synthetic"].get<std::string>();
        } else {
          if (!body.contains("csv") || !body["csv"].is_string()) bad_request("missing required field 'csv'", "csv");
          std::optional<std::string> label;
          if (body.contains("label_column")) {
            if (!body["label_column"].is_string()) bad_request("'label_column' must be a string", "label_column");
            label = body["label_column"].get<std::string>();
          }
          raw = parse_csv(body["csv"].get<std::string>(), label, "upload");
        }
        if (body.contains("name") && body["name"].is_string()) name = body["name"].get<std::string>();
      } else {
        std::optional<std::string> label;
        if (auto it = req.query.find("label"); it != req.query.end() && !it->second.empty()) label = it->second;
        raw = parse_csv(req.body, label, "upload");
        if (auto it = req.query.find("name"); it != req.query.end()) name = it->second;
      }
    } catch (const Error& e) {
      bad_request(e.what(), is_json ? "csv" : "body");
    }
    auto stored = std::make_shared<StoredDataset>();
    stored->name = name;
    stored->raw = std::move(raw);
    {
      std::unique_lock lock(mu);
      stored->id = make_id("ds");
      datasets[stored->id] = stored;
    }
    if (opts.data_dir) {
      save_csv(stored->raw, (std::filesystem::path(*opts.data_dir) / "datasets" / (stored->id + ".csv")).string());
    }
    Json out = summary_json(*stored);
    return json_response(201, out);
  }

  std::shared_ptr<const StoredDataset> find_dataset(const std::string& id) {
    std::shared_lock lock(mu);
    auto it = datasets.find(id);
    if (it == datasets.end()) throw_api(404, "not_found", "unknown dataset '" + id + "'");
    return it->second;
  }

  HttpResponse post_train(const HttpRequest& req) {
    const Json body = parse_body(req.body);
    if (!body.contains("dataset_id") || !body["dataset_id"].is_string()) {
      bad_request("missing required field 'dataset_id'", "dataset_id");
    }
    const std::string ds_id = body["dataset_id"].get<std::string>();
    auto data = find_dataset(ds_id);
    TrainConfig cfg;
    try {
      if (body.contains("config")) cfg = train_config_from_json(body["config"]);
      validate(cfg);
    } catch (const Error& e) {
      bad_request(e.what(), "config");
    }
    double fraction = opts.train_fraction;
    if (body.contains("train_fraction")) {
      if (!body["train_fraction"].is_number()) bad_request("'train_fraction' must be a number", "train_fraction");
      fraction = body["train_fraction"].get<double>();
      if (!(fraction > 0.0 && fraction <= 1.0)) bad_request("'train_fraction' must lie in (0, 1]", "train_fraction");
    }
    const auto train_rows = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data->raw.rows())));
    if (cfg.target_features > data->raw.cols()) {
      bad_request("target_features exceeds the feature count (" + std::to_string(data->raw.cols()) + ")",
                  "config.target_features");
    }
    if (cfg.k >= train_rows) bad_request("k must be smaller than the training rows", "config.k");
    if (cfg.supervised && !data->raw.has_labels()) bad_request("supervised training needs labels", "config.supervised");

    auto job = std::make_shared<Job>();
    job->dataset_id = ds_id;
    job->config = cfg;
    job->config.threads = 1;
    job->train_fraction = fraction;
    {
      std::unique_lock lock(mu);
      job->id = make_id("job");
      job->model_id = make_id("model");
      jobs[job->id] = job;
      job_of_model[job->model_id] = job->id;
    }
    {
      std::lock_guard<std::mutex> lock(queue_mu);
      queue.push_back(job->id);
    }
    queue_cv.notify_one();
    std::shared_lock lock(mu);
    return json_response(202, job_json(*job));
  }

  HttpResponse get_job(const std::string& id) {
    std::shared_lock lock(mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw_api(404, "not_found", "unknown job '" + id + "'");
    return json_response(200, job_json(*it->second));
  }

  std::shared_ptr<ModelEntry> find_model(const std::string& id) {
    std::shared_lock lock(mu);
    if (auto it = models.find(id); it != models.end()) return it->second;
    if (auto jt = job_of_model.find(id); jt != job_of_model.end()) {
      const Job& job = *jobs.at(jt->second);
      if (job.state == JobState::kFailed) {
        throw_api(409, "conflict", "model '" + id + "' is unavailable: its training job failed: " + job.error);
      }
      throw_api(409, "conflict", "model '" + id + "' is still training (job " + job.id + " is " +
                                     to_string(job.state) + ")");
    }
    throw_api(404, "not_found", "unknown model '" + id + "'");
  }

  HttpResponse get_embedding(const std::string& id, const HttpRequest& req) {
    auto m = find_model(id);
    std::string which = "train";
    if (auto it = req.query.find("split"); it != req.query.end()) which = it->second;
    if (which != "train" && which != "test") bad_request("split must be 'train' or 'test'", "split");
    const bool train = which == "train";
    const Matrix& z = train ? m->train_embedding : m->test_embedding;
    const Dataset& d = train ? m->train : m->test;
    const auto& rows = train ? m->train_rows : m->test_rows;
    std::shared_ptr<const ClusterState> cl;
    {
      std::lock_guard<std::mutex> lock(m->mu);
      cl = m->clusters;
    }
    Json out;
    out["model_id"] = id;
    out["split"] = which;
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Json r;
      r["i"] = i;
      r["row"] = rows[static_cast<std::size_t>(i)];
      r["x"] = z(i, 0);
      r["y"] = z(i, 1);
      if (d.has_labels()) r["label"] = (*d.labels)[static_cast<std::size_t>(i)];
      if (train && cl) r["cluster"] = cl->model.assignments[static_cast<std::size_t>(i)];
      arr.push_back(std::move(r));
    }
    out["rows"] = std::move(arr);
    return json_response(200, out);
  }

  HttpResponse post_cluster(const std::string& id, const HttpRequest& req) {
    auto m = find_model(id);
    const Json body = parse_body(req.body);
    const std::size_t k = uint_field(body, "k");
    const std::uint64_t seed = uint_field(body, "seed", 0);
    if (k < 1 || k > static_cast<std::size_t>(m->train_embedding.rows())) {
      bad_request("k must lie in [1, " + std::to_string(m->train_embedding.rows()) + "]", "k");
    }
    auto state = std::make_shared<ClusterState>();
    state->model = kmeans_fit(m->train_embedding, k, seed);
    state->view = ClusterView::from_model(state->model);
    state->seed = seed;
    {
      std::lock_guard<std::mutex> lock(m->mu);
      m->clusters = state;
    }
    Json out = to_json(state->model);
    out["model_id"] = id;
    out["seed"] = seed;
    return json_response(200, out);
  }

  std::shared_ptr<const ClusterState> require_clusters(ModelEntry& m) {
    std::lock_guard<std::mutex> lock(m.mu);
    if (!m.clusters) {
      throw_api(409, "conflict", "model '" + m.id + "' has no cluster model; POST /models/" + m.id + "/cluster first");
    }
    return m.clusters;
  }

  static std::size_t cluster_field(const Json& body, const char* key, std::size_t k) {
    const std::size_t c = uint_field(body, key);
    if (c >= k) bad_request(std::string("'") + key + "' must be below " + std::to_string(k), key);
    return c;
  }

  ExplainOptions explain_opts(const Json& body, const ModelEntry& m) {
    try {
      return explain_options_from_json(body, m.ckpt.state.config, opts.threads);
    } catch (const Error& e) {
      bad_request(e.what());
    }
  }

  HttpResponse explain(const std::string& id, const std::string& kind, const HttpRequest& req) {
    auto m = find_model(id);
    const Json body = parse_body(req.body);
    if (kind == "global") {
      return json_response(200, to_json(global_importance(m->ckpt.state.params, m->ckpt.feature_names)));
    }
    if (kind == "local") {
      const bool has_cluster = body.contains("cluster_id");
      const bool has_points = body.contains("point_ids");
      if (has_cluster && has_points) {
        bad_request("give either 'cluster_id' or 'point_ids', not both", "cluster_id");
      }
      if (!has_cluster && !has_points) bad_request("one of 'cluster_id' or 'point_ids' is required", "cluster_id");
      auto cl = require_clusters(*m);
      const ExplainOptions o = explain_opts(body, *m);
      ImportanceReport rep;
      if (has_cluster) {
        const std::size_t c = cluster_field(body, "cluster_id", cl->model.k());
        if (cl->view.members[c].empty()) bad_request("cluster " + std::to_string(c) + " is empty", "cluster_id");
        rep = local_importance(m->train, m->ckpt.state.params, cl->view, c, o);
      } else {
        const Json& ids = body["point_ids"];
        if (!ids.is_array() || ids.empty()) bad_request("'point_ids' must be a non-empty array", "point_ids");
        std::vector<std::size_t> rows;
        for (const auto& v : ids) {
          if (!v.is_number_unsigned() || v.get<std::size_t>() >= m->train.rows()) {
            bad_request("point ids must be integers below " + std::to_string(m->train.rows()), "point_ids");
          }
          rows.push_back(v.get<std::size_t>());
        }
        const ClusterView view = with_selection(cl->view, m->train_embedding, rows);
        rep = local_importance(m->train, m->ckpt.state.params, view, view.members.size() - 1, o);
      }
      Json out = to_json(rep);
      out["model_id"] = id;
      return json_response(200, out);
    }
    if (kind == "transform") {
      auto cl = require_clusters(*m);
      const std::size_t c1 = cluster_field(body, "c1", cl->model.k());
      const std::size_t c2 = cluster_field(body, "c2", cl->model.k());
      if (cl->view.members[c1].empty()) bad_request("cluster " + std::to_string(c1) + " is empty", "c1");
      if (cl->view.members[c2].empty()) bad_request("cluster " + std::to_string(c2) + " is empty", "c2");
      const ExplainOptions o = explain_opts(body, *m);
      Json out = to_json(transform_importance(m->train, m->ckpt.state.params, cl->view, c1, c2, o));
      out["model_id"] = id;
      return json_response(200, out);
    }
    throw_api(404, "not_found", "unknown explanation kind '" + kind + "'");
  }

  HttpResponse get_metrics(const std::string& id) {
    auto m = find_model(id);
    std::lock_guard<std::mutex> lock(m->mu);
    if (!m->metrics) {
      Json out;
      out["version"] = kReportVersion;
      out["model_id"] = id;
      out["split"] = "train";
      auto attempt = [&](const char* key, auto&& fn) {
        try {
          out[key] = fn();
        } catch (const Error& e) {
          out[key] = nullptr;
          out["notes"][key] = e.what();
        }
      };
      attempt("rre", [&] { return rre(m->train.features, m->train_embedding, kDefaultRreK, opts.threads); });
      const auto& labels = m->train.labels;
      attempt("clf", [&] {
        if (!labels) fail(ErrorCode::kInvalidArgument, "dataset has no labels");
        return linear_accuracy(m->train_embedding, *labels);
      });
      attempt("clu", [&] {
        if (!labels) fail(ErrorCode::kInvalidArgument, "dataset has no labels");
        return kmeans_accuracy(m->train_embedding, *labels, 0);
      });
      m->metrics = out;
    }
    return json_response(200, *m->metrics);
  }

  HttpResponse route(const HttpRequest& req) {
    const auto parts = split_path(req.path);
    const std::string& method = req.method;
    if (method == "OPTIONS") return {204, "", "text/plain"};
    auto allow = [&](const char* want) {
      if (method != want) throw_api(405, "method_not_allowed", "use " + std::string(want) + " for " + req.path);
    };
    if (parts.size() == 1 && parts[0] == "datasets") {
      allow("POST");
      return post_dataset(req);
    }
    if (parts.size() == 3 && parts[0] == "datasets" && parts[2] == "summary") {
      allow("GET");
      return json_response(200, summary_json(*find_dataset(parts[1])));
    }
    if (parts.size() == 1 && parts[0] == "train") {
      allow("POST");
      return post_train(req);
    }
    if (parts.size() == 2 && parts[0] == "jobs") {
      allow("GET");
      return get_job(parts[1]);
    }
    if (parts.size() >= 3 && parts[0] == "models") {
      const std::string& id = parts[1];
      if (parts.size() == 3 && parts[2] == "embedding") {
        allow("GET");
        return get_embedding(id, req);
      }
      if (parts.size() == 3 && parts[2] == "cluster") {
        allow("POST");
        return post_cluster(id, req);
      }
      if (parts.size() == 3 && parts[2] == "metrics") {
        allow("GET");
        return get_metrics(id);
      }
      if (parts.size() == 4 && parts[2] == "explain") {
        allow("POST");
        return explain(id, parts[3], req);
      }
    }
    throw_api(404, "not_found", "no route for " + method + " " + req.path);
  }
};

Service::Service(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Service::~Service() { stop(); }

HttpResponse Service::handle(const HttpRequest& req) {
  try {
    return impl_->route(req);
  } catch (const ApiError& e) {
    return error_response(e);
  } catch (const Error& e) {
    const bool user = e.code() == ErrorCode::kInvalidArgument || e.code() == ErrorCode::kFormat;
    return error_response({user ? 400 : 500, user ? "bad_request" : "internal", e.what(), {}});
  } catch (const std::exception& e) {
    return error_response({500, "internal", e.what(), {}});
  }
}

void Service::listen(const std::string& host, int port) {
  httplib::Server svr;
  svr.set_pre_routing_handler([this](const httplib::Request& r, httplib::Response& res) {
    HttpRequest req;
    req.method = r.method;
    req.path = r.path;
    for (const auto& [k, v] : r.params) req.query[k] = v;
    req.body = r.body;
    const HttpResponse out = handle(req);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    if (!out.body.empty()) res.set_content(out.body, out.content_type);
    return httplib::Server::HandlerResponse::Handled;
  });
  {
    std::lock_guard<std::mutex> lock(impl_->server_mu);
    impl_->server = &svr;
  }
  const bool ok = svr.listen(host, port);
  {
    std::lock_guard<std::mutex> lock(impl_->server_mu);
    impl_->server = nullptr;
  }
  if (!ok) fail(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  std::lock_guard<std::mutex> lock(impl_->server_mu);
  if (impl_->server) impl_->server->stop();
}

void Service::wait_idle() {
  std::unique_lock<std::mutex> lock(impl_->queue_mu);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && !impl_->busy; });
}

}  // namespace evnet
