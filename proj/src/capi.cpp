#include "evnet/evnet.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <new>
#include <sstream>
#include <string>

#include "evnet/eval.hpp"
#include "evnet/explain.hpp"
#include "evnet/serialize.hpp"
#include "evnet/service.hpp"
#include "evnet/trainer.hpp"

struct evnet_dataset {
  evnet::Dataset d;
};

struct evnet_model {
  evnet::Checkpoint ckpt;
};

struct evnet_service {
  evnet::Service svc;
  explicit evnet_service(evnet::ServiceOptions o) : svc(std::move(o)) {}
};

namespace {

thread_local std::string g_last_error;

evnet_status to_status(evnet::ErrorCode c) {
  switch (c) {
    case evnet::ErrorCode::kInvalidArgument: return EVNET_ERR_INVALID_ARGUMENT;
    case evnet::ErrorCode::kIo: return EVNET_ERR_IO;
    case evnet::ErrorCode::kFormat: return EVNET_ERR_FORMAT;
    case evnet::ErrorCode::kNumeric: return EVNET_ERR_NUMERIC;
    case evnet::ErrorCode::kState: return EVNET_ERR_STATE;
    case evnet::ErrorCode::kNotFound: return EVNET_ERR_NOT_FOUND;
    case evnet::ErrorCode::kInternal: return EVNET_ERR_INTERNAL;
  }
  return EVNET_ERR_INTERNAL;
}

template <typename F>
evnet_status guard(F&& fn) {
  try {
    g_last_error.clear();
    fn();
    return EVNET_OK;
  } catch (const evnet::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EVNET_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EVNET_ERR_INTERNAL;
  }
}

void need(const void* p, const char* name) {
  if (p == nullptr) evnet::fail(evnet::ErrorCode::kInvalidArgument, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

evnet::Json parse_optional(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return evnet::Json::object();
  return evnet::parse_json(text, what);
}

std::size_t threads_or_one(std::size_t t) { return t == 0 ? 1 : t; }

struct Explained {
  evnet::Dataset prepared;
  evnet::ClusterView view;
  evnet::ExplainOptions opts;
  evnet::Json request;
};

Explained explain_setup(const evnet_model* model, const evnet_dataset* raw, const char* clusters_json,
                        const char* request_json, std::size_t threads) {
  need(model, "model");
  need(raw, "dataset");
  need(clusters_json, "clusters_json");
  Explained e;
  e.prepared = evnet::prepare_for_model(raw->d, model->ckpt, threads);
  const evnet::ClusterModel cm = evnet::cluster_model_from_json(evnet::parse_json(clusters_json, "cluster model"));
  evnet::require(cm.assignments.size() == e.prepared.rows(),
                 "cluster model has " + std::to_string(cm.assignments.size()) + " assignments, dataset has " +
                     std::to_string(e.prepared.rows()) + " rows");
  e.view = evnet::ClusterView::from_model(cm);
  e.request = parse_optional(request_json, "explain request");
  e.opts = evnet::explain_options_from_json(e.request, model->ckpt.state.config, threads);
  return e;
}

std::size_t request_uint(const evnet::Json& j, const char* key) {
  auto it = j.find(key);
  evnet::require(it != j.end(), std::string("request is missing '") + key + "'");
  evnet::require(it->is_number_unsigned(), std::string("'") + key + "' must be a non-negative integer");
  return it->get<std::size_t>();
}

}  // namespace

extern "C" {

const char* evnet_version(void) { return "evnet 1.0.0"; }

const char* evnet_last_error(void) { return g_last_error.c_str(); }

void evnet_string_free(char* s) { std::free(s); }

void evnet_buffer_free(double* buffer) { std::free(buffer); }

evnet_status evnet_dataset_load_csv(const char* path, const char* label_column, int flags, evnet_dataset** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    std::optional<std::string> label;
    if (label_column != nullptr && *label_column != '\0') label = label_column;
    auto h = std::make_unique<evnet_dataset>();
    try {
      h->d = evnet::load_csv(path, label);
    } catch (const evnet::Error& e) {
      const bool missing_label = label && std::string(e.what()).find("label column") != std::string::npos;
      if (!(missing_label && (flags & EVNET_LABEL_OPTIONAL))) throw;
      h->d = evnet::load_csv(path, std::nullopt);
    }
    *out = h.release();
  });
}

evnet_status evnet_dataset_synthetic(const char* spec, uint64_t seed, evnet_dataset** out) {
  return guard([&] {
    need(spec, "spec");
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<evnet_dataset>();
    h->d = evnet::make_synthetic(evnet::parse_synthetic_spec(spec), seed);
    *out = h.release();
  });
}

evnet_status evnet_dataset_save_csv(const evnet_dataset* d, const char* path) {
  return guard([&] {
    need(d, "dataset");
    need(path, "path");
    evnet::write_text_atomic(path, evnet::to_csv(d->d));
  });
}

evnet_status evnet_dataset_shape(const evnet_dataset* d, size_t* rows, size_t* cols, int* has_labels) {
  return guard([&] {
    need(d, "dataset");
    if (rows) *rows = d->d.rows();
    if (cols) *cols = d->d.cols();
    if (has_labels) *has_labels = d->d.has_labels() ? 1 : 0;
  });
}

evnet_status evnet_dataset_split(const evnet_dataset* d, double train_fraction, uint64_t seed, evnet_dataset** train,
                                 evnet_dataset** test) {
  return guard([&] {
    need(d, "dataset");
    need(train, "train");
    need(test, "test");
    *train = nullptr;
    *test = nullptr;
    auto [a, b] = evnet::split(d->d, evnet::SplitSpec{train_fraction, seed});
    auto ha = std::make_unique<evnet_dataset>();
    auto hb = std::make_unique<evnet_dataset>();
    ha->d = std::move(a);
    hb->d = std::move(b);
    *train = ha.release();
    *test = hb.release();
  });
}

evnet_status evnet_dataset_summary_json(const evnet_dataset* d, char** out_json) {
  return guard([&] {
    need(d, "dataset");
    need(out_json, "out_json");
    const auto& ds = d->d;
    evnet::Json j;
    j["version"] = evnet::kReportVersion;
    j["rows"] = ds.rows();
    j["cols"] = ds.cols();
    j["feature_names"] = ds.feature_names;
    j["has_labels"] = ds.has_labels();
    if (ds.has_labels()) j["label_name"] = ds.label_name;
    j["noise_features"] = ds.noise_features;
    evnet::Json feats = evnet::Json::array();
    for (Eigen::Index f = 0; f < ds.features.cols(); ++f) {
      feats.push_back({{"name", ds.feature_names[static_cast<std::size_t>(f)]},
                       {"min", ds.features.col(f).minCoeff()},
                       {"max", ds.features.col(f).maxCoeff()}});
    }
    j["features"] = std::move(feats);
    *out_json = dup_string(j.dump(2));
  });
}

void evnet_dataset_free(evnet_dataset* d) { delete d; }

evnet_status evnet_config_resolve(const char* config_json, char** out_json) {
  return guard([&] {
    need(out_json, "out_json");
    const evnet::TrainConfig cfg = evnet::train_config_from_json(parse_optional(config_json, "config"));
    evnet::validate(cfg);
    *out_json = dup_string(evnet::to_json(cfg).dump(2));
  });
}

evnet_status evnet_train(const evnet_dataset* raw, const char* config_json, size_t threads, evnet_progress_fn progress,
                         void* user, evnet_model** out) {
  return guard([&] {
    need(raw, "dataset");
    need(out, "out");
    *out = nullptr;
    evnet::TrainConfig cfg = evnet::train_config_from_json(parse_optional(config_json, "config"));
    cfg.threads = threads_or_one(threads);
    const evnet::Dataset prepared = evnet::prepare_training_data(raw->d, cfg);
    auto on_epoch = [&](const evnet::TrainerState& s) {
      if (progress == nullptr) return;
      const auto& h = s.report.history.back();
      evnet::Json j;
      j["epoch"] = h.epoch;
      j["epochs"] = s.config.epochs;
      j["l_sp"] = h.l_sp;
      j["l_r"] = h.l_r;
      j["lambda"] = h.lambda;
      j["active"] = h.active;
      j["wall_ms"] = h.wall_ms;
      progress(j.dump().c_str(), user);
    };
    try {
      evnet::TrainerState state = evnet::fit(prepared, cfg, on_epoch);
      state.config.threads = 1;
      auto h = std::make_unique<evnet_model>();
      h->ckpt = evnet::make_checkpoint(std::move(state), prepared);
      *out = h.release();
    } catch (const evnet::TrainingAborted& e) {
      auto h = std::make_unique<evnet_model>();
      evnet::TrainerState last = e.last_good();
      last.config.threads = 1;
      h->ckpt = evnet::make_checkpoint(std::move(last), prepared);
      *out = h.release();
      throw;
    }
  });
}

evnet_status evnet_model_continue(evnet_model* model, const evnet_dataset* raw, size_t epochs, size_t threads) {
  return guard([&] {
    need(model, "model");
    need(raw, "dataset");
    const std::size_t t = threads_or_one(threads);
    const evnet::Dataset prepared = evnet::prepare_for_model(raw->d, model->ckpt, t);
    evnet::TrainerState state = model->ckpt.state;
    state.config.threads = t;
    evnet::Trainer trainer(prepared, std::move(state));
    trainer.run(epochs);
    evnet::TrainerState done = trainer.release();
    done.config.threads = 1;
    done.config.epochs = std::max(done.config.epochs, done.epochs_completed);
    model->ckpt.state = std::move(done);
  });
}

evnet_status evnet_model_save(const evnet_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    evnet::save_checkpoint(model->ckpt, path);
  });
}

evnet_status evnet_model_load(const char* path, evnet_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<evnet_model>();
    h->ckpt = evnet::load_checkpoint(path);
    *out = h.release();
  });
}

evnet_status evnet_model_report_json(const evnet_model* model, char** out_json) {
  return guard([&] {
    need(model, "model");
    need(out_json, "out_json");
    evnet::Json j;
    j["version"] = evnet::kReportVersion;
    j["epochs_completed"] = model->ckpt.state.epochs_completed;
    j["active_features"] = evnet::active_features(model->ckpt.state.params);
    j["report"] = evnet::to_json(model->ckpt.state.report);
    *out_json = dup_string(j.dump(2));
  });
}

evnet_status evnet_model_config_json(const evnet_model* model, char** out_json) {
  return guard([&] {
    need(model, "model");
    need(out_json, "out_json");
    *out_json = dup_string(evnet::to_json(model->ckpt.state.config).dump(2));
  });
}

evnet_status evnet_model_info(const evnet_model* model, size_t* input_dim, size_t* active_features) {
  return guard([&] {
    need(model, "model");
    if (input_dim) *input_dim = model->ckpt.state.params.input_dim();
    if (active_features) *active_features = evnet::active_features(model->ckpt.state.params).size();
  });
}

void evnet_model_free(evnet_model* model) { delete model; }

evnet_status evnet_embed(const evnet_model* model, const evnet_dataset* raw, size_t threads, double** out_xy,
                         size_t* rows) {
  return guard([&] {
    need(model, "model");
    need(raw, "dataset");
    need(out_xy, "out_xy");
    *out_xy = nullptr;
    const evnet::Matrix z =
        evnet::embed(raw->d, model->ckpt.state.params, model->ckpt.normalization, threads_or_one(threads));
    auto* buf = static_cast<double*>(std::malloc(sizeof(double) * static_cast<std::size_t>(std::max<Eigen::Index>(z.size(), 1))));
    if (buf == nullptr) throw std::bad_alloc();
    std::memcpy(buf, z.data(), sizeof(double) * static_cast<std::size_t>(z.size()));
    *out_xy = buf;
    if (rows) *rows = static_cast<std::size_t>(z.rows());
  });
}

evnet_status evnet_embed_csv(const evnet_model* model, const evnet_dataset* raw, const char* path, size_t threads) {
  return guard([&] {
    need(model, "model");
    need(raw, "dataset");
    need(path, "path");
    const evnet::Matrix z =
        evnet::embed(raw->d, model->ckpt.state.params, model->ckpt.normalization, threads_or_one(threads));
    std::ostringstream out;
    out << std::setprecision(17);
    out << "x,y";
    if (raw->d.has_labels()) out << ",label";
    out << "\n";
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      out << z(i, 0) << "," << z(i, 1);
      if (raw->d.has_labels()) out << "," << (*raw->d.labels)[static_cast<std::size_t>(i)];
      out << "\n";
    }
    evnet::write_text_atomic(path, out.str());
  });
}

evnet_status evnet_cluster(const evnet_dataset* points, size_t k, uint64_t seed, char** out_json) {
  return guard([&] {
    need(points, "points");
    need(out_json, "out_json");
    const evnet::ClusterModel m = evnet::kmeans_fit(points->d.features, k, seed);
    evnet::Json j = evnet::to_json(m);
    j["seed"] = seed;
    *out_json = dup_string(j.dump(2));
  });
}

evnet_status evnet_explain_global(const evnet_model* model, char** out_json) {
  return guard([&] {
    need(model, "model");
    need(out_json, "out_json");
    const auto rep = evnet::global_importance(model->ckpt.state.params, model->ckpt.feature_names);
    *out_json = dup_string(evnet::to_json(rep).dump(2));
  });
}

evnet_status evnet_explain_local(const evnet_model* model, const evnet_dataset* raw, const char* clusters_json,
                                 const char* request_json, size_t threads, char** out_json) {
  return guard([&] {
    need(out_json, "out_json");
    Explained e = explain_setup(model, raw, clusters_json, request_json, threads_or_one(threads));
    const bool has_cluster = e.request.contains("cluster_id");
    const bool has_points = e.request.contains("point_ids");
    evnet::require(!(has_cluster && has_points), "give either 'cluster_id' or 'point_ids', not both");
    evnet::require(has_cluster || has_points, "one of 'cluster_id' or 'point_ids' is required");
    evnet::ImportanceReport rep;
    if (has_cluster) {
      const std::size_t c = request_uint(e.request, "cluster_id");
      rep = evnet::local_importance(e.prepared, model->ckpt.state.params, e.view, c, e.opts);
    } else {
      const auto& ids = e.request["point_ids"];
      evnet::require(ids.is_array() && !ids.empty(), "'point_ids' must be a non-empty array");
      std::vector<std::size_t> rows;
      for (const auto& v : ids) {
        evnet::require(v.is_number_unsigned(), "point ids must be non-negative integers");
        rows.push_back(v.get<std::size_t>());
      }
      const evnet::Matrix z = evnet::embed(e.prepared.features, model->ckpt.state.params, e.opts.threads);
      const evnet::ClusterView view = evnet::with_selection(e.view, z, rows);
      rep = evnet::local_importance(e.prepared, model->ckpt.state.params, view, view.members.size() - 1, e.opts);
    }
    *out_json = dup_string(evnet::to_json(rep).dump(2));
  });
}

evnet_status evnet_explain_transform(const evnet_model* model, const evnet_dataset* raw, const char* clusters_json,
                                     const char* request_json, size_t threads, char** out_json) {
  return guard([&] {
    need(out_json, "out_json");
    Explained e = explain_setup(model, raw, clusters_json, request_json, threads_or_one(threads));
    const std::size_t c1 = request_uint(e.request, "c1");
    const std::size_t c2 = request_uint(e.request, "c2");
    const auto rep = evnet::transform_importance(e.prepared, model->ckpt.state.params, e.view, c1, c2, e.opts);
    *out_json = dup_string(evnet::to_json(rep).dump(2));
  });
}

evnet_status evnet_eval_rre(const evnet_dataset* high, const evnet_dataset* low, size_t k, size_t threads,
                            double* out) {
  return guard([&] {
    need(high, "high");
    need(low, "low");
    need(out, "out");
    *out = evnet::rre(high->d.features, low->d.features, k, threads_or_one(threads));
  });
}

evnet_status evnet_eval_linear(const evnet_dataset* embedding, size_t folds, uint64_t seed, double* out) {
  return guard([&] {
    need(embedding, "embedding");
    need(out, "out");
    evnet::require(embedding->d.has_labels(), "linear accuracy needs labels");
    evnet::LinearClassifierOptions o;
    o.folds = folds;
    o.seed = seed;
    *out = evnet::linear_accuracy(embedding->d.features, *embedding->d.labels, o);
  });
}

evnet_status evnet_eval_clustering(const evnet_dataset* embedding, const char* clusters_json, uint64_t seed,
                                   double* out) {
  return guard([&] {
    need(embedding, "embedding");
    need(out, "out");
    evnet::require(embedding->d.has_labels(), "clustering accuracy needs labels");
    const auto& labels = *embedding->d.labels;
    if (clusters_json != nullptr && *clusters_json != '\0') {
      const auto cm = evnet::cluster_model_from_json(evnet::parse_json(clusters_json, "cluster model"));
      *out = evnet::clustering_accuracy(cm.assignments, labels);
    } else {
      *out = evnet::kmeans_accuracy(embedding->d.features, labels, seed);
    }
  });
}

evnet_status evnet_service_create(const char* data_dir, size_t threads, evnet_service** out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    evnet::ServiceOptions o;
    if (data_dir != nullptr && *data_dir != '\0') o.data_dir = data_dir;
    o.threads = threads_or_one(threads);
    *out = new evnet_service(std::move(o));
  });
}

evnet_status evnet_service_handle(evnet_service* svc, const char* method, const char* path, const char* query,
                                  const char* body, int* http_status, char** out_body) {
  return guard([&] {
    need(svc, "service");
    need(method, "method");
    need(path, "path");
    need(http_status, "http_status");
    need(out_body, "out_body");
    evnet::HttpRequest req;
    req.method = method;
    req.path = path;
    if (query != nullptr) req.query = evnet::parse_query(query);
    if (body != nullptr) req.body = body;
    const evnet::HttpResponse res = svc->svc.handle(req);
    *http_status = res.status;
    *out_body = dup_string(res.body);
  });
}

evnet_status evnet_service_listen(evnet_service* svc, const char* host, int port) {
  return guard([&] {
    need(svc, "service");
    svc->svc.listen(host != nullptr ? host : "0.0.0.0", port);
  });
}

void evnet_service_stop(evnet_service* svc) {
  if (svc != nullptr) svc->svc.stop();
}

void evnet_service_free(evnet_service* svc) { delete svc; }

}  // extern "C"
