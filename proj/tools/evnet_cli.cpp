// evnet command-line tool. Talks to the engine only through the C API.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evnet/evnet.h"

namespace {

using Json = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr const char* kSidecarVersion = "evnet-cli/1";

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

void check(evnet_status s, const std::string& what) {
  if (s == EVNET_OK) return;
  throw Failure{kExitRuntime, what + ": " + evnet_last_error()};
}

// Config validation failures are usage errors.
void check_config(evnet_status s) {
  if (s == EVNET_OK) return;
  throw Failure{s == EVNET_ERR_INVALID_ARGUMENT || s == EVNET_ERR_FORMAT ? kExitUsage : kExitRuntime,
                std::string("invalid config: ") + evnet_last_error()};
}

// Move-only owner of a pointer handed out by the C API.
template <typename T, void (*Free)(T*)>
class Owned {
 public:
  Owned() = default;
  Owned(Owned&& o) noexcept : p(o.p) { o.p = nullptr; }
  Owned& operator=(Owned&& o) noexcept {
    if (this != &o) {
      Free(p);
      p = o.p;
      o.p = nullptr;
    }
    return *this;
  }
  Owned(const Owned&) = delete;
  Owned& operator=(const Owned&) = delete;
  ~Owned() { Free(p); }
  T* p = nullptr;
};

struct CString : Owned<char, evnet_string_free> {
  std::string str() const { return p ? std::string(p) : std::string(); }
};
using DatasetPtr = Owned<evnet_dataset, evnet_dataset_free>;
using ModelPtr = Owned<evnet_model, evnet_model_free>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitRuntime, "cannot read " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kExitRuntime, "cannot write " + path};
  out << text;
  if (!out) throw Failure{kExitRuntime, "write failed for " + path};
}

void emit(const std::optional<std::string>& path, const std::string& text) {
  if (path) {
    write_file(*path, text + "\n");
  } else {
    std::cout << text << "\n";
  }
}

// Records the full invocation next to an artifact.
void write_sidecar(const std::string& artifact, const std::string& command, Json args) {
  Json j;
  j["version"] = kSidecarVersion;
  j["command"] = command;
  j["engine"] = evnet_version();
  j["args"] = std::move(args);
  write_file(artifact + ".config.json", j.dump(2) + "\n");
}

DatasetPtr load(const std::string& path, const std::string& label, int flags = 0) {
  DatasetPtr d;
  check(evnet_dataset_load_csv(path.c_str(), label.empty() ? nullptr : label.c_str(), flags, &d.p),
        "loading " + path);
  return d;
}

ModelPtr load_model(const std::string& path) {
  ModelPtr m;
  check(evnet_model_load(path.c_str(), &m.p), "loading model " + path);
  return m;
}

Json defaults() {
  CString out;
  check(evnet_config_resolve("{}", &out.p), "resolving defaults");
  return Json::parse(out.str());
}

std::string shape_to_string(const Json& a) {
  std::string s;
  for (const auto& v : a) {
    if (!s.empty()) s += ",";
    s += std::to_string(v.get<std::size_t>());
  }
  return s;
}

Json parse_shape(const std::string& text, const std::string& flag) {
  Json a = Json::array();
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      a.push_back(v);
    } catch (const std::exception&) {
      usage_error(flag + " expects comma-separated positive integers, got '" + text + "'");
    }
  }
  if (a.empty()) usage_error(flag + " must not be empty");
  return a;
}

std::vector<std::size_t> parse_ids(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v < 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      usage_error("--points expects comma-separated row indices, got '" + text + "'");
    }
  }
  if (out.empty()) usage_error("--points must not be empty");
  return out;
}

std::string table(const std::string& metric, double value, std::size_t k_or_folds, std::uint64_t seed) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "metric" << std::right << std::setw(14) << "value" << std::setw(12)
     << "k_or_folds" << std::setw(8) << "seed" << "\n";
  os << std::left << std::setw(8) << metric << std::right << std::setw(14) << std::fixed << std::setprecision(6)
     << value << std::setw(12) << k_or_folds << std::setw(8) << seed << "\n";
  return os.str();
}

// Training flags, named after the config keys (a dashed alias is accepted).
struct TrainFlags {
  std::size_t epochs = 0, batch_size = 0, k = 0, target_features = 0;
  double p_u = 0, nu_y = 0, nu_z = 0, lr = 0, weight_decay = 0, epsilon = 0;
  std::uint64_t seed = 0;
  bool supervised = false, detach_target = false, shared_ru = false, include_diagonal = false;
  std::string normalization, projection_shape, head_shape;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app, const Json& d) {
    auto add = [&](const std::string& key, auto& dst, const std::string& help) {
      using T = std::decay_t<decltype(dst)>;
      std::string dashed = key;
      for (auto& c : dashed) c = c == '_' ? '-' : c;
      std::string names = "--" + key;
      if (dashed != key) names += ",--" + dashed;
      dst = d.at(key).get<T>();
      CLI::Option* o = app->add_option(names, dst, help)->capture_default_str();
      options.emplace_back(key, o);
    };
    add("epochs", epochs, "training epochs");
    add("batch_size", batch_size, "minibatch size");
    add("k", k, "kNN neighbours per point; grid {3,5,8,10,15}");
    add("p_u", p_u, "augmentation mixing exponent");
    add("nu_y", nu_y, "input-space kernel degrees of freedom");
    add("nu_z", nu_z, "embedding kernel degrees of freedom; grid {0.001,0.005,0.01,0.1}");
    add("lr", lr, "AdamW learning rate");
    add("weight_decay", weight_decay, "AdamW decoupled weight decay");
    add("target_features", target_features, "A_f, features kept by the gate; 0 keeps all");
    add("seed", seed, "seed for initialization, shuffling and augmentation");
    add("supervised", supervised, "restrict kNN neighbours to the same label (true/false)");
    add("detach_target", detach_target, "treat the input-space similarity as a constant (true/false)");
    add("shared_ru", shared_ru, "one mixing draw per point instead of per feature (true/false)");
    add("include_diagonal", include_diagonal, "keep i==j terms in the loss (true/false)");
    add("epsilon", epsilon, "gate closing threshold");
    normalization = d.at("normalization").get<std::string>();
    options.emplace_back("normalization",
                         app->add_option("--normalization", normalization, "minmax or zscore")
                             ->check(CLI::IsMember({"minmax", "zscore"}))
                             ->capture_default_str());
    projection_shape = shape_to_string(d.at("projection_shape"));
    options.emplace_back("projection_shape", app->add_option("--projection_shape,--projection-shape",
                                                             projection_shape, "projection layer widths")
                                                 ->capture_default_str());
    head_shape = shape_to_string(d.at("head_shape"));
    options.emplace_back("head_shape",
                         app->add_option("--head_shape,--head-shape", head_shape, "head layer widths, last is 2")
                             ->capture_default_str());
  }

  // Only flags given on the command line override the base config.
  Json overrides() const {
    Json j = Json::object();
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      if (key == "epochs") j[key] = epochs;
      else if (key == "batch_size") j[key] = batch_size;
      else if (key == "k") j[key] = k;
      else if (key == "target_features") j[key] = target_features;
      else if (key == "p_u") j[key] = p_u;
      else if (key == "nu_y") j[key] = nu_y;
      else if (key == "nu_z") j[key] = nu_z;
      else if (key == "lr") j[key] = lr;
      else if (key == "weight_decay") j[key] = weight_decay;
      else if (key == "epsilon") j[key] = epsilon;
      else if (key == "seed") j[key] = seed;
      else if (key == "supervised") j[key] = supervised;
      else if (key == "detach_target") j[key] = detach_target;
      else if (key == "shared_ru") j[key] = shared_ru;
      else if (key == "include_diagonal") j[key] = include_diagonal;
      else if (key == "normalization") j[key] = normalization;
      else if (key == "projection_shape") j[key] = parse_shape(projection_shape, "--projection_shape");
      else if (key == "head_shape") j[key] = parse_shape(head_shape, "--head_shape");
    }
    return j;
  }
};

struct Progress {
  std::size_t every = 0;
};

void on_progress(const char* epoch_json, void* user) {
  const auto* p = static_cast<const Progress*>(user);
  if (p->every == 0) return;
  const Json j = Json::parse(epoch_json);
  const auto e = j["epoch"].get<std::size_t>();
  if (e % p->every != 0 && e != j["epochs"].get<std::size_t>()) return;
  std::cerr << "epoch " << e << "/" << j["epochs"].get<std::size_t>() << "  l_sp " << j["l_sp"].get<double>()
            << "  l_r " << j["l_r"].get<double>() << "  lambda " << j["lambda"].get<double>() << "  active "
            << j["active"].get<std::size_t>() << "\n";
}

int serve_blocking(const std::string& host, int port, const std::string& data_dir, std::size_t threads) {
  // Route SIGINT/SIGTERM to a waiter thread that stops the server.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  evnet_service* svc = nullptr;
  check(evnet_service_create(data_dir.empty() ? nullptr : data_dir.c_str(), threads, &svc), "starting service");
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    evnet_service_stop(svc);
  });
  std::cerr << "listening on http://" << host << ":" << port << "\n";
  const evnet_status s = evnet_service_listen(svc, host.c_str(), port);
  const std::string err = s == EVNET_OK ? "" : evnet_last_error();
  if (s != EVNET_OK) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  evnet_service_free(svc);
  if (s != EVNET_OK) throw Failure{kExitRuntime, "service: " + err};
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"evnet: parametric 2-D embedding with feature gating and explanations"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  const Json dflt = defaults();
  std::size_t threads = 1;
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset CSV");
  std::string synth_spec, synth_out, synth_test_out;
  std::uint64_t synth_seed = 0;
  double synth_fraction = 1.0;
  synth->add_option("spec", synth_spec, "kind:key=value,... (gaussians, swiss_roll, noisy_gaussians)")->required();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output CSV")->required();
  synth->add_option("--train-fraction,--train_fraction", synth_fraction, "rows kept in --out; rest go to --test-out")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--test-out,--test_out", synth_test_out, "CSV for the held-out rows");

  // train
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  std::string tr_input, tr_label, tr_synthetic, tr_out, tr_report, tr_config;
  std::size_t tr_log_every = 0;
  TrainFlags tf;
  train->add_option("--input", tr_input, "training CSV");
  train->add_option("--label", tr_label, "label column name in --input");
  train->add_option("--synthetic", tr_synthetic, "train on kind:key=value,... instead of --input (uses --seed)");
  train->add_option("--config", tr_config, "base config JSON, e.g. a previous sidecar; flags override it");
  train->add_option("--out", tr_out, "checkpoint path")->required();
  train->add_option("--report", tr_report, "training report JSON path");
  train->add_option("--log-every,--log_every", tr_log_every, "print progress every N epochs; 0 is silent")
      ->capture_default_str();
  tf.attach(train, dflt);
  add_threads(train);
  train->footer("Search grids: nu_z in {0.001, 0.005, 0.01, 0.1}, k in {3, 5, 8, 10, 15}.");

  // embed
  auto* embed = app.add_subcommand("embed", "write the 2-D embedding of a CSV");
  std::string em_model, em_input, em_label, em_out;
  embed->add_option("--model", em_model, "checkpoint")->required();
  embed->add_option("--input", em_input, "CSV with the model's feature columns")->required();
  embed->add_option("--label", em_label, "label column, copied to the output");
  embed->add_option("--out", em_out, "embedding CSV (x,y[,label])")->required();
  add_threads(embed);

  // cluster
  auto* cluster = app.add_subcommand("cluster", "K-means on an embedding CSV");
  std::string cl_input, cl_out;
  std::size_t cl_k = 0;
  std::uint64_t cl_seed = 0;
  cluster->add_option("--input", cl_input, "embedding CSV (a 'label' column is ignored)")->required();
  cluster->add_option("--k", cl_k, "number of clusters")->required()->check(CLI::PositiveNumber);
  cluster->add_option("--seed", cl_seed, "K-means seed")->capture_default_str();
  cluster->add_option("--out", cl_out, "cluster model JSON")->required();

  // explain
  auto* explain = app.add_subcommand("explain", "feature importance reports");
  explain->require_subcommand(1);
  std::string ex_model, ex_input, ex_label, ex_cluster, ex_points, ex_out;
  std::optional<std::size_t> ex_cluster_id;
  std::size_t ex_c1 = 0, ex_c2 = 0, ex_repeats = 8;
  std::uint64_t ex_seed = 0;
  bool ex_average_all = false;
  auto* ex_global = explain->add_subcommand("global", "gate weights scaled to max 1");
  ex_global->add_option("--model", ex_model, "checkpoint")->required();
  ex_global->add_option("--out", ex_out, "report JSON (stdout if omitted)");
  auto add_sample_flags = [&](CLI::App* sub) {
    sub->add_option("--model", ex_model, "checkpoint")->required();
    sub->add_option("--input", ex_input, "CSV the clusters were computed on")->required();
    sub->add_option("--label", ex_label, "label column to drop from --input");
    sub->add_option("--cluster", ex_cluster, "cluster model JSON from 'cluster'");
    sub->add_option("--repeats", ex_repeats, "augmentation draws per sample")->capture_default_str();
    sub->add_option("--seed", ex_seed, "explanation seed")->capture_default_str();
    sub->add_flag("--average-all,--average_all", ex_average_all, "average over every member, not one sample");
    sub->add_option("--out", ex_out, "report JSON (stdout if omitted)");
    add_threads(sub);
  };
  auto* ex_local = explain->add_subcommand("local", "saliency of one cluster or a point selection");
  add_sample_flags(ex_local);
  ex_local->add_option("--cluster-id,--cluster_id", ex_cluster_id, "cluster to explain");
  ex_local->add_option("--points", ex_points, "comma-separated row indices to explain instead");
  auto* ex_transform = explain->add_subcommand("transform", "saliency of moving from cluster c1 to c2");
  add_sample_flags(ex_transform);
  ex_transform->add_option("--c1", ex_c1, "source cluster")->required();
  ex_transform->add_option("--c2", ex_c2, "target cluster")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "embedding quality metrics");
  eval->require_subcommand(1);
  std::string ev_high, ev_low, ev_label, ev_input, ev_cluster, ev_out;
  std::size_t ev_k = 10, ev_folds = 5;
  std::uint64_t ev_seed = 0;
  auto* ev_rre = eval->add_subcommand("rre", "relative rank error between data and embedding");
  ev_rre->add_option("--high", ev_high, "high-dimensional CSV")->required();
  ev_rre->add_option("--label", ev_label, "label column to drop from --high");
  ev_rre->add_option("--low", ev_low, "embedding CSV (a 'label' column is ignored)")->required();
  ev_rre->add_option("--k", ev_k, "neighbourhood size")->capture_default_str();
  ev_rre->add_option("--out", ev_out, "metrics JSON");
  add_threads(ev_rre);
  auto* ev_clf = eval->add_subcommand("clf", "cross-validated linear classification accuracy");
  ev_clf->add_option("--input", ev_input, "embedding CSV with a label column")->required();
  ev_clf->add_option("--label", ev_label, "label column")->capture_default_str();
  ev_clf->add_option("--folds", ev_folds, "stratified folds")->capture_default_str();
  ev_clf->add_option("--seed", ev_seed, "fold seed")->capture_default_str();
  ev_clf->add_option("--out", ev_out, "metrics JSON");
  auto* ev_clu = eval->add_subcommand("clu", "clustering accuracy after optimal label matching");
  ev_clu->add_option("--input", ev_input, "embedding CSV with a label column")->required();
  ev_clu->add_option("--label", ev_label, "label column")->capture_default_str();
  ev_clu->add_option("--cluster", ev_cluster, "cluster model JSON; K-means with one cluster per class if omitted");
  ev_clu->add_option("--seed", ev_seed, "K-means seed")->capture_default_str();
  ev_clu->add_option("--out", ev_out, "metrics JSON");
  for (auto* sub : {ev_clf, ev_clu}) {
    // Embedding CSVs written by 'embed' name the column "label".
    sub->get_option("--label")->default_str("label");
  }

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  std::string sv_host = "127.0.0.1", sv_data_dir;
  int sv_port = 8080;
  serve->add_option("--host", sv_host, "bind address")->capture_default_str();
  serve->add_option("--port", sv_port, "TCP port")->check(CLI::Range(1, 65535))->capture_default_str();
  serve->add_option("--data-dir,--data_dir", sv_data_dir, "directory for checkpoints; memory only if omitted");
  add_threads(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (ev_label.empty() && (ev_clf->parsed() || ev_clu->parsed())) ev_label = "label";

  if (synth->parsed()) {
    DatasetPtr d;
    check(evnet_dataset_synthetic(synth_spec.c_str(), synth_seed, &d.p), "synthetic spec");
    if (synth_fraction < 1.0) {
      if (synth_test_out.empty()) usage_error("--train-fraction below 1 needs --test-out");
      DatasetPtr tr, te;
      check(evnet_dataset_split(d.p, synth_fraction, synth_seed, &tr.p, &te.p), "split");
      check(evnet_dataset_save_csv(tr.p, synth_out.c_str()), "writing " + synth_out);
      check(evnet_dataset_save_csv(te.p, synth_test_out.c_str()), "writing " + synth_test_out);
    } else {
      if (!synth_test_out.empty()) usage_error("--test-out needs --train-fraction below 1");
      check(evnet_dataset_save_csv(d.p, synth_out.c_str()), "writing " + synth_out);
    }
    write_sidecar(synth_out, "synth",
                  {{"spec", synth_spec}, {"seed", synth_seed}, {"train_fraction", synth_fraction},
                   {"test_out", synth_test_out}});
    return 0;
  }

  if (train->parsed()) {
    if (tr_input.empty() == tr_synthetic.empty()) usage_error("train needs exactly one of --input or --synthetic");
    if (!tr_synthetic.empty() && !tr_label.empty()) usage_error("--label applies to --input only");
    Json base = Json::object();
    if (!tr_config.empty()) {
      Json side;
      try {
        side = Json::parse(read_file(tr_config));
      } catch (const Json::exception& e) {
        usage_error("--config: " + std::string(e.what()));
      }
      // Accept either a bare config or a train sidecar.
      base = side.contains("args") && side["args"].contains("config") ? side["args"]["config"] : side;
    }
    const Json over = tf.overrides();
    for (const auto& [k, v] : over.items()) base[k] = v;
    CString resolved;
    check_config(evnet_config_resolve(base.dump().c_str(), &resolved.p));
    const Json cfg = Json::parse(resolved.str());
    DatasetPtr d;
    if (!tr_input.empty()) {
      d = load(tr_input, tr_label);
    } else {
      check(evnet_dataset_synthetic(tr_synthetic.c_str(), cfg["seed"].get<std::uint64_t>(), &d.p), "synthetic spec");
    }
    Progress prog{tr_log_every};
    ModelPtr m;
    const evnet_status s = evnet_train(d.p, resolved.p, threads, on_progress, &prog, &m.p);
    if (s == EVNET_ERR_NUMERIC && m.p != nullptr) {
      const std::string err = evnet_last_error();
      check(evnet_model_save(m.p, tr_out.c_str()), "writing " + tr_out);
      throw Failure{kExitRuntime, "training: " + err + " (last good state saved to " + tr_out + ")"};
    }
    check(s, "training");
    check(evnet_model_save(m.p, tr_out.c_str()), "writing " + tr_out);
    CString report;
    check(evnet_model_report_json(m.p, &report.p), "report");
    if (!tr_report.empty()) write_file(tr_report, report.str() + "\n");
    const Json rep = Json::parse(report.str());
    for (const auto& f : rep["report"]["flags"]) std::cerr << "warning: " << f.get<std::string>() << "\n";
    write_sidecar(tr_out, "train",
                  {{"input", tr_input}, {"label", tr_label}, {"synthetic", tr_synthetic}, {"config", cfg}});
    std::cerr << "active features: " << rep["active_features"].size() << "\n";
    return 0;
  }

  if (embed->parsed()) {
    ModelPtr m = load_model(em_model);
    DatasetPtr d = load(em_input, em_label);
    check(evnet_embed_csv(m.p, d.p, em_out.c_str(), threads), "embedding");
    write_sidecar(em_out, "embed", {{"model", em_model}, {"input", em_input}, {"label", em_label}});
    return 0;
  }

  if (cluster->parsed()) {
    DatasetPtr d = load(cl_input, "label", EVNET_LABEL_OPTIONAL);
    CString out;
    check(evnet_cluster(d.p, cl_k, cl_seed, &out.p), "clustering");
    write_file(cl_out, out.str() + "\n");
    write_sidecar(cl_out, "cluster", {{"input", cl_input}, {"k", cl_k}, {"seed", cl_seed}});
    return 0;
  }

  if (explain->parsed()) {
    ModelPtr m = load_model(ex_model);
    CString out;
    Json args = {{"model", ex_model}};
    if (ex_global->parsed()) {
      check(evnet_explain_global(m.p, &out.p), "explain global");
    } else {
      if (ex_cluster.empty()) usage_error("--cluster is required: pass the cluster model JSON written by 'cluster'");
      Json req = {{"repeats", ex_repeats}, {"seed", ex_seed}, {"average_all", ex_average_all}};
      if (ex_local->parsed()) {
        if (ex_cluster_id.has_value() == !ex_points.empty()) usage_error("give exactly one of --cluster-id or --points");
        if (ex_cluster_id) req["cluster_id"] = *ex_cluster_id;
        else req["point_ids"] = parse_ids(ex_points);
      } else {
        req["c1"] = ex_c1;
        req["c2"] = ex_c2;
      }
      DatasetPtr d = load(ex_input, ex_label);
      const std::string clusters = read_file(ex_cluster);
      const auto fn = ex_local->parsed() ? evnet_explain_local : evnet_explain_transform;
      check(fn(m.p, d.p, clusters.c_str(), req.dump().c_str(), threads, &out.p), "explain");
      args["input"] = ex_input;
      args["label"] = ex_label;
      args["cluster"] = ex_cluster;
      args["request"] = req;
    }
    emit(ex_out.empty() ? std::nullopt : std::optional<std::string>(ex_out), out.str());
    if (!ex_out.empty()) write_sidecar(ex_out, ex_global->parsed() ? "explain global" : ex_local->parsed() ? "explain local" : "explain transform", args);
    return 0;
  }

  if (eval->parsed()) {
    std::string metric;
    double value = 0;
    std::size_t k_or_folds = 0;
    std::uint64_t seed = 0;
    Json args;
    if (ev_rre->parsed()) {
      DatasetPtr hi = load(ev_high, ev_label);
      DatasetPtr lo = load(ev_low, "label", EVNET_LABEL_OPTIONAL);
      check(evnet_eval_rre(hi.p, lo.p, ev_k, threads, &value), "rre");
      metric = "rre";
      k_or_folds = ev_k;
      args = {{"high", ev_high}, {"low", ev_low}, {"label", ev_label}, {"k", ev_k}};
    } else if (ev_clf->parsed()) {
      DatasetPtr d = load(ev_input, ev_label);
      check(evnet_eval_linear(d.p, ev_folds, ev_seed, &value), "clf");
      metric = "clf";
      k_or_folds = ev_folds;
      seed = ev_seed;
      args = {{"input", ev_input}, {"label", ev_label}, {"folds", ev_folds}, {"seed", ev_seed}};
    } else {
      DatasetPtr d = load(ev_input, ev_label);
      std::string clusters;
      if (!ev_cluster.empty()) clusters = read_file(ev_cluster);
      check(evnet_eval_clustering(d.p, ev_cluster.empty() ? nullptr : clusters.c_str(), ev_seed, &value), "clu");
      metric = "clu";
      seed = ev_seed;
      args = {{"input", ev_input}, {"label", ev_label}, {"cluster", ev_cluster}, {"seed", ev_seed}};
    }
    std::cout << table(metric, value, k_or_folds, seed);
    if (!ev_out.empty()) {
      Json j = {{"version", "evnet-report/1"}, {"metric", metric}, {"value", value}, {"k_or_folds", k_or_folds},
                {"seed", seed}};
      write_file(ev_out, j.dump(2) + "\n");
      write_sidecar(ev_out, "eval " + metric, args);
    }
    return 0;
  }

  if (serve->parsed()) return serve_blocking(sv_host, sv_port, sv_data_dir, threads);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
