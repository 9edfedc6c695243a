#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evnet/evnet.h"

using Json = nlohmann::json;

namespace {

const char* kConfig = R"({"epochs": 3, "batch_size": 32, "seed": 2, "projection_shape": [8, 4], "head_shape": [4, 2]})";

std::string temp_dir() {
  const char* env = std::getenv("EVNET_TEST_TMP");
  const auto dir = std::filesystem::path(env ? env : std::filesystem::temp_directory_path().string()) / "capi";
  std::filesystem::create_directories(dir);
  return dir.string();
}

Json take_json(char* s) {
  REQUIRE(s != nullptr);
  Json j = Json::parse(s);
  evnet_string_free(s);
  return j;
}

evnet_dataset* synthetic(const char* spec, uint64_t seed) {
  evnet_dataset* d = nullptr;
  REQUIRE(evnet_dataset_synthetic(spec, seed, &d) == EVNET_OK);
  return d;
}

evnet_model* train(const evnet_dataset* d, const char* cfg = kConfig, size_t threads = 1) {
  evnet_model* m = nullptr;
  REQUIRE(evnet_train(d, cfg, threads, nullptr, nullptr, &m) == EVNET_OK);
  return m;
}

std::vector<double> embed(const evnet_model* m, const evnet_dataset* d) {
  double* xy = nullptr;
  size_t rows = 0;
  REQUIRE(evnet_embed(m, d, 1, &xy, &rows) == EVNET_OK);
  std::vector<double> out(xy, xy + 2 * rows);
  evnet_buffer_free(xy);
  return out;
}

}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::string(evnet_version()).rfind("evnet ", 0) == 0);
  evnet_dataset* d = nullptr;
  CHECK(evnet_dataset_load_csv("/nonexistent/file.csv", nullptr, 0, &d) == EVNET_ERR_IO);
  CHECK(d == nullptr);
  CHECK(std::string(evnet_last_error()).find("/nonexistent/file.csv") != std::string::npos);
  CHECK(evnet_dataset_synthetic("circles:n=3", 0, &d) == EVNET_ERR_INVALID_ARGUMENT);
  CHECK(evnet_dataset_synthetic(nullptr, 0, &d) == EVNET_ERR_INVALID_ARGUMENT);
  CHECK(evnet_dataset_synthetic("gaussians:k=2,per=5,dim=2", 0, nullptr) == EVNET_ERR_INVALID_ARGUMENT);
  evnet_dataset_free(nullptr);
  evnet_model_free(nullptr);
  evnet_string_free(nullptr);
}

TEST_CASE("datasets: shape, csv round trip, optional label, split, summary") {
  evnet_dataset* d = synthetic("gaussians:k=2,per=10,dim=3", 1);
  size_t rows = 0, cols = 0;
  int labels = 0;
  REQUIRE(evnet_dataset_shape(d, &rows, &cols, &labels) == EVNET_OK);
  CHECK(rows == 20);
  CHECK(cols == 3);
  CHECK(labels == 1);

  const std::string path = temp_dir() + "/d.csv";
  REQUIRE(evnet_dataset_save_csv(d, path.c_str()) == EVNET_OK);
  evnet_dataset* back = nullptr;
  REQUIRE(evnet_dataset_load_csv(path.c_str(), "label", 0, &back) == EVNET_OK);
  evnet_dataset_shape(back, &rows, &cols, &labels);
  CHECK(cols == 3);
  CHECK(labels == 1);
  evnet_dataset_free(back);

  evnet_dataset* none = nullptr;
  CHECK(evnet_dataset_load_csv(path.c_str(), "missing", 0, &none) == EVNET_ERR_FORMAT);
  REQUIRE(evnet_dataset_load_csv(path.c_str(), "missing", EVNET_LABEL_OPTIONAL, &none) == EVNET_OK);
  evnet_dataset_shape(none, &rows, &cols, &labels);
  CHECK(cols == 4);
  CHECK(labels == 0);
  evnet_dataset_free(none);

  evnet_dataset *tr = nullptr, *te = nullptr;
  REQUIRE(evnet_dataset_split(d, 0.75, 3, &tr, &te) == EVNET_OK);
  size_t a = 0, b = 0;
  evnet_dataset_shape(tr, &a, &cols, &labels);
  evnet_dataset_shape(te, &b, &cols, &labels);
  CHECK(a == 15);
  CHECK(b == 5);
  evnet_dataset_free(tr);
  evnet_dataset_free(te);
  CHECK(evnet_dataset_split(d, 1.5, 3, &tr, &te) == EVNET_ERR_INVALID_ARGUMENT);

  char* s = nullptr;
  REQUIRE(evnet_dataset_summary_json(d, &s) == EVNET_OK);
  CHECK(take_json(s)["rows"] == 20);
  evnet_dataset_free(d);
}

TEST_CASE("config resolution") {
  char* s = nullptr;
  REQUIRE(evnet_config_resolve(R"({"k": 7})", &s) == EVNET_OK);
  const Json j = take_json(s);
  CHECK(j["k"] == 7);
  CHECK(j.size() == 18);
  CHECK(evnet_config_resolve(R"({"bogus": 1})", &s) == EVNET_ERR_INVALID_ARGUMENT);
  CHECK(std::string(evnet_last_error()).find("bogus") != std::string::npos);
  CHECK(evnet_config_resolve("{", &s) == EVNET_ERR_FORMAT);
}

TEST_CASE("training, progress, save and load, continue") {
  evnet_dataset* d = synthetic("gaussians:k=2,per=20,dim=3", 2);
  std::vector<Json> progress;
  evnet_model* m = nullptr;
  REQUIRE(evnet_train(
              d, kConfig, 1,
              [](const char* epoch, void* user) { static_cast<std::vector<Json>*>(user)->push_back(Json::parse(epoch)); },
              &progress, &m) == EVNET_OK);
  REQUIRE(progress.size() == 3);
  CHECK(progress[2]["epoch"] == 3);
  CHECK(progress[2]["epochs"] == 3);

  size_t dim = 0, active = 0;
  REQUIRE(evnet_model_info(m, &dim, &active) == EVNET_OK);
  CHECK(dim == 3);
  CHECK(active == 3);

  const std::string path = temp_dir() + "/m.ckpt";
  REQUIRE(evnet_model_save(m, path.c_str()) == EVNET_OK);
  evnet_model* loaded = nullptr;
  REQUIRE(evnet_model_load(path.c_str(), &loaded) == EVNET_OK);
  CHECK(embed(m, d) == embed(loaded, d));

  char* rep = nullptr;
  REQUIRE(evnet_model_report_json(loaded, &rep) == EVNET_OK);
  CHECK(take_json(rep)["report"]["history"].size() == 3);
  char* cfg = nullptr;
  REQUIRE(evnet_model_config_json(loaded, &cfg) == EVNET_OK);
  CHECK(take_json(cfg)["epochs"] == 3);

  // 3 + 2 epochs equals 5 uninterrupted epochs.
  REQUIRE(evnet_model_continue(loaded, d, 2, 1) == EVNET_OK);
  Json five = Json::parse(kConfig);
  five["epochs"] = 5;
  evnet_model* full = train(d, five.dump().c_str());
  CHECK(embed(full, d) == embed(loaded, d));
  REQUIRE(evnet_model_report_json(loaded, &rep) == EVNET_OK);
  CHECK(take_json(rep)["report"]["history"].size() == 5);

  evnet_model* bad = nullptr;
  CHECK(evnet_model_load((temp_dir() + "/none.ckpt").c_str(), &bad) == EVNET_ERR_IO);
  CHECK(evnet_train(d, R"({"epochs": 0})", 1, nullptr, nullptr, &bad) == EVNET_ERR_INVALID_ARGUMENT);
  evnet_model_free(full);
  evnet_model_free(loaded);
  evnet_model_free(m);
  evnet_dataset_free(d);
}

TEST_CASE("numeric failure hands back the last good model") {
  evnet_dataset* d = synthetic("gaussians:k=2,per=20,dim=3", 2);
  evnet_model* m = nullptr;
  CHECK(evnet_train(d, R"({"epochs": 50, "lr": 1e300, "batch_size": 32})", 1, nullptr, nullptr, &m) ==
        EVNET_ERR_NUMERIC);
  CHECK(std::string(evnet_last_error()).find("epoch") != std::string::npos);
  evnet_model_free(m);
  evnet_dataset_free(d);
}

TEST_CASE("embedding csv, clustering, explanations and metrics") {
  evnet_dataset* d = synthetic("gaussians:k=2,per=20,dim=3", 5);
  evnet_model* m = train(d);
  const std::string emb_path = temp_dir() + "/emb.csv";
  REQUIRE(evnet_embed_csv(m, d, emb_path.c_str(), 1) == EVNET_OK);
  evnet_dataset* emb = nullptr;
  REQUIRE(evnet_dataset_load_csv(emb_path.c_str(), "label", 0, &emb) == EVNET_OK);
  size_t rows = 0, cols = 0;
  int labels = 0;
  evnet_dataset_shape(emb, &rows, &cols, &labels);
  CHECK(rows == 40);
  CHECK(cols == 2);

  char* cl = nullptr;
  REQUIRE(evnet_cluster(emb, 2, 1, &cl) == EVNET_OK);
  const std::string clusters(cl);
  evnet_string_free(cl);
  CHECK(Json::parse(clusters)["seed"] == 1);
  CHECK(evnet_cluster(emb, 100, 1, &cl) == EVNET_ERR_INVALID_ARGUMENT);

  char* out = nullptr;
  REQUIRE(evnet_explain_global(m, &out) == EVNET_OK);
  CHECK(take_json(out)["features"].size() == 3);

  REQUIRE(evnet_explain_local(m, d, clusters.c_str(), R"({"cluster_id": 0, "repeats": 2})", 1, &out) == EVNET_OK);
  const Json local = take_json(out);
  CHECK(local["features"].size() == 3);
  REQUIRE(evnet_explain_local(m, d, clusters.c_str(), R"({"point_ids": [0, 3], "repeats": 2})", 1, &out) ==
          EVNET_OK);
  evnet_string_free(out);
  CHECK(evnet_explain_local(m, d, clusters.c_str(), R"({"cluster_id": 0, "point_ids": [1]})", 1, &out) ==
        EVNET_ERR_INVALID_ARGUMENT);
  CHECK(evnet_explain_local(m, d, clusters.c_str(), "{}", 1, &out) == EVNET_ERR_INVALID_ARGUMENT);

  REQUIRE(evnet_explain_transform(m, d, clusters.c_str(), R"({"c1": 1, "c2": 1, "repeats": 2})", 1, &out) ==
          EVNET_OK);
  for (const auto& f : take_json(out)["features"]) CHECK(f["value"].get<double>() == 0.0);

  double value = -1.0;
  REQUIRE(evnet_eval_rre(d, emb, 5, 1, &value) == EVNET_OK);
  CHECK(value >= 0.0);
  REQUIRE(evnet_eval_linear(emb, 5, 0, &value) == EVNET_OK);
  CHECK(value >= 0.9);
  REQUIRE(evnet_eval_clustering(emb, clusters.c_str(), 0, &value) == EVNET_OK);
  CHECK(value >= 0.9);
  REQUIRE(evnet_eval_clustering(emb, nullptr, 0, &value) == EVNET_OK);
  CHECK(value >= 0.9);

  evnet_dataset* unlabeled = nullptr;
  REQUIRE(evnet_dataset_load_csv(emb_path.c_str(), nullptr, 0, &unlabeled) == EVNET_OK);
  CHECK(evnet_eval_linear(unlabeled, 5, 0, &value) == EVNET_ERR_INVALID_ARGUMENT);

  evnet_dataset_free(unlabeled);
  evnet_dataset_free(emb);
  evnet_model_free(m);
  evnet_dataset_free(d);
}

TEST_CASE("service handle without a transport") {
  evnet_service* s = nullptr;
  REQUIRE(evnet_service_create(nullptr, 1, &s) == EVNET_OK);
  int status = 0;
  char* body = nullptr;
  REQUIRE(evnet_service_handle(s, "POST", "/datasets", "label=y", "a,y\n1,p\n2,q\n", &status, &body) == EVNET_OK);
  CHECK(status == 201);
  const Json j = take_json(body);
  CHECK(j["has_labels"] == true);
  REQUIRE(evnet_service_handle(s, "GET", ("/datasets/" + j["id"].get<std::string>() + "/summary").c_str(), nullptr,
                               nullptr, &status, &body) == EVNET_OK);
  CHECK(status == 200);
  evnet_string_free(body);
  REQUIRE(evnet_service_handle(s, "DELETE", "/datasets", nullptr, nullptr, &status, &body) == EVNET_OK);
  CHECK(status == 405);
  evnet_string_free(body);
  evnet_service_stop(s);
  evnet_service_free(s);
}
