#include <doctest.h>

#include <filesystem>

#include "evnet/serialize.hpp"
#include "evnet/service.hpp"

using namespace evnet;

namespace {

HttpResponse call(Service& s, const std::string& method, const std::string& path, const std::string& body = "",
                  std::map<std::string, std::string> query = {}) {
  return s.handle(HttpRequest{method, path, std::move(query), body});
}

Json body_of(const HttpResponse& r) { return Json::parse(r.body); }

constexpr const char* kSmallConfig =
    R"({"epochs": 3, "batch_size": 32, "seed": 1, "projection_shape": [8, 4], "head_shape": [4, 2]})";

// Uploads a labelled synthetic dataset and trains a small model on it.
std::string trained_model(Service& s, const std::string& extra = "") {
  const Json ds = body_of(call(s, "POST", "/datasets", R"({"synthetic": "gaussians:k=2,per=20,dim=3", "seed": 4})"));
  const std::string body = R"({"dataset_id": ")" + ds["id"].get<std::string>() + R"(", "config": )" + kSmallConfig +
                           extra + "}";
  const HttpResponse r = call(s, "POST", "/train", body);
  REQUIRE(r.status == 202);
  s.wait_idle();
  return body_of(r)["model_id"].get<std::string>();
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("query parsing decodes values") {
    const auto q = parse_query("a=1&name=hello%20world&flag");
    CHECK(q.at("a") == "1");
    CHECK(q.at("name") == "hello world");
    CHECK(q.count("flag") == 1);
  }

  TEST_CASE("datasets: csv and json upload, summary, errors") {
    Service s;
    const HttpResponse csv = call(s, "POST", "/datasets", "a,b,y\n1,2,x\n3,4,y\n5,6,x\n", {{"label", "y"}, {"name", "t"}});
    REQUIRE(csv.status == 201);
    const Json j = body_of(csv);
    CHECK(j["rows"] == 3);
    CHECK(j["cols"] == 2);
    CHECK(j["name"] == "t");
    CHECK(j["has_labels"] == true);
    CHECK(j["classes"].size() == 2);
    CHECK(j["features"][0]["histogram"].size() == 10);

    const HttpResponse sum = call(s, "GET", "/datasets/" + j["id"].get<std::string>() + "/summary");
    CHECK(sum.status == 200);
    CHECK(body_of(sum)["feature_names"] == Json::array({"a", "b"}));

    const HttpResponse js = call(s, "POST", "/datasets", R"({"csv": "p,q\n1,2\n3,4\n"})");
    CHECK(js.status == 201);
    CHECK(body_of(js)["has_labels"] == false);

    const HttpResponse bad = call(s, "POST", "/datasets", "a,b\n1,2\n3\n");
    CHECK(bad.status == 400);
    CHECK(body_of(bad)["code"] == "bad_request");
    CHECK(call(s, "POST", "/datasets", R"({"name": "x"})").status == 400);
    CHECK(call(s, "GET", "/datasets/ds-999/summary").status == 404);
  }

  TEST_CASE("routing: unknown paths, wrong methods, preflight") {
    Service s;
    CHECK(call(s, "GET", "/nothing").status == 404);
    CHECK(call(s, "GET", "/datasets").status == 405);
    CHECK(call(s, "POST", "/jobs/job-1").status == 405);
    const HttpResponse pre = call(s, "OPTIONS", "/train");
    CHECK(pre.status == 204);
    CHECK(pre.body.empty());
  }

  TEST_CASE("train validation") {
    Service s;
    CHECK(body_of(call(s, "POST", "/train", "{}"))["field"] == "dataset_id");
    CHECK(call(s, "POST", "/train", R"({"dataset_id": "ds-404"})").status == 404);
    const Json ds = body_of(call(s, "POST", "/datasets", R"({"synthetic": "gaussians:k=2,per=5,dim=2"})"));
    const std::string id = ds["id"];
    const HttpResponse cfg = call(s, "POST", "/train", R"({"dataset_id": ")" + id + R"(", "config": {"lr": -1}})");
    CHECK(cfg.status == 400);
    CHECK(body_of(cfg)["field"] == "config");
    const HttpResponse tf =
        call(s, "POST", "/train", R"({"dataset_id": ")" + id + R"(", "config": {"target_features": 9}})");
    CHECK(body_of(tf)["field"] == "config.target_features");
    CHECK(call(s, "POST", "/train", "{not json").status == 400);
  }

  TEST_CASE("training job lifecycle, embedding, clustering, explanations and metrics") {
    Service s;
    const std::string model = trained_model(s);

    const HttpResponse job = call(s, "GET", "/jobs/job-2");
    REQUIRE(job.status == 200);
    const Json jj = body_of(job);
    CHECK(jj["state"] == "done");
    CHECK(jj["history"].size() == 3);
    CHECK(jj["progress"]["epoch"] == 3);
    CHECK(call(s, "GET", "/jobs/job-99").status == 404);

    const Json emb = body_of(call(s, "GET", "/models/" + model + "/embedding"));
    CHECK(emb["rows"].size() == 32);  // floor(0.8 * 40)
    CHECK(emb["rows"][0].contains("label"));
    CHECK_FALSE(emb["rows"][0].contains("cluster"));
    CHECK(body_of(call(s, "GET", "/models/" + model + "/embedding", "", {{"split", "test"}}))["rows"].size() == 8);
    CHECK(call(s, "GET", "/models/" + model + "/embedding", "", {{"split", "both"}}).status == 400);
    CHECK(call(s, "GET", "/models/model-404/embedding").status == 404);

    const HttpResponse no_clusters = call(s, "POST", "/models/" + model + "/explain/local", R"({"cluster_id": 0})");
    CHECK(no_clusters.status == 409);

    CHECK(call(s, "POST", "/models/" + model + "/cluster", R"({"k": 0})").status == 400);
    const HttpResponse cl = call(s, "POST", "/models/" + model + "/cluster", R"({"k": 2, "seed": 1})");
    REQUIRE(cl.status == 200);
    CHECK(body_of(cl)["assignments"].size() == 32);
    CHECK(body_of(call(s, "GET", "/models/" + model + "/embedding"))["rows"][0].contains("cluster"));

    const Json global = body_of(call(s, "POST", "/models/" + model + "/explain/global"));
    CHECK(global["features"].size() == 3);

    const std::string local_path = "/models/" + model + "/explain/local";
    const HttpResponse local = call(s, "POST", local_path, R"({"cluster_id": 1, "repeats": 2})");
    REQUIRE(local.status == 200);
    CHECK(body_of(local)["features"].size() == 3);
    CHECK(call(s, "POST", local_path, R"({"cluster_id": 1, "repeats": 2})").body == local.body);

    const HttpResponse both = call(s, "POST", local_path, R"({"cluster_id": 0, "point_ids": [1]})");
    CHECK(both.status == 400);
    CHECK(body_of(both)["field"] == "cluster_id");
    CHECK(call(s, "POST", local_path, "{}").status == 400);
    CHECK(call(s, "POST", local_path, R"({"cluster_id": 7})").status == 400);
    CHECK(body_of(call(s, "POST", local_path, R"({"point_ids": [999]})"))["field"] == "point_ids");
    CHECK(call(s, "POST", local_path, R"({"point_ids": [0, 1, 2], "repeats": 2})").status == 200);

    const std::string tr_path = "/models/" + model + "/explain/transform";
    const Json self = body_of(call(s, "POST", tr_path, R"({"c1": 0, "c2": 0, "repeats": 2})"));
    for (const auto& f : self["features"]) CHECK(f["value"].get<double>() == 0.0);
    CHECK(call(s, "POST", tr_path, R"({"c1": 0})").status == 400);
    CHECK(call(s, "POST", "/models/" + model + "/explain/other").status == 404);

    const Json metrics = body_of(call(s, "GET", "/models/" + model + "/metrics"));
    CHECK(metrics["rre"].is_number());
    CHECK(metrics["clf"].is_number());
    CHECK(metrics["clu"].is_number());
  }

  TEST_CASE("a failed job makes its model unavailable with the reason") {
    Service s;
    const std::string model = trained_model(s, R"(, "train_fraction": 0.5)");
    CHECK(call(s, "GET", "/models/" + model + "/embedding").status == 200);

    const Json ds = body_of(call(s, "POST", "/datasets", R"({"synthetic": "gaussians:k=2,per=20,dim=3"})"));
    const std::string body = R"({"dataset_id": ")" + ds["id"].get<std::string>() +
                             R"(", "config": {"epochs": 50, "lr": 1e300, "batch_size": 32}})";
    const Json job = body_of(call(s, "POST", "/train", body));
    s.wait_idle();
    const HttpResponse r = call(s, "GET", "/models/" + job["model_id"].get<std::string>() + "/embedding");
    CHECK(r.status == 409);
    CHECK(body_of(r)["message"].get<std::string>().find("failed") != std::string::npos);
    CHECK(body_of(call(s, "GET", "/jobs/" + job["id"].get<std::string>()))["state"] == "failed");
  }

  TEST_CASE("data directory receives datasets and checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "evnet_service_test";
    std::filesystem::remove_all(dir);
    {
      ServiceOptions o;
      o.data_dir = dir.string();
      Service s(o);
      const std::string model = trained_model(s);
      CHECK(std::filesystem::exists(dir / "datasets" / "ds-1.csv"));
      CHECK(load_checkpoint((dir / "models" / (model + ".ckpt")).string()).state.epochs_completed == 3);
    }
    std::filesystem::remove_all(dir);
  }
}
