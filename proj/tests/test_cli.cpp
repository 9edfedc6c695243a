#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

// Runs the CLI with stdout and stderr merged.
Run cli(const std::string& args) {
  const std::string cmd = std::string(EVNET_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string work_dir(const std::string& name) {
  const char* env = std::getenv("EVNET_TEST_TMP");
  const fs::path dir = fs::path(env ? env : fs::temp_directory_path().string()) / ("cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kSmall = " --epochs 5 --seed 1 --batch-size 64 --projection-shape 16,8 --head-shape 8,2";

}  // namespace

TEST_CASE("help lists the search grids; bad usage exits 1") {
  const Run help = cli("train --help");
  CHECK(help.code == 0);
  CHECK(help.output.find("0.001, 0.005, 0.01, 0.1") != std::string::npos);
  CHECK(help.output.find("3, 5, 8, 10, 15") != std::string::npos);
  CHECK(cli("train --out x.ckpt --no-such-flag").code == 1);
  CHECK(cli("").code == 1);
  CHECK(cli("train --synthetic gaussians:k=2,per=5,dim=2 --out /tmp/x.ckpt --epochs 0").code == 1);
}

TEST_CASE("runtime failures exit 2") {
  const std::string dir = work_dir("runtime");
  const Run r = cli("train --input " + dir + "/missing.csv --out " + dir + "/m.ckpt");
  CHECK(r.code == 2);
  CHECK(r.output.find("missing.csv") != std::string::npos);
}

TEST_CASE("identical runs write bit-identical checkpoints, independent of threads") {
  const std::string dir = work_dir("determinism");
  REQUIRE(cli("synth gaussians:k=3,per=30,dim=5 --seed 2 --out " + dir + "/d.csv").code == 0);
  const std::string base = "train --input " + dir + "/d.csv --label label" + kSmall;
  REQUIRE(cli(base + " --out " + dir + "/a.ckpt").code == 0);
  REQUIRE(cli(base + " --out " + dir + "/b.ckpt").code == 0);
  REQUIRE(cli(base + " --threads 3 --out " + dir + "/c.ckpt").code == 0);
  const std::string a = slurp(dir + "/a.ckpt");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(dir + "/b.ckpt"));
  CHECK(a == slurp(dir + "/c.ckpt"));

  const auto sidecar = nlohmann::json::parse(slurp(dir + "/a.ckpt.config.json"));
  CHECK(sidecar["command"] == "train");
  CHECK(sidecar["args"]["config"]["epochs"] == 5);

  // The sidecar reproduces the run.
  REQUIRE(cli("train --input " + dir + "/d.csv --label label --config " + dir + "/a.ckpt.config.json --out " + dir +
              "/d.ckpt")
              .code == 0);
  CHECK(a == slurp(dir + "/d.ckpt"));
}

TEST_CASE("synth, train, embed, cluster, explain and eval pipeline") {
  const std::string dir = work_dir("pipeline");
  REQUIRE(cli("synth gaussians:k=3,per=100,dim=5 --seed 3 --out " + dir + "/train.csv --train-fraction 0.8 --test-out " +
              dir + "/test.csv")
              .code == 0);
  REQUIRE(cli("train --input " + dir + "/train.csv --label label --epochs 60 --seed 1 --batch-size 256 --out " + dir +
              "/m.ckpt --report " + dir + "/r.json")
              .code == 0);
  CHECK(nlohmann::json::parse(slurp(dir + "/r.json"))["report"]["history"].size() == 60);
  REQUIRE(cli("embed --model " + dir + "/m.ckpt --input " + dir + "/test.csv --label label --out " + dir + "/z.csv")
              .code == 0);
  const Run clf = cli("eval clf --input " + dir + "/z.csv --out " + dir + "/clf.json");
  REQUIRE(clf.code == 0);
  const auto metrics = nlohmann::json::parse(slurp(dir + "/clf.json"));
  CHECK(metrics["metric"] == "clf");
  CHECK(metrics["value"].get<double>() >= 0.95);

  REQUIRE(cli("embed --model " + dir + "/m.ckpt --input " + dir + "/train.csv --label label --out " + dir + "/zt.csv")
              .code == 0);
  REQUIRE(cli("cluster --input " + dir + "/zt.csv --k 3 --out " + dir + "/cl.json").code == 0);
  CHECK(cli("eval rre --high " + dir + "/train.csv --label label --low " + dir + "/zt.csv").code == 0);
  CHECK(cli("eval clu --input " + dir + "/zt.csv --cluster " + dir + "/cl.json").code == 0);

  const std::string ex = " --model " + dir + "/m.ckpt --input " + dir + "/train.csv --label label";
  CHECK(cli("explain global --model " + dir + "/m.ckpt --out " + dir + "/g.json").code == 0);
  CHECK(cli("explain local" + ex + " --cluster " + dir + "/cl.json --cluster-id 0 --repeats 2").code == 0);
  CHECK(cli("explain local" + ex + " --cluster " + dir + "/cl.json --points 0,1,2 --repeats 2").code == 0);
  CHECK(cli("explain transform" + ex + " --cluster " + dir + "/cl.json --c1 0 --c2 1 --repeats 2").code == 0);
  CHECK(cli("explain local" + ex + " --cluster " + dir + "/cl.json --cluster-id 0 --points 1").code == 1);

  const Run missing = cli("explain local" + ex + " --cluster-id 0");
  CHECK(missing.code == 1);
  CHECK(missing.output.find("--cluster") != std::string::npos);
}
