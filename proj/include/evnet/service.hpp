#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace evnet {

struct ServiceOptions {
  std::optional<std::string> data_dir;  // spill datasets and checkpoints here
  std::size_t threads = 1;
  double train_fraction = 0.8;  // default split for POST /train
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Parses "a=1&b=2" (percent-decoding values).
std::map<std::string, std::string> parse_query(const std::string& query);

// JSON API over datasets, training jobs, models, clustering and
// explanations. Training runs on one worker thread in submission order.
class Service {
 public:
  explicit Service(ServiceOptions opts = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpResponse handle(const HttpRequest& req);

  // Blocks serving HTTP until stop() is called.
  void listen(const std::string& host, int port);
  void stop();

  // Waits until no job is queued or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evnet
