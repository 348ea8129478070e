#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "pragtag/runstore.h"

namespace pragtag::service {

struct ApiRequest {
  std::string method;  // GET or POST
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Transport-free router for the review API (all paths under /api).
class ReviewApi {
 public:
  explicit ReviewApi(runstore::RunStore& store);
  ApiResponse handle(const ApiRequest& request) const;

 private:
  runstore::RunStore& store_;
};

/// HTTP front end. Runs the listener on a background thread.
class ReviewServer {
 public:
  ReviewServer(runstore::RunStore& store, std::filesystem::path static_dir = {});
  ~ReviewServer();

  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds and starts serving. port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pragtag::service
