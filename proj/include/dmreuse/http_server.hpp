#pragma once

#include <memory>
#include <string>

#include "dmreuse/service.hpp"

namespace dmreuse {

/// HTTP/1.1 front end over a Service. Endpoints:
///   POST /v1/query           JSON body, or FDMS vector file with an
///                            X-Embedding-Manifest header
///   POST /v1/data            same two body kinds; records carry labels
///   POST /v1/models
///   POST /v1/admin/update
///   GET  /v1/status
///   GET  /v1/models/rank?dataset=ID
///   GET  /v1/export          manifest JSON; ?part=vectors for the vector file
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds and serves until stop(); returns false if the bind fails.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it; call serve() afterwards.
  int bind_any_port(const std::string& host);
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dmreuse
