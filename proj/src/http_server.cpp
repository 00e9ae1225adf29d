#include "dmreuse/http_server.hpp"

#include "httplib.h"

#include "dmreuse/error.hpp"

namespace dmreuse {

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kManifestHeader = "X-Embedding-Manifest";

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, const Error& e) {
  reply(res, http_status(e.code()), {{"error", error_json(e)}});
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("request body is not JSON: ") + e.what());
  }
}

Json manifest_header(const httplib::Request& req) {
  try {
    return Json::parse(req.get_header_value(kManifestHeader));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad ") + kManifestHeader + ": " + e.what());
  }
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, f(req));
    } catch (const Error& e) {
      reply_error(res, e);
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", {{"code", "Internal"}, {"message", e.what()}}}});
    }
  };
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& s = service;
  srv.set_payload_max_length(s.config().max_request_bytes);
  srv.set_error_handler([&s](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      reply_error(res, Error(ErrorCode::PayloadTooLarge,
                             "request exceeds " + std::to_string(s.config().max_request_bytes) +
                                 " bytes; ingest in chunks"));
    } else if (res.body.empty()) {
      reply(res, res.status, {{"error", {{"code", "HttpError"}, {"status", res.status}}}});
    }
  });

  srv.Post("/v1/query", guarded([&s](const httplib::Request& req) {
             if (req.has_header(kManifestHeader)) {
               return to_json(s.handle_query(query_request_from_binary(req.body, manifest_header(req))));
             }
             return api_query(s, parse_body(req));
           }));
  srv.Post("/v1/data", guarded([&s](const httplib::Request& req) {
             if (req.has_header(kManifestHeader)) {
               return api_ingest_binary(s, req.body, manifest_header(req));
             }
             return api_ingest(s, parse_body(req));
           }));
  srv.Post("/v1/models", guarded([&s](const httplib::Request& req) {
             return api_register_model(s, parse_body(req));
           }));
  srv.Post("/v1/admin/update", guarded([&s](const httplib::Request&) { return api_update(s); }));
  srv.Get("/v1/status", guarded([&s](const httplib::Request&) { return api_status(s); }));
  srv.Get("/v1/models/rank", guarded([&s](const httplib::Request& req) {
            if (!req.has_param("dataset")) {
              throw Error(ErrorCode::InvalidArgument, "missing ?dataset=");
            }
            return api_rank(s, req.get_param_value("dataset"));
          }));
  srv.Get("/v1/export", [&s](const httplib::Request& req, httplib::Response& res) {
    try {
      auto [manifest, vectors] = s.export_embeddings();
      if (req.get_param_value("part") == "vectors") {
        res.set_content(vectors, "application/octet-stream");
      } else {
        res.set_content(manifest, kJson);
      }
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

int HttpServer::bind_any_port(const std::string& host) {
  return impl_->server.bind_to_any_port(host);
}

bool HttpServer::serve() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace dmreuse
