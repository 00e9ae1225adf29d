#include "doctest.h"

#include <random>
#include <thread>

#include "dmreuse/codec.hpp"
#include "dmreuse/embedding.hpp"
#include "dmreuse/http_server.hpp"
#include "httplib.h"
#include "test_support.hpp"

using namespace dmreuse;

namespace {

// Server on a free loopback port for the lifetime of the fixture.
struct Running {
  explicit Running(Service& svc) : server(svc) {
    port = server.bind_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.serve(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }

  HttpServer server;
  int port = 0;
  std::thread thread;
};

ServiceConfig config(std::size_t max_bytes = 64u << 20) {
  ServiceConfig cfg;
  cfg.k_min = 2;
  cfg.k_max = 6;
  cfg.auto_update = false;
  cfg.max_request_bytes = max_bytes;
  return cfg;
}

std::vector<ExternalEmbedding> square_rows(std::uint64_t seed, std::size_t per, const std::string& prefix) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 0.3f);
  const float c[4][2] = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  std::vector<ExternalEmbedding> out;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < per; ++i) {
      out.push_back({prefix + std::to_string(k) + "_" + std::to_string(i), "det",
                     EmbeddingVector({c[k][0] + g(rng), c[k][1] + g(rng)})});
    }
  }
  return out;
}

Json json_of(const httplib::Result& r) {
  REQUIRE(r);
  return Json::parse(r->body);
}

}  // namespace

TEST_CASE("http endpoints round trip through the service") {
  Service svc(config());
  Running srv(svc);
  auto cli = srv.client();

  auto r = cli.Get("/v1/status");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json_of(r)["generation"] == 0);

  const Json early = {{"ops", {"lookup"}}, {"embeddings", {{{"id", "a"}, {"vector", {1, 2}}}}}};
  r = cli.Post("/v1/query", early.dump(), "application/json");
  CHECK(r->status == 503);
  CHECK(json_of(r)["error"]["code"] == "NotInitialized");

  r = cli.Post("/v1/query", "{broken", "application/json");
  CHECK(r->status == 400);
  CHECK(json_of(r)["error"]["code"] == "FormatError");

  // Binary ingest: vector file body, manifest with labels in the header.
  const auto rows = square_rows(1, 25, "s");
  auto manifest = Json::parse(make_embedding_manifest(rows, 2, "upload.bin"));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    manifest["rows"][i]["label"] = {{"schema", "quad"}, {"data", std::to_string(i / 25)}};
  }
  httplib::Headers headers = {{"X-Embedding-Manifest", manifest.dump()}};
  r = cli.Post("/v1/data", headers, encode_embedding_file(rows, 2), "application/octet-stream");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json_of(r)["inserted"] == 100);

  r = cli.Post("/v1/admin/update", "", "application/json");
  CHECK(r->status == 200);
  CHECK(json_of(r)["chosen_k"] == 4);
  CHECK(json_of(cli.Get("/v1/status"))["generation"] == 1);

  SUBCASE("json and binary queries agree") {
    const auto q = square_rows(2, 3, "q");
    Json body = {{"dataset_id", "ds"}, {"ops", {"lookup", "recommend", "certainty"}}, {"seed", 5}, {"embeddings", Json::array()}};
    for (const auto& e : q) body["embeddings"].push_back({{"id", e.id}, {"vector", e.vector.values}});
    r = cli.Post("/v1/query", body.dump(), "application/json");
    CHECK(r->status == 200);
    auto js = json_of(r);
    CHECK(js["lookup"]["records"].size() == 12);
    CHECK(js["lookup"]["per_cluster_counts"] == Json({3, 3, 3, 3}));
    CHECK(js["certainty"]["certainty"] == 100.0);

    auto qm = Json::parse(make_embedding_manifest(q, 2, "q.bin"));
    qm["dataset_id"] = "ds";
    qm["ops"] = {"lookup", "recommend", "certainty"};
    qm["seed"] = 5;
    r = cli.Post("/v1/query", {{"X-Embedding-Manifest", qm.dump()}}, encode_embedding_file(q, 2),
                 "application/octet-stream");
    CHECK(r->status == 200);
    auto bin = json_of(r);
    js.erase("timings_ms");
    bin.erase("timings_ms");
    CHECK(bin == js);
  }

  SUBCASE("error statuses are distinct") {
    const Json wrong_dim = {{"ops", {"lookup"}}, {"embeddings", {{{"id", "a"}, {"vector", {1, 2, 3}}}}}};
    r = cli.Post("/v1/query", wrong_dim.dump(), "application/json");
    CHECK(r->status == 422);
    const Json too_many = {{"ops", {"lookup"}}, {"n", 1000}, {"embeddings", {{{"id", "a"}, {"vector", {1, 2}}}}}};
    r = cli.Post("/v1/query", too_many.dump(), "application/json");
    CHECK(r->status == 424);
    CHECK(json_of(r)["error"]["code"] == "InsufficientData");
    r = cli.Get("/v1/models/rank");
    CHECK(r->status == 400);
    r = cli.Get("/v1/models/rank?dataset=unknown");
    CHECK(r->status == 404);
    r = cli.Post("/v1/query", {{"X-Embedding-Manifest", "{"}}, "xx", "application/octet-stream");
    CHECK(r->status == 400);
  }

  SUBCASE("models register, rank and conflict") {
    const Json model = {{"model_id", "quad-net"},
                        {"artifact_hex", to_hex("weights")},
                        {"train_distribution", {{"probs", {0.25, 0.25, 0.25, 0.25}}, {"cluster_model_version", 1}}}};
    r = cli.Post("/v1/models", model.dump(), "application/json");
    CHECK(r->status == 200);
    CHECK(json_of(r)["content_hash"] == sha256_hex("weights"));
    r = cli.Post("/v1/models", model.dump(), "application/json");
    CHECK(r->status == 409);
    const Json refs = {{"model_id", "corner-net"}, {"artifact_uri", "s3://m"}, {"training_refs", {"s0_0", "s0_1"}}};
    r = cli.Post("/v1/models", refs.dump(), "application/json");
    CHECK(r->status == 200);

    Json body = {{"dataset_id", "even"}, {"ops", {"recommend"}}, {"embeddings", Json::array()}};
    for (const auto& e : square_rows(3, 2, "q")) body["embeddings"].push_back({{"id", e.id}, {"vector", e.vector.values}});
    r = cli.Post("/v1/query", body.dump(), "application/json");
    CHECK(json_of(r)["recommendation"]["chosen"] == "quad-net");
    r = cli.Get("/v1/models/rank?dataset=even");
    CHECK(r->status == 200);
    const auto ranked = json_of(r);
    CHECK(ranked["ranked"][0]["model_id"] == "quad-net");
    CHECK(ranked["ranked"][1]["model_id"] == "corner-net");
  }

  SUBCASE("export returns a manifest and a vector file that bind together") {
    r = cli.Get("/v1/export");
    CHECK(r->status == 200);
    const auto exported_manifest = r->body;
    auto v = cli.Get("/v1/export?part=vectors");
    CHECK(v->status == 200);
    const auto got = bind_manifest(decode_embedding_file(v->body), exported_manifest);
    REQUIRE(got.size() == 100);
    const auto [m2, f2] = svc.export_embeddings();
    CHECK(sha256_hex(v->body) == sha256_hex(f2));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(svc.store().find(got[i].id)->embedding == got[i].vector);
    }
  }
}

TEST_CASE("oversized request bodies get 413") {
  Service svc(config(4096));
  Running srv(svc);
  auto cli = srv.client();
  const std::string big(20000, ' ');
  auto r = cli.Post("/v1/data", big, "application/json");
  REQUIRE(r);
  CHECK(r->status == 413);
  CHECK(Json::parse(r->body)["error"]["code"] == "PayloadTooLarge");
  r = cli.Get("/v1/status");
  CHECK(r->status == 200);
}
