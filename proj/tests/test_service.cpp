#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "dmreuse/service.hpp"
#include "test_support.hpp"

using namespace dmreuse;

namespace {

constexpr std::size_t kRawDim = 8;

// Three well-separated groups in an 8-feature raw space; `shift` translates
// every sample along the first two features.
std::vector<float> raw_sample(std::mt19937_64& rng, std::size_t group, float shift = 0.0f) {
  std::normal_distribution<float> g(0.0f, 0.25f);
  std::vector<float> v(kRawDim);
  for (std::size_t d = 0; d < kRawDim; ++d) v[d] = g(rng);
  v[group * 2] += 6.0f;
  v[group * 2 + 1] -= 6.0f;
  v[0] += shift;
  v[1] += shift;
  return v;
}

Json record_json(const std::string& id, const std::vector<float>& raw, const std::string& label) {
  return {{"sample_id", id},
          {"source", "beamline"},
          {"label", {{"schema", "peak"}, {"data", label}}},
          {"raw", {{"shape", {kRawDim}}, {"values", raw}}}};
}

Json ingest_body(std::uint64_t seed, std::size_t per_group, const std::string& prefix) {
  std::mt19937_64 rng(seed);
  Json body = {{"records", Json::array()}};
  for (std::size_t grp = 0; grp < 3; ++grp) {
    for (std::size_t i = 0; i < per_group; ++i) {
      body["records"].push_back(record_json(prefix + std::to_string(grp) + "_" + std::to_string(i),
                                            raw_sample(rng, grp), "g" + std::to_string(grp)));
    }
  }
  return body;
}

// Query body with `counts[g]` raw samples from group g.
Json query_body(std::uint64_t seed, std::vector<std::size_t> counts, Json ops, float shift = 0.0f,
                const std::string& dataset_id = "ds") {
  std::mt19937_64 rng(seed);
  Json body = {{"dataset_id", dataset_id}, {"ops", std::move(ops)}, {"raw", Json::array()}};
  for (std::size_t grp = 0; grp < counts.size(); ++grp) {
    for (std::size_t i = 0; i < counts[grp]; ++i) {
      body["raw"].push_back({{"id", "q" + std::to_string(grp) + "_" + std::to_string(i)},
                             {"shape", {kRawDim}},
                             {"payload", raw_sample(rng, grp, shift)}});
    }
  }
  return body;
}

ServiceConfig small_config(const std::string& dir = {}) {
  ServiceConfig cfg;
  cfg.data_dir = dir;
  cfg.embedding_dim = 2;
  cfg.k_min = 2;
  cfg.k_max = 6;
  cfg.auto_update = false;
  cfg.store_sync = false;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::EmptyInput;
}

std::string run_cli(const std::string& args) {
  const std::string cmd = std::string(DMREUSE_CLI) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  ::pclose(p);
  return out;
}

}  // namespace

TEST_CASE("config file, env overrides and validation") {
  testing::TempDir dir;
  const auto path = dir.file("cfg.json");
  write_file_atomic(path, R"({"port": 9001, "k_max": 12, "threshold_t": 0.7, "data_dir": "/tmp/x"})");
  auto cfg = load_config(path);
  CHECK(cfg.port == 9001);
  CHECK(cfg.k_max == 12);
  CHECK(cfg.threshold_t == 0.7);
  CHECK(cfg.embedding_dim == 32);
  ::setenv("DMREUSE_PORT", "9100", 1);
  ::setenv("DMREUSE_JSD_THRESHOLD", "0.25", 1);
  ::setenv("DMREUSE_AUTO_UPDATE", "false", 1);
  apply_env_overrides(cfg);
  ::unsetenv("DMREUSE_PORT");
  ::unsetenv("DMREUSE_JSD_THRESHOLD");
  ::unsetenv("DMREUSE_AUTO_UPDATE");
  CHECK(cfg.port == 9100);
  CHECK(cfg.jsd_threshold == 0.25);
  CHECK_FALSE(cfg.auto_update);
  CHECK(cfg.k_max == 12);
  ::setenv("DMREUSE_K_MIN", "many", 1);
  CHECK(code_of([&] { apply_env_overrides(cfg); }) == ErrorCode::InvalidArgument);
  ::unsetenv("DMREUSE_K_MIN");

  ServiceConfig bad;
  bad.k_min = 9;
  bad.k_max = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.jsd_threshold = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.threshold_t = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  write_file_atomic(path, "{not json");
  CHECK(code_of([&] { load_config(path); }) == ErrorCode::FormatError);
}

TEST_CASE("error codes map to distinct statuses") {
  CHECK(http_status(ErrorCode::NotInitialized) == 503);
  CHECK(http_status(ErrorCode::DimMismatch) == 422);
  CHECK(http_status(ErrorCode::InsufficientData) == 424);
  CHECK(http_status(ErrorCode::UpdateInProgress) == 409);
  CHECK(http_status(ErrorCode::NotFound) == 404);
  CHECK(http_status(ErrorCode::FormatError) == 400);
  CHECK(http_status(ErrorCode::PayloadTooLarge) == 413);
  CHECK(http_status(ErrorCode::StorageFailure) == 500);
}

TEST_CASE("a fresh service reports generation zero and refuses queries") {
  Service svc(small_config());
  const auto st = api_status(svc);
  CHECK(st["generation"] == 0);
  CHECK(st["store"]["record_count"] == 0);
  CHECK(st["zoo"]["models"] == 0);
  CHECK(st["last_update"].is_null());
  CHECK(code_of([&] { api_query(svc, query_body(1, {3, 0, 0}, {"lookup"})); }) ==
        ErrorCode::NotInitialized);
  CHECK(code_of([&] { api_update(svc); }) == ErrorCode::EmptyStore);
  CHECK(code_of([&] { api_query(svc, Json{{"ops", {"lookup"}}}); }) == ErrorCode::EmptyInput);
  CHECK(code_of([&] { api_query(svc, Json{{"ops", {"teleport"}}, {"embeddings", {{{"id", "a"}, {"vector", {1}}}}}}); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] { api_ingest(svc, Json{{"rows", 1}}); }) == ErrorCode::FormatError);
}

TEST_CASE("ingest, update, query end to end") {
  Service svc(small_config());
  const auto ing = api_ingest(svc, ingest_body(1, 50, "r"));
  CHECK(ing["inserted"] == 150);
  CHECK(ing["stats"]["unassigned"] == 150);

  const auto up = api_update(svc);
  CHECK(up["generation"] == 1);
  CHECK(up["chosen_k"] == 3);
  CHECK(up["reused_stored_embeddings"] == false);
  const auto st = api_status(svc);
  CHECK(st["generation"] == 1);
  CHECK(st["k"] == 3);
  CHECK(st["store"]["unassigned"] == 0);
  CHECK(st["store"]["dim"] == 2);

  SUBCASE("lookup returns n records following the pdf, recommend falls back to scratch") {
    const auto out = api_query(svc, query_body(2, {10, 5, 5}, {"lookup", "recommend", "certainty"}));
    CHECK(out["generation"] == 1);
    CHECK(out["lookup"]["records"].size() == 20);
    auto counts = out["lookup"]["per_cluster_counts"].get<std::vector<std::size_t>>();
    std::sort(counts.begin(), counts.end());
    CHECK(counts == std::vector<std::size_t>{5, 5, 10});
    CHECK(out["recommendation"]["decision"] == "train-from-scratch");
    CHECK(out["certainty"]["certainty"].get<double>() >= 95.0);
    CHECK(out["timings_ms"].contains("lookup"));
    CHECK_FALSE(out.contains("pseudo_labels"));

    auto with_n = query_body(2, {10, 5, 5}, {"lookup"});
    with_n["n"] = 7;
    with_n["seed"] = 11;
    const auto a = api_query(svc, with_n), b = api_query(svc, with_n);
    CHECK(a["lookup"]["records"].size() == 7);
    CHECK(a["lookup"]["records"] == b["lookup"]["records"]);
  }

  SUBCASE("distinct statuses for bad queries") {
    auto wrong_dim = Json{{"ops", {"lookup"}}, {"embeddings", {{{"id", "a"}, {"vector", {1, 2, 3}}}}}};
    CHECK(code_of([&] { api_query(svc, wrong_dim); }) == ErrorCode::DimMismatch);
    auto too_many = query_body(3, {2, 0, 0}, {"lookup"});
    too_many["n"] = 10000;
    CHECK(code_of([&] { api_query(svc, too_many); }) == ErrorCode::InsufficientData);
    auto bad_shape = query_body(3, {1, 0, 0}, {"lookup"});
    bad_shape["raw"][0]["shape"] = {3};
    CHECK(code_of([&] { api_query(svc, bad_shape); }) == ErrorCode::ShapeMismatch);
  }

  SUBCASE("pseudo labels reuse the label of an identical stored sample") {
    const auto body = ingest_body(1, 50, "r");
    Json q = {{"dataset_id", "pl"}, {"ops", {"pseudo_label"}}, {"raw", Json::array()}};
    q["raw"].push_back({{"id", "same"}, {"shape", {kRawDim}}, {"payload", body["records"][60]["raw"]["values"]}});
    CHECK(code_of([&] { api_query(svc, q); }) == ErrorCode::InvalidArgument);
    q["threshold_t"] = 1e-6;
    const auto out = api_query(svc, q);
    REQUIRE(out["pseudo_labels"].size() == 1);
    CHECK(out["pseudo_labels"][0]["decision"] == std::string(to_string(PseudoLabelDecision::Reused)));
    CHECK(out["pseudo_labels"][0]["matched_sample_id"] == body["records"][60]["sample_id"]);
    CHECK(label_from_json(out["pseudo_labels"][0]["label"]).bytes == "g1");
  }

  SUBCASE("models registered by training refs are recommended and ranked") {
    Json reg = {{"model_id", "group0-net"}, {"artifact_hex", to_hex("w0")}, {"training_refs", Json::array()}};
    for (int i = 0; i < 50; ++i) reg["training_refs"].push_back("r0_" + std::to_string(i));
    const auto r0 = api_register_model(svc, reg);
    CHECK(r0["train_distribution"]["cluster_model_version"] == 1);
    Json reg1 = {{"model_id", "group1-net"}, {"artifact_uri", "s3://m/1"}, {"training_refs", {"r1_0", "r1_1"}}};
    api_register_model(svc, reg1);
    Json none = {{"model_id", "ghost"}, {"artifact_uri", "s3://m/g"}, {"training_refs", {"missing"}}};
    CHECK(code_of([&] { api_register_model(svc, none); }) == ErrorCode::InsufficientData);
    CHECK(code_of([&] { api_register_model(svc, reg); }) == ErrorCode::DuplicateId);

    const auto out = api_query(svc, query_body(4, {12, 0, 0}, {"recommend"}, 0.0f, "mostly0"));
    CHECK(out["recommendation"]["decision"] == "fine-tune");
    CHECK(out["recommendation"]["chosen"] == "group0-net");
    CHECK(out["recommendation"]["ranked"][0]["jsd"] == 0.0);
    const auto ranked = api_rank(svc, "mostly0");
    CHECK(ranked["dataset_id"] == "mostly0");
    CHECK(ranked["ranked"].size() == 2);
    CHECK(code_of([&] { api_rank(svc, "never-seen"); }) == ErrorCode::NotFound);

    // A later update refreshes registered distributions to the new generation.
    api_update(svc);
    CHECK(svc.zoo().version() == 2);
    CHECK(svc.zoo().snapshot()->find("group0-net")->train_distribution.cluster_model_version == 2);
    CHECK(api_query(svc, query_body(4, {12, 0, 0}, {"recommend"}))["recommendation"]["chosen"] ==
          "group0-net");
  }

  SUBCASE("ingest after the first update embeds with the current embedder") {
    api_ingest(svc, ingest_body(9, 2, "late"));
    const auto rec = svc.store().find("late2_1");
    REQUIRE(rec);
    CHECK(rec->embedding.dim() == 2);
    CHECK(rec->cluster_model_version == 1);
    CHECK(rec->cluster_id == svc.store().find("r2_0")->cluster_id);
  }
}

TEST_CASE("drift triggers a background update recorded in the audit log") {
  testing::TempDir dir;
  auto cfg = small_config(dir.str());
  cfg.auto_update = true;
  cfg.warmup_datasets = 2;
  Service svc(cfg);
  api_ingest(svc, ingest_body(1, 40, "r"));
  api_update(svc);
  for (int i = 0; i < 3; ++i) {
    const auto out = api_query(svc, query_body(10 + i, {5, 5, 5}, {"certainty"}, 0.0f, "in" + std::to_string(i)));
    CHECK(out["update_scheduled"] == false);
    CHECK(out["certainty"]["certainty"].get<double>() >= 95.0);
  }
  // Points halfway between groups have no clear owner.
  Json drift = {{"dataset_id", "drifted"}, {"ops", {"certainty"}}, {"raw", Json::array()}};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 30; ++i) {
    auto a = raw_sample(rng, 0), b = raw_sample(rng, 1);
    for (std::size_t d = 0; d < kRawDim; ++d) a[d] = 0.5f * (a[d] + b[d]);
    drift["raw"].push_back({{"id", "d" + std::to_string(i)}, {"shape", {kRawDim}}, {"payload", a}});
  }
  const auto out = api_query(svc, drift);
  CHECK(out["certainty"]["certainty"].get<double>() < 80.0);
  CHECK(out["update_scheduled"] == true);
  svc.wait_for_pending_update();
  CHECK(svc.generation()->number == 2);
  REQUIRE(svc.last_update());
  CHECK_FALSE(svc.last_update_error());

  std::ifstream in(dir.file("drift_audit.jsonl"));
  std::vector<Json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(Json::parse(line));
  // Line 0 is the initial update, then one line per scored dataset.
  REQUIRE(lines.size() >= 6);
  CHECK(lines[0]["event"] == "update");
  CHECK(lines[4]["dataset_id"] == "drifted");
  CHECK(lines[4]["decision"] == "trigger");
  CHECK(lines[4]["generation"] == 1);
  CHECK(lines.back()["event"] == "update");
  CHECK(lines.back()["summary"]["generation"] == 2);
}

TEST_CASE("persistent service reopens at the same generation") {
  testing::TempDir dir;
  Json first;
  const auto q = query_body(6, {4, 4, 4}, {"lookup", "certainty"});
  {
    Service svc(small_config(dir.str()));
    api_ingest(svc, ingest_body(1, 30, "r"));
    api_update(svc);
    first = api_query(svc, q);
  }
  CHECK(std::filesystem::exists(dir.file("embedder.v1.bin")));
  Service again(small_config(dir.str()));
  CHECK(again.generation()->number == 1);
  REQUIRE(again.generation()->embedder);
  const auto second = api_query(again, q);
  CHECK(second["pdf"] == first["pdf"]);
  CHECK(second["lookup"]["records"] == first["lookup"]["records"]);
}

TEST_CASE("exported embeddings bind back to stored records") {
  Service svc(small_config());
  api_ingest(svc, ingest_body(1, 10, "r"));
  api_update(svc);
  const auto [manifest, file] = svc.export_embeddings();
  const auto rows = bind_manifest(decode_embedding_file(file), manifest);
  REQUIRE(rows.size() == 30);
  for (const auto& r : rows) CHECK(svc.store().find(r.id)->embedding == r.vector);

  // The same bytes work as a binary query.
  auto mj = Json::parse(manifest);
  mj["ops"] = {"lookup"};
  mj["n"] = 5;
  const auto out = to_json(svc.handle_query(query_request_from_binary(file, mj)));
  CHECK(out["lookup"]["records"].size() == 5);
}

TEST_CASE("CLI --json prints the API objects") {
  testing::TempDir dir;
  const auto data = dir.file("data");
  const auto req_path = dir.file("query.json");
  const auto q = query_body(7, {3, 3, 3}, {"lookup", "recommend", "certainty"});
  write_file_atomic(req_path, q.dump());
  write_file_atomic(dir.file("records.json"), ingest_body(1, 20, "r").dump());
  write_file_atomic(dir.file("cfg.json"),
                    R"({"embedding_dim": 2, "k_min": 2, "k_max": 6, "store_sync": false})");
  const std::string cli = "--json -c " + dir.file("cfg.json") + " -d ";

  const auto ingested = Json::parse(run_cli(cli + data + " ingest --records " + dir.file("records.json")));
  CHECK(ingested["inserted"] == 60);
  const auto updated = Json::parse(run_cli(cli + data + " update"));
  CHECK(updated["generation"] == 1);

  auto cli_query = Json::parse(run_cli(cli + data + " query --request " + req_path));
  const auto cli_status = Json::parse(run_cli(cli + data + " status"));
  Json api_q, api_s;
  {
    auto cfg = small_config(data);
    Service svc(cfg);
    api_q = api_query(svc, q);
    api_s = api_status(svc);
  }
  cli_query.erase("timings_ms");
  api_q.erase("timings_ms");
  CHECK(cli_query == api_q);
  // The API side has one more observed dataset than the CLI had.
  CHECK(api_s["drift"]["datasets_observed"] == 1);
  api_s.erase("drift");
  auto cli_s = cli_status;
  cli_s.erase("drift");
  CHECK(cli_s == api_s);

  const auto err = Json::parse(run_cli(cli + dir.file("empty") + " query --request " + req_path));
  CHECK(err["error"]["code"] == "NotInitialized");
}
