#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dmreuse/datastore.hpp"
#include "dmreuse/drift.hpp"
#include "dmreuse/embedding.hpp"
#include "dmreuse/json_codec.hpp"
#include "dmreuse/modelzoo.hpp"

namespace dmreuse {

struct ServiceConfig {
  std::string listen_host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;  // empty: everything in memory
  std::size_t embedding_dim = 32;
  std::size_t k_min = 2;
  std::size_t k_max = 25;
  std::optional<double> threshold_t;  // pseudo-label distance bar; no default
  double jsd_threshold = kDefaultRecommendThreshold;
  double certainty_threshold = 80.0;
  double membership_bar = 0.5;
  std::size_t warmup_datasets = 5;
  std::size_t cooldown = 1;
  double fuzzifier_m = 2.0;
  std::uint64_t seed = 0;
  std::size_t max_request_bytes = 64u << 20;
  std::size_t max_fit_samples = 20000;
  bool auto_update = true;  // run drift-triggered updates in the background
  bool store_sync = true;

  void validate() const;
};

/// Reads a JSON config file (missing keys keep defaults). An empty path skips
/// the file.
ServiceConfig load_config(const std::string& path);
/// DMREUSE_* environment variables override file values, e.g. DMREUSE_PORT,
/// DMREUSE_DATA_DIR, DMREUSE_THRESHOLD_T.
void apply_env_overrides(ServiceConfig& cfg);
ServiceConfig config_from_json(const Json& j, ServiceConfig base = {});

enum class QueryOp { Lookup, Recommend, Certainty, PseudoLabel };
std::string_view to_string(QueryOp op);
QueryOp query_op_from_string(std::string_view s);

struct QueryRequest {
  std::string dataset_id;
  std::vector<RawSample> raw;                 // exactly one of raw / embeddings
  std::vector<ExternalEmbedding> embeddings;  // is nonempty
  std::set<QueryOp> ops;
  std::optional<std::size_t> n_override;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold_t;
  std::optional<double> jsd_threshold;

  void validate() const;
};

struct QueryResponse {
  std::string dataset_id;
  DatasetDistribution pdf;
  std::optional<LookupResult> lookup;
  std::optional<Recommendation> recommendation;
  std::optional<CertaintyReport> certainty;
  std::vector<PseudoLabelOutcome> pseudo_labels;
  std::uint64_t generation = 0;
  bool update_scheduled = false;
  std::map<std::string, double> timings_ms;
};

struct IngestResult {
  std::size_t inserted = 0;
  StoreStats stats;
};

/// The whole pipeline behind one object: the HTTP server and the CLI are thin
/// shells over it.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  std::shared_ptr<const Generation> generation() const;

  QueryResponse handle_query(const QueryRequest& req);
  /// Records without embeddings are embedded with the current embedder when
  /// they carry raw payloads.
  IngestResult ingest(std::vector<DataRecord> records);
  /// A model without a training distribution gets one computed from its
  /// training refs under the current generation.
  std::string register_model(ModelRecord record);
  /// Synchronous update; UpdateInProgress if one is already running.
  UpdateSummary force_update();
  /// Blocks until no background update is scheduled or running.
  void wait_for_pending_update();

  Recommendation rank(const std::string& dataset_id) const;
  Json status() const;
  /// External-format export of every stored embedding.
  std::pair<std::string, std::string> export_embeddings() const;  // manifest, vector file

  DataStore& store() { return *store_; }
  ModelZoo& zoo() { return *zoo_; }
  DriftMonitor& monitor() { return monitor_; }
  const ServiceConfig& config() const { return cfg_; }
  std::optional<UpdateSummary> last_update() const;
  std::optional<std::string> last_update_error() const;

 private:
  void load_generation();
  void publish(std::shared_ptr<const Generation> g);
  void persist_embedder(const Generation& g);
  UpdateSummary run_update();
  void schedule_update();

  ServiceConfig cfg_;
  std::unique_ptr<DataStore> store_;
  std::unique_ptr<ModelZoo> zoo_;
  DriftMonitor monitor_;
  std::unique_ptr<SystemUpdater> updater_;

  mutable std::mutex gen_mu_;
  std::shared_ptr<const Generation> gen_;

  mutable std::mutex pdf_mu_;
  std::map<std::string, DatasetDistribution> recent_pdfs_;

  mutable std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_pending_ = false;
  std::thread bg_thread_;
  std::optional<UpdateSummary> last_update_;
  std::optional<std::string> last_update_error_;
};

// JSON API: one function per endpoint. The HTTP server and the CLI's --json
// mode both print exactly these objects.
Json to_json(const QueryResponse& r);
QueryRequest query_request_from_json(const Json& j);
/// Binary query body: vector file bytes plus a manifest (rows and options).
QueryRequest query_request_from_binary(std::string_view vector_file, const Json& manifest);

Json api_query(Service& s, const Json& body);
Json api_ingest(Service& s, const Json& body);
Json api_ingest_binary(Service& s, std::string_view vector_file, const Json& manifest);
Json api_register_model(Service& s, const Json& body);
Json api_update(Service& s);
Json api_status(const Service& s);
Json api_rank(const Service& s, const std::string& dataset_id);

/// HTTP status for an error code; distinct for the codes clients branch on.
int http_status(ErrorCode code);

}  // namespace dmreuse
