#include "dmreuse/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
 public:
  double lap_ms() {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    return ms;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::string embedder_file(const std::string& dir, std::uint64_t generation) {
  return (fs::path(dir) / ("embedder.v" + std::to_string(generation) + ".bin")).string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ServiceConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (embedding_dim == 0) fail("embedding_dim must be positive");
  if (k_min == 0 || k_min > k_max) fail("k range must satisfy 1 <= k_min <= k_max");
  if (threshold_t && !(*threshold_t > 0.0)) fail("threshold_t must be positive");
  if (!(jsd_threshold > 0.0 && jsd_threshold <= 1.0)) fail("jsd_threshold must lie in (0, 1]");
  if (!(certainty_threshold > 0.0 && certainty_threshold < 100.0)) {
    fail("certainty_threshold must lie in (0, 100)");
  }
  if (!(membership_bar > 0.0 && membership_bar < 1.0)) fail("membership_bar must lie in (0, 1)");
  if (!(fuzzifier_m > 1.0)) fail("fuzzifier_m must exceed 1");
  if (port < 0 || port > 65535) fail("port out of range");
  if (max_request_bytes == 0) fail("max_request_bytes must be positive");
}

ServiceConfig config_from_json(const Json& j, ServiceConfig c) {
  return parse_guard("config", [&] {
    c.listen_host = j.value("listen_host", c.listen_host);
    c.port = j.value("port", c.port);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.k_min = j.value("k_min", c.k_min);
    c.k_max = j.value("k_max", c.k_max);
    if (j.contains("threshold_t")) {
      if (j["threshold_t"].is_null()) {
        c.threshold_t.reset();
      } else {
        c.threshold_t = j["threshold_t"].get<double>();
      }
    }
    c.jsd_threshold = j.value("jsd_threshold", c.jsd_threshold);
    c.certainty_threshold = j.value("certainty_threshold", c.certainty_threshold);
    c.membership_bar = j.value("membership_bar", c.membership_bar);
    c.warmup_datasets = j.value("warmup_datasets", c.warmup_datasets);
    c.cooldown = j.value("cooldown", c.cooldown);
    c.fuzzifier_m = j.value("fuzzifier_m", c.fuzzifier_m);
    c.seed = j.value("seed", c.seed);
    c.max_request_bytes = j.value("max_request_bytes", c.max_request_bytes);
    c.max_fit_samples = j.value("max_fit_samples", c.max_fit_samples);
    c.auto_update = j.value("auto_update", c.auto_update);
    c.store_sync = j.value("store_sync", c.store_sync);
    return c;
  });
}

ServiceConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, "config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_env_overrides(ServiceConfig& cfg) {
  enum class Kind { Str, Int, Num, Bool };
  struct Var {
    const char* env;
    const char* key;
    Kind kind;
  };
  static constexpr Var vars[] = {
      {"DMREUSE_LISTEN_HOST", "listen_host", Kind::Str},
      {"DMREUSE_PORT", "port", Kind::Int},
      {"DMREUSE_DATA_DIR", "data_dir", Kind::Str},
      {"DMREUSE_EMBEDDING_DIM", "embedding_dim", Kind::Int},
      {"DMREUSE_K_MIN", "k_min", Kind::Int},
      {"DMREUSE_K_MAX", "k_max", Kind::Int},
      {"DMREUSE_THRESHOLD_T", "threshold_t", Kind::Num},
      {"DMREUSE_JSD_THRESHOLD", "jsd_threshold", Kind::Num},
      {"DMREUSE_CERTAINTY_THRESHOLD", "certainty_threshold", Kind::Num},
      {"DMREUSE_MEMBERSHIP_BAR", "membership_bar", Kind::Num},
      {"DMREUSE_WARMUP", "warmup_datasets", Kind::Int},
      {"DMREUSE_COOLDOWN", "cooldown", Kind::Int},
      {"DMREUSE_FUZZIFIER_M", "fuzzifier_m", Kind::Num},
      {"DMREUSE_SEED", "seed", Kind::Int},
      {"DMREUSE_MAX_REQUEST_BYTES", "max_request_bytes", Kind::Int},
      {"DMREUSE_AUTO_UPDATE", "auto_update", Kind::Bool},
  };
  Json j = Json::object();
  for (const auto& v : vars) {
    const char* raw = std::getenv(v.env);
    if (!raw) continue;
    const std::string s(raw);
    try {
      switch (v.kind) {
        case Kind::Str: j[v.key] = s; break;
        case Kind::Int: j[v.key] = std::stoull(s); break;
        case Kind::Num: j[v.key] = std::stod(s); break;
        case Kind::Bool: j[v.key] = (s == "1" || s == "true" || s == "yes"); break;
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, std::string(v.env) + "='" + s + "' is not valid");
    }
  }
  cfg = config_from_json(j, cfg);
}

// ---------------------------------------------------------------------------
// Requests

std::string_view to_string(QueryOp op) {
  switch (op) {
    case QueryOp::Lookup: return "lookup";
    case QueryOp::Recommend: return "recommend";
    case QueryOp::Certainty: return "certainty";
    case QueryOp::PseudoLabel: return "pseudo_label";
  }
  return "?";
}

QueryOp query_op_from_string(std::string_view s) {
  for (auto op : {QueryOp::Lookup, QueryOp::Recommend, QueryOp::Certainty, QueryOp::PseudoLabel}) {
    if (to_string(op) == s) return op;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown op '" + std::string(s) + "'");
}

void QueryRequest::validate() const {
  if (raw.empty() == embeddings.empty()) {
    throw Error(raw.empty() ? ErrorCode::EmptyInput : ErrorCode::InvalidArgument,
                raw.empty() ? "query carries no samples"
                            : "query mixes raw payloads and embeddings");
  }
  if (ops.empty()) throw Error(ErrorCode::InvalidArgument, "no ops requested");
  if (n_override && *n_override == 0) throw Error(ErrorCode::InvalidArgument, "n must be positive");
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      monitor_(TriggerPolicy{cfg_.certainty_threshold, cfg_.warmup_datasets, cfg_.cooldown},
               cfg_.data_dir.empty() ? std::string{}
                                     : (fs::path(cfg_.data_dir) / "drift_audit.jsonl").string()) {
  cfg_.validate();
  if (cfg_.data_dir.empty()) {
    store_ = std::make_unique<DataStore>();
    zoo_ = std::make_unique<ModelZoo>();
  } else {
    std::error_code ec;
    fs::create_directories(cfg_.data_dir, ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create " + cfg_.data_dir);
    DataStore::Options opts;
    opts.sync = cfg_.store_sync;
    store_ = std::make_unique<DataStore>((fs::path(cfg_.data_dir) / "store").string(), opts);
    zoo_ = std::make_unique<ModelZoo>((fs::path(cfg_.data_dir) / "zoo").string());
  }
  UpdateConfig uc;
  uc.embedding_dim = cfg_.embedding_dim;
  uc.k_min = cfg_.k_min;
  uc.k_max = cfg_.k_max;
  uc.seed = cfg_.seed;
  uc.fuzzifier_m = cfg_.fuzzifier_m;
  uc.max_fit_samples = cfg_.max_fit_samples;
  updater_ = std::make_unique<SystemUpdater>(*store_, *zoo_, uc);
  load_generation();
}

Service::~Service() {
  wait_for_pending_update();
  std::lock_guard lock(bg_mu_);
  if (bg_thread_.joinable()) bg_thread_.join();
}

void Service::load_generation() {
  auto g = std::make_shared<Generation>();
  const auto snap = store_->snapshot();
  g->number = snap->version();
  g->model = snap->model();
  if (!cfg_.data_dir.empty() && g->number > 0) {
    const auto path = embedder_file(cfg_.data_dir, g->number);
    if (fs::exists(path)) {
      g->embedder = std::make_shared<const EmbedderSpec>(deserialize_embedder(read_file(path)));
    }
  }
  publish(std::move(g));
}

std::shared_ptr<const Generation> Service::generation() const {
  std::lock_guard lock(gen_mu_);
  return gen_;
}

void Service::publish(std::shared_ptr<const Generation> g) {
  std::lock_guard lock(gen_mu_);
  gen_ = std::move(g);
}

void Service::persist_embedder(const Generation& g) {
  if (cfg_.data_dir.empty() || !g.embedder) return;
  write_file_atomic(embedder_file(cfg_.data_dir, g.number), serialize_embedder(*g.embedder));
}

QueryResponse Service::handle_query(const QueryRequest& req) {
  req.validate();
  Stopwatch clock;
  QueryResponse resp;
  resp.dataset_id = req.dataset_id;

  // Generation, store and zoo are published in that reverse order by an
  // update; retry until all three agree.
  std::shared_ptr<const Generation> gen;
  SnapshotPtr snap;
  ZooSnapshotPtr zoo;
  for (;;) {
    gen = generation();
    snap = store_->snapshot();
    zoo = zoo_->snapshot();
    if (generation() != gen) continue;
    if (snap->version() == gen->number && zoo->version() == gen->number) break;
    // A crash between the zoo and store commits leaves them apart until the
    // next update; stale zoo entries are then excluded from rankings.
    if (snap->version() == gen->number && !updater_->busy()) break;
    std::this_thread::yield();
  }
  resp.generation = gen->number;
  if (!gen->model) {
    throw Error(ErrorCode::NotInitialized, "no cluster model yet; ingest data and run an update");
  }
  const ClusterModel& model = *gen->model;

  std::vector<EmbeddingVector> vecs;
  std::vector<std::string> ids;
  if (!req.raw.empty()) {
    if (!gen->embedder) {
      throw Error(ErrorCode::NotInitialized,
                  "this service indexes external embeddings; send embeddings, not raw payloads");
    }
    vecs.reserve(req.raw.size());
    for (const auto& s : req.raw) {
      vecs.push_back(embed(*gen->embedder, s));
      ids.push_back(s.id);
    }
  } else {
    vecs.reserve(req.embeddings.size());
    for (const auto& e : req.embeddings) {
      if (e.vector.dim() != model.dim) {
        throw Error(ErrorCode::DimMismatch, "sample '" + e.id + "' has dim " +
                                                std::to_string(e.vector.dim()) +
                                                ", index dim is " + std::to_string(model.dim));
      }
      if (!e.vector.all_finite()) {
        throw Error(ErrorCode::NonFiniteValue, "embedding of sample '" + e.id + "'");
      }
      vecs.push_back(e.vector);
      ids.push_back(e.id);
    }
  }
  resp.timings_ms["embed"] = clock.lap_ms();

  resp.pdf = compute_pdf(model, vecs);
  resp.timings_ms["distribution"] = clock.lap_ms();

  auto certainty = compute_certainty(model, vecs, cfg_.membership_bar, req.dataset_id);
  const auto decision = monitor_.observe(certainty, gen->number);
  if (decision.trigger && cfg_.auto_update) {
    schedule_update();
    resp.update_scheduled = true;
  }
  if (req.ops.contains(QueryOp::Certainty)) resp.certainty = std::move(certainty);
  resp.timings_ms["certainty"] = clock.lap_ms();

  if (req.ops.contains(QueryOp::Lookup)) {
    const auto n = req.n_override.value_or(vecs.size());
    resp.lookup = snap->lookup_by_distribution(resp.pdf, n, req.seed.value_or(cfg_.seed));
    resp.timings_ms["lookup"] = clock.lap_ms();
  }
  if (req.ops.contains(QueryOp::Recommend)) {
    resp.recommendation = zoo->recommend(resp.pdf, req.jsd_threshold.value_or(cfg_.jsd_threshold));
    resp.timings_ms["recommend"] = clock.lap_ms();
  }
  if (req.ops.contains(QueryOp::PseudoLabel)) {
    const auto t = req.threshold_t ? req.threshold_t : cfg_.threshold_t;
    if (!t) throw Error(ErrorCode::InvalidArgument, "pseudo_label needs threshold_t");
    resp.pseudo_labels.reserve(vecs.size());
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      resp.pseudo_labels.push_back(snap->pseudo_label(vecs[i], *t, ids[i]));
    }
    resp.timings_ms["pseudo_label"] = clock.lap_ms();
  }

  if (!req.dataset_id.empty()) {
    std::lock_guard lock(pdf_mu_);
    recent_pdfs_[req.dataset_id] = resp.pdf;
    if (recent_pdfs_.size() > 4096) recent_pdfs_.erase(recent_pdfs_.begin());
  }
  return resp;
}

IngestResult Service::ingest(std::vector<DataRecord> records) {
  for (int attempt = 0;; ++attempt) {
    const auto gen = generation();
    std::vector<DataRecord> batch = records;
    if (gen->embedder) {
      for (auto& r : batch) {
        if (r.embedding.dim() == 0 && r.raw) r.embedding = embed(*gen->embedder, r.raw_sample());
      }
    }
    try {
      IngestResult out;
      out.inserted = store_->insert(std::move(batch), gen->number);
      out.stats = store_->stats();
      return out;
    } catch (const Error& e) {
      // The generation moved under us; embed again with the new embedder.
      if (e.code() != ErrorCode::VersionMismatch || attempt >= 1000) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
}

std::string Service::register_model(ModelRecord record) {
  if (record.train_distribution.k != 0) return zoo_->register_model(std::move(record));
  if (record.training_refs.empty()) {
    throw Error(ErrorCode::InvalidArgument,
                "model needs a training distribution or training refs to derive one");
  }
  for (int attempt = 0;; ++attempt) {
    const auto snap = store_->snapshot();
    if (!snap->model()) throw Error(ErrorCode::NotInitialized, "no cluster model yet");
    auto dist = distribution_of_refs(*snap, record.training_refs);
    if (!dist) {
      throw Error(ErrorCode::InsufficientData, "none of the training refs are in the store");
    }
    ModelRecord attempt_record = record;
    attempt_record.train_distribution = std::move(*dist);
    try {
      return zoo_->register_model(std::move(attempt_record));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionMismatch || attempt >= 1000) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
}

UpdateSummary Service::run_update() {
  const auto gen = generation();
  auto summary = updater_->run(
      *gen, [this](std::shared_ptr<const Generation> g) { publish(std::move(g)); },
      [this](const Generation& g) { persist_embedder(g); });
  monitor_.record_update(to_json(summary).dump());
  std::lock_guard lock(bg_mu_);
  last_update_ = summary;
  last_update_error_.reset();
  return summary;
}

UpdateSummary Service::force_update() { return run_update(); }

void Service::schedule_update() {
  std::lock_guard lock(bg_mu_);
  if (bg_pending_) return;
  bg_pending_ = true;
  if (bg_thread_.joinable()) bg_thread_.join();  // previous run has finished
  bg_thread_ = std::thread([this] {
    try {
      run_update();
    } catch (const std::exception& e) {
      std::lock_guard lock(bg_mu_);
      last_update_error_ = e.what();
    }
    std::lock_guard lock(bg_mu_);
    bg_pending_ = false;
    bg_cv_.notify_all();
  });
}

void Service::wait_for_pending_update() {
  std::unique_lock lock(bg_mu_);
  bg_cv_.wait(lock, [this] { return !bg_pending_; });
}

std::optional<UpdateSummary> Service::last_update() const {
  std::lock_guard lock(bg_mu_);
  return last_update_;
}

std::optional<std::string> Service::last_update_error() const {
  std::lock_guard lock(bg_mu_);
  return last_update_error_;
}

Recommendation Service::rank(const std::string& dataset_id) const {
  DatasetDistribution pdf;
  {
    std::lock_guard lock(pdf_mu_);
    auto it = recent_pdfs_.find(dataset_id);
    if (it == recent_pdfs_.end()) {
      throw Error(ErrorCode::NotFound, "no recent query for dataset '" + dataset_id + "'");
    }
    pdf = it->second;
  }
  return zoo_->recommend(pdf, cfg_.jsd_threshold);
}

Json Service::status() const {
  const auto gen = generation();
  const auto zoo = zoo_->snapshot();
  std::size_t stale = 0;
  for (const auto& m : zoo->models()) stale += m->stale ? 1 : 0;
  const auto history = monitor_.history();
  Json j = {{"generation", gen->number},
            {"embedder_version", gen->embedder ? gen->embedder->version : 0},
            {"k", gen->model ? gen->model->k : 0},
            {"store", to_json(store_->stats())},
            {"zoo", {{"models", zoo->models().size()},
                     {"stale", stale},
                     {"cluster_model_version", zoo->version()}}},
            {"drift", {{"datasets_observed", history.dataset_index},
                       {"triggers", history.trigger_indices}}},
            {"update_in_progress", updater_->busy()}};
  std::lock_guard lock(bg_mu_);
  j["last_update"] = last_update_ ? to_json(*last_update_) : Json(nullptr);
  j["last_update_error"] = last_update_error_ ? Json(*last_update_error_) : Json(nullptr);
  return j;
}

std::pair<std::string, std::string> Service::export_embeddings() const {
  const auto snap = store_->snapshot();
  std::vector<ExternalEmbedding> rows;
  rows.reserve(snap->records().size());
  snap->records().for_each([&](std::size_t, const DataRecord& r) {
    if (r.embedding.dim() != 0) rows.push_back({r.sample_id, r.source, r.embedding});
  });
  const auto dim = static_cast<std::uint32_t>(snap->dim());
  return {make_embedding_manifest(rows, dim, "embeddings.bin"), encode_embedding_file(rows, dim)};
}

// ---------------------------------------------------------------------------
// JSON API

Json to_json(const QueryResponse& r) {
  Json j = {{"dataset_id", r.dataset_id},
            {"generation", r.generation},
            {"pdf", to_json(r.pdf)},
            {"update_scheduled", r.update_scheduled},
            {"timings_ms", r.timings_ms}};
  if (r.lookup) j["lookup"] = to_json(*r.lookup);
  if (r.recommendation) j["recommendation"] = to_json(*r.recommendation);
  if (r.certainty) j["certainty"] = to_json(*r.certainty);
  if (!r.pseudo_labels.empty()) {
    Json arr = Json::array();
    for (const auto& o : r.pseudo_labels) arr.push_back(to_json(o));
    j["pseudo_labels"] = std::move(arr);
  }
  return j;
}

namespace {

void parse_query_options(const Json& j, QueryRequest& req) {
  req.dataset_id = j.value("dataset_id", "");
  if (j.contains("ops")) {
    for (const auto& op : j["ops"]) req.ops.insert(query_op_from_string(op.get<std::string>()));
  } else {
    req.ops = {QueryOp::Lookup, QueryOp::Recommend, QueryOp::Certainty};
  }
  if (j.contains("n")) req.n_override = j["n"].get<std::size_t>();
  if (j.contains("seed")) req.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("threshold_t")) req.threshold_t = j["threshold_t"].get<double>();
  if (j.contains("jsd_threshold")) req.jsd_threshold = j["jsd_threshold"].get<double>();
}

std::vector<float> finite_floats(const Json& arr, const std::string& id) {
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& x : arr) out.push_back(x.get<float>());
  for (float v : out) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "sample '" + id + "'");
  }
  return out;
}

}  // namespace

QueryRequest query_request_from_json(const Json& j) {
  return parse_guard("query", [&] {
    QueryRequest req;
    parse_query_options(j, req);
    if (j.contains("raw")) {
      for (const auto& s : j["raw"]) {
        RawSample r;
        r.id = s.at("id").get<std::string>();
        r.shape = s.at("shape").get<std::vector<std::size_t>>();
        r.payload = finite_floats(s.at("payload"), r.id);
        r.source = s.value("source", "");
        req.raw.push_back(std::move(r));
      }
    }
    if (j.contains("embeddings")) {
      for (const auto& s : j["embeddings"]) {
        ExternalEmbedding e;
        e.id = s.at("id").get<std::string>();
        e.source = s.value("source", "");
        e.vector.values = finite_floats(s.at("vector"), e.id);
        req.embeddings.push_back(std::move(e));
      }
    }
    return req;
  });
}

QueryRequest query_request_from_binary(std::string_view vector_file, const Json& manifest) {
  QueryRequest req;
  parse_guard("query manifest", [&] {
    parse_query_options(manifest, req);
    return 0;
  });
  req.embeddings = bind_manifest(decode_embedding_file(vector_file), manifest.dump());
  return req;
}

Json api_query(Service& s, const Json& body) {
  return to_json(s.handle_query(query_request_from_json(body)));
}

Json api_ingest(Service& s, const Json& body) {
  std::vector<DataRecord> records = parse_guard("ingest", [&] {
    std::vector<DataRecord> out;
    for (const auto& r : body.at("records")) out.push_back(record_from_json(r));
    return out;
  });
  const auto res = s.ingest(std::move(records));
  return {{"inserted", res.inserted}, {"stats", to_json(res.stats)}};
}

Json api_ingest_binary(Service& s, std::string_view vector_file, const Json& manifest) {
  auto rows = bind_manifest(decode_embedding_file(vector_file), manifest.dump());
  std::vector<DataRecord> records = parse_guard("ingest manifest", [&] {
    const auto& mrows = manifest.at("rows");
    std::vector<DataRecord> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      DataRecord r;
      r.sample_id = std::move(rows[i].id);
      r.source = std::move(rows[i].source);
      r.embedding = std::move(rows[i].vector);
      r.label = label_from_json(mrows[i].at("label"));
      out.push_back(std::move(r));
    }
    return out;
  });
  const auto res = s.ingest(std::move(records));
  return {{"inserted", res.inserted}, {"stats", to_json(res.stats)}};
}

Json api_register_model(Service& s, const Json& body) {
  ModelRecord m = parse_guard("model", [&] {
    ModelRecord out;
    out.model_id = body.at("model_id").get<std::string>();
    if (body.contains("artifact_hex")) out.artifact = from_hex(body["artifact_hex"].get<std::string>());
    out.artifact_uri = body.value("artifact_uri", "");
    out.content_hash = body.value("content_hash", "");
    if (body.contains("train_distribution")) {
      out.train_distribution = distribution_from_json(body["train_distribution"]);
    }
    if (body.contains("metadata")) {
      out.metadata = body["metadata"].get<std::map<std::string, std::string>>();
    }
    if (body.contains("training_refs")) {
      out.training_refs = body["training_refs"].get<std::vector<std::string>>();
    }
    return out;
  });
  const auto id = s.register_model(std::move(m));
  const auto rec = s.zoo().snapshot()->find(id);
  return {{"model_id", id},
          {"content_hash", rec ? rec->content_hash : ""},
          {"train_distribution", rec ? to_json(rec->train_distribution) : Json(nullptr)}};
}

Json api_update(Service& s) { return to_json(s.force_update()); }

Json api_status(const Service& s) { return s.status(); }

Json api_rank(const Service& s, const std::string& dataset_id) {
  Json j = to_json(s.rank(dataset_id));
  j["dataset_id"] = dataset_id;
  return j;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::FormatError:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::RangeError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::HashMismatch: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::DuplicateId:
    case ErrorCode::UpdateInProgress: return 409;
    case ErrorCode::PayloadTooLarge: return 413;
    case ErrorCode::DimMismatch: return 422;
    case ErrorCode::KMismatch:
    case ErrorCode::VersionMismatch: return 409;
    case ErrorCode::InsufficientData:
    case ErrorCode::TooFewSamples:
    case ErrorCode::EmptyStore: return 424;
    case ErrorCode::NotInitialized: return 503;
    case ErrorCode::StorageFailure: return 500;
  }
  return 500;
}

}  // namespace dmreuse
