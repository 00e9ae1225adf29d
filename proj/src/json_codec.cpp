#include "dmreuse/json_codec.hpp"

#include <cmath>

#include "dmreuse/codec.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace {

Json floats(std::span<const float> v) {
  Json arr = Json::array();
  for (float x : v) arr.push_back(x);
  return arr;
}

std::vector<float> floats_from(const Json& arr, const std::string& owner) {
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) {
      throw Error(ErrorCode::FormatError, "non-numeric value in '" + owner + "'");
    }
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw Error(ErrorCode::NonFiniteValue, "in '" + owner + "'");
    out.push_back(static_cast<float>(d));
  }
  return out;
}

}  // namespace

Json to_json(const DatasetDistribution& d) {
  return {{"k", d.k},
          {"probs", d.probs},
          {"sample_count", d.sample_count},
          {"cluster_model_version", d.cluster_model_version}};
}

DatasetDistribution distribution_from_json(const Json& j) {
  return parse_guard("distribution", [&] {
    DatasetDistribution d;
    d.probs = j.at("probs").get<std::vector<double>>();
    d.k = j.value("k", d.probs.size());
    d.sample_count = j.value("sample_count", std::size_t{0});
    d.cluster_model_version = j.at("cluster_model_version").get<std::uint64_t>();
    return d;
  });
}

Json model_manifest_entry(const ModelRecord& m) {
  Json j = {{"model_id", m.model_id},
            {"artifact_uri", m.artifact_uri},
            {"content_hash", m.content_hash},
            {"train_distribution", to_json(m.train_distribution)},
            {"metadata", m.metadata},
            {"training_refs", m.training_refs},
            {"stale", m.stale}};
  // In-memory zoos keep the blob inline.
  if (!m.artifact.empty()) j["artifact_hex"] = to_hex(m.artifact);
  return j;
}

ModelRecord model_from_manifest_entry(const Json& j) {
  return parse_guard("model entry", [&] {
    ModelRecord m;
    m.model_id = j.at("model_id").get<std::string>();
    m.artifact_uri = j.value("artifact_uri", "");
    m.content_hash = j.value("content_hash", "");
    m.train_distribution = distribution_from_json(j.at("train_distribution"));
    if (j.contains("metadata")) {
      m.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    }
    if (j.contains("training_refs")) {
      m.training_refs = j["training_refs"].get<std::vector<std::string>>();
    }
    m.stale = j.value("stale", false);
    if (j.contains("artifact_hex")) m.artifact = from_hex(j["artifact_hex"].get<std::string>());
    return m;
  });
}

Json to_json(const Label& l) { return {{"schema", l.schema}, {"data_hex", to_hex(l.bytes)}}; }

Label label_from_json(const Json& j) {
  return parse_guard("label", [&] {
    Label l;
    l.schema = j.value("schema", "");
    if (j.contains("data_hex")) {
      l.bytes = from_hex(j["data_hex"].get<std::string>());
    } else {
      l.bytes = j.at("data").get<std::string>();
    }
    return l;
  });
}

Json to_json(const DataRecord& r, bool include_embedding) {
  Json j = {{"sample_id", r.sample_id},
            {"cluster_id", r.cluster_id},
            {"label", to_json(r.label)},
            {"source", r.source},
            {"ingested_at", r.ingested_at},
            {"cluster_model_version", r.cluster_model_version}};
  if (include_embedding) j["embedding"] = floats(r.embedding.values);
  return j;
}

DataRecord record_from_json(const Json& j) {
  return parse_guard("record", [&] {
    DataRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    if (j.contains("embedding")) r.embedding.values = floats_from(j["embedding"], r.sample_id);
    r.label = label_from_json(j.at("label"));
    r.source = j.value("source", "");
    if (j.contains("raw")) {
      RawPayload raw;
      raw.shape = j["raw"].at("shape").get<std::vector<std::size_t>>();
      raw.values = floats_from(j["raw"].at("values"), r.sample_id);
      r.raw = std::move(raw);
    }
    return r;
  });
}

Json to_json(const LookupResult& r, bool include_embedding) {
  Json recs = Json::array();
  for (const auto& rec : r.records) recs.push_back(to_json(rec, include_embedding));
  return {{"records", std::move(recs)},
          {"requested_count", r.requested_count},
          {"per_cluster_counts", r.per_cluster_counts},
          {"rng_seed", r.rng_seed},
          {"cluster_model_version", r.cluster_model_version}};
}

Json to_json(const PseudoLabelOutcome& o) {
  Json j = {{"sample_id", o.sample_id},
            {"decision", std::string(to_string(o.decision))},
            {"distance", o.distance},
            {"searched_all_clusters", o.searched_all_clusters},
            {"cluster_model_version", o.cluster_model_version}};
  if (o.matched_record) {
    j["matched_sample_id"] = o.matched_record->sample_id;
    j["label"] = to_json(o.matched_record->label);
  }
  return j;
}

Json to_json(const Recommendation& r) {
  Json ranked = Json::array();
  for (const auto& m : r.ranked) ranked.push_back({{"model_id", m.model_id}, {"jsd", m.jsd}});
  Json j = {{"decision", std::string(to_string(r.decision))},
            {"ranked", std::move(ranked)},
            {"threshold", r.threshold},
            {"excluded", r.excluded}};
  j["chosen"] = r.chosen ? Json(*r.chosen) : Json(nullptr);
  return j;
}

Json to_json(const StoreStats& s) {
  return {{"record_count", s.record_count},
          {"per_cluster", s.per_cluster},
          {"unassigned", s.unassigned},
          {"cluster_model_version", s.cluster_model_version},
          {"dim", s.dim},
          {"commit_seq", s.commit_seq},
          {"audit_entries", s.audit_entries},
          {"disk_bytes", s.disk_bytes}};
}

Json to_json(const ElbowReport& e) {
  return {{"k_values", e.k_values},
          {"wss_values", e.wss_values},
          {"chosen_k", e.chosen_k},
          {"knee_score", e.knee_score}};
}

Json to_json(const CertaintyReport& c) {
  return {{"dataset_id", c.dataset_id},
          {"total", c.total},
          {"certain", c.certain},
          {"certainty", c.certainty},
          {"membership_bar", c.membership_bar},
          {"histogram", c.histogram},
          {"cluster_model_version", c.cluster_model_version}};
}

Json to_json(const UpdateSummary& u) {
  Json j = {{"generation", u.generation},
            {"embedder_version", u.embedder_version},
            {"cluster_version", u.cluster_version},
            {"chosen_k", u.chosen_k},
            {"records_reindexed", u.records_reindexed},
            {"records_changed_cluster", u.records_changed_cluster},
            {"zoo_refreshed", u.zoo_refreshed},
            {"zoo_stale", u.zoo_stale},
            {"reused_stored_embeddings", u.reused_stored_embeddings},
            {"elapsed_ms", u.elapsed_ms}};
  j["elbow"] = u.elbow ? to_json(*u.elbow) : Json(nullptr);
  return j;
}

Json error_json(const Error& e) {
  Json j = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
  if (const auto* s = dynamic_cast<const StageError*>(&e)) j["stage"] = s->stage();
  return j;
}

}  // namespace dmreuse
