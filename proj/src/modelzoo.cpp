#include "dmreuse/modelzoo.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "dmreuse/error.hpp"
#include "dmreuse/json_codec.hpp"

namespace dmreuse {

namespace fs = std::filesystem;

std::string_view to_string(RecommendationDecision d) {
  return d == RecommendationDecision::FineTune ? "fine-tune" : "train-from-scratch";
}

std::shared_ptr<const ModelRecord> ZooSnapshot::find(const std::string& model_id) const {
  auto it = std::lower_bound(models_.begin(), models_.end(), model_id,
                             [](const auto& m, const std::string& id) { return m->model_id < id; });
  if (it == models_.end() || (*it)->model_id != model_id) return nullptr;
  return *it;
}

std::vector<RankedModel> ZooSnapshot::rank_all(const DatasetDistribution& input,
                                               std::vector<std::string>* excluded) const {
  std::vector<RankedModel> ranked;
  ranked.reserve(models_.size());
  for (const auto& m : models_) {
    const auto& d = m->train_distribution;
    if (m->stale || d.cluster_model_version != input.cluster_model_version || d.k != input.k) {
      if (excluded) excluded->push_back(m->model_id);
      continue;
    }
    ranked.push_back({m->model_id, jsd(input, d)});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedModel& a, const RankedModel& b) {
    if (a.jsd != b.jsd) return a.jsd < b.jsd;
    return a.model_id < b.model_id;
  });
  return ranked;
}

Recommendation ZooSnapshot::recommend(const DatasetDistribution& input, double threshold) const {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "recommendation threshold must lie in (0, 1]");
  }
  input.validate();
  Recommendation rec;
  rec.threshold = threshold;
  rec.ranked = rank_all(input, &rec.excluded);
  if (!rec.ranked.empty() && rec.ranked.front().jsd < threshold) {
    rec.decision = RecommendationDecision::FineTune;
    rec.chosen = rec.ranked.front().model_id;
  }
  return rec;
}

RankingExtremes ranking_extremes(const std::vector<RankedModel>& ranked) {
  if (ranked.empty()) throw Error(ErrorCode::EmptyInput, "empty ranking");
  return {ranked.front(), ranked[ranked.size() / 2], ranked.back()};
}

// ---------------------------------------------------------------------------

ModelZoo::ModelZoo() : current_(std::make_shared<ZooSnapshot>()) {}

ModelZoo::ModelZoo(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(fs::path(dir_) / "artifacts", ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot create " + dir_ + ": " + ec.message());
  load();
}

ZooSnapshotPtr ModelZoo::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return current_;
}

void ModelZoo::publish(ZooSnapshotPtr next) {
  std::lock_guard lock(snap_mu_);
  current_ = std::move(next);
}

namespace {

nlohmann::json manifest_of(const ZooSnapshot& snap) {
  nlohmann::json j;
  j["format"] = "model-zoo";
  j["version"] = 1;
  j["cluster_model_version"] = snap.version();
  auto& arr = j["models"] = nlohmann::json::array();
  for (const auto& m : snap.models()) arr.push_back(model_manifest_entry(*m));
  return j;
}

}  // namespace

std::string ModelZoo::manifest_json() const { return manifest_of(*snapshot()).dump(2); }

void ModelZoo::persist(const ZooSnapshot& snap) const {
  if (dir_.empty()) return;
  write_file_atomic((fs::path(dir_) / "manifest.json").string(), manifest_of(snap).dump(2));
}

void ModelZoo::load() {
  auto snap = std::make_shared<ZooSnapshot>();
  const auto path = fs::path(dir_) / "manifest.json";
  if (fs::exists(path)) {
    try {
      const auto j = nlohmann::json::parse(read_file(path.string()));
      snap->version_ = j.at("cluster_model_version").get<std::uint64_t>();
      for (const auto& e : j.at("models")) {
        snap->models_.push_back(std::make_shared<const ModelRecord>(model_from_manifest_entry(e)));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::StorageFailure, std::string("corrupt zoo manifest: ") + e.what());
    }
    std::sort(snap->models_.begin(), snap->models_.end(),
              [](const auto& a, const auto& b) { return a->model_id < b->model_id; });
  }
  current_ = std::move(snap);
}

std::string ModelZoo::register_model(ModelRecord record) {
  std::lock_guard lock(writer_mu_);
  const auto base = snapshot();
  if (record.model_id.empty()) throw Error(ErrorCode::InvalidArgument, "model_id is required");
  record.train_distribution.validate();
  if (record.train_distribution.cluster_model_version != base->version()) {
    throw Error(ErrorCode::VersionMismatch,
                "training distribution is at cluster model version " +
                    std::to_string(record.train_distribution.cluster_model_version) +
                    ", zoo is at " + std::to_string(base->version()));
  }
  if (base->find(record.model_id)) {
    throw Error(ErrorCode::DuplicateId, "model '" + record.model_id + "' already registered");
  }
  if (!record.artifact.empty()) {
    const auto digest = sha256_hex(record.artifact);
    if (!record.content_hash.empty() && record.content_hash != digest) {
      throw Error(ErrorCode::HashMismatch, "declared hash " + record.content_hash +
                                               " does not match artifact digest " + digest);
    }
    record.content_hash = digest;
    if (!dir_.empty()) {
      const auto blob = fs::path(dir_) / "artifacts" / digest;
      if (!fs::exists(blob)) write_file_atomic(blob.string(), record.artifact);
      record.artifact_uri = (fs::path("artifacts") / digest).string();
    }
  } else if (record.artifact_uri.empty()) {
    throw Error(ErrorCode::InvalidArgument, "model needs artifact bytes or an artifact URI");
  }
  if (!record.metadata.contains("registered_at")) {
    record.metadata["registered_at"] = std::to_string(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
  }
  record.stale = false;
  if (!dir_.empty()) record.artifact.clear();  // blob lives on disk

  auto next = std::make_shared<ZooSnapshot>(*base);
  auto rec = std::make_shared<const ModelRecord>(std::move(record));
  auto it = std::lower_bound(next->models_.begin(), next->models_.end(), rec->model_id,
                             [](const auto& m, const std::string& id) { return m->model_id < id; });
  next->models_.insert(it, rec);
  persist(*next);
  publish(next);
  return rec->model_id;
}

RefreshReport ModelZoo::refresh_distributions(const ClusterModel& model, const Recompute& recompute) {
  std::lock_guard lock(writer_mu_);
  const auto base = snapshot();
  if (model.version <= base->version()) {
    throw Error(ErrorCode::VersionMismatch, "refresh to version " + std::to_string(model.version) +
                                                " does not advance zoo version " +
                                                std::to_string(base->version()));
  }
  RefreshReport report;
  report.version = model.version;
  auto next = std::make_shared<ZooSnapshot>();
  next->version_ = model.version;
  for (const auto& m : base->models()) {
    auto copy = std::make_shared<ModelRecord>(*m);
    std::optional<DatasetDistribution> fresh;
    try {
      fresh = recompute(*m);
      if (fresh) {
        fresh->validate();
        if (fresh->cluster_model_version != model.version || fresh->k != model.k) {
          throw Error(ErrorCode::VersionMismatch, "recomputed distribution not under new model");
        }
      } else {
        report.failures.emplace_back(m->model_id, "training data unavailable");
      }
    } catch (const std::exception& e) {
      fresh.reset();
      report.failures.emplace_back(m->model_id, e.what());
    }
    if (fresh) {
      copy->train_distribution = std::move(*fresh);
      copy->stale = false;
      ++report.updated;
    } else {
      copy->stale = true;
      report.stale.push_back(m->model_id);
    }
    next->models_.push_back(std::move(copy));
  }
  persist(*next);
  publish(next);
  return report;
}

std::string ModelZoo::read_artifact(const std::string& model_id) const {
  const auto m = snapshot()->find(model_id);
  if (!m) throw Error(ErrorCode::NotFound, "no model '" + model_id + "'");
  if (!m->artifact.empty()) return m->artifact;
  if (dir_.empty() || m->content_hash.empty()) {
    throw Error(ErrorCode::NotFound, "model '" + model_id + "' is stored by external URI only");
  }
  const auto bytes = read_file((fs::path(dir_) / "artifacts" / m->content_hash).string());
  if (sha256_hex(bytes) != m->content_hash) {
    throw Error(ErrorCode::HashMismatch, "artifact of '" + model_id + "' is corrupt");
  }
  return bytes;
}

}  // namespace dmreuse
