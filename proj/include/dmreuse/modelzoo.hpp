#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dmreuse/distribution.hpp"

namespace dmreuse {

/// One trained model artifact, indexed by the distribution of its training
/// data. The zoo never loads or runs the artifact.
struct ModelRecord {
  std::string model_id;
  std::string artifact;      // blob bytes; empty when only a URI is known
  std::string artifact_uri;  // external URI, or the content-addressed blob path
  DatasetDistribution train_distribution;
  std::map<std::string, std::string> metadata;
  std::string content_hash;                // sha256 of artifact bytes
  std::vector<std::string> training_refs;  // datastore sample ids
  bool stale = false;
};

struct RankedModel {
  std::string model_id;
  double jsd = 0.0;
  bool operator==(const RankedModel&) const = default;
};

enum class RecommendationDecision { FineTune, TrainFromScratch };

std::string_view to_string(RecommendationDecision d);

struct Recommendation {
  RecommendationDecision decision = RecommendationDecision::TrainFromScratch;
  std::vector<RankedModel> ranked;  // ascending jsd, ties by model_id
  std::optional<std::string> chosen;
  double threshold = 0.5;
  std::vector<std::string> excluded;  // stale or version-mismatched entries
};

inline constexpr double kDefaultRecommendThreshold = 0.5;

struct RefreshReport {
  std::size_t updated = 0;
  std::vector<std::string> stale;
  std::vector<std::pair<std::string, std::string>> failures;  // model_id, reason
  std::uint64_t version = 0;
};

class ZooSnapshot {
 public:
  std::uint64_t version() const { return version_; }
  const std::vector<std::shared_ptr<const ModelRecord>>& models() const { return models_; }
  std::shared_ptr<const ModelRecord> find(const std::string& model_id) const;

  std::vector<RankedModel> rank_all(const DatasetDistribution& input,
                                    std::vector<std::string>* excluded = nullptr) const;
  Recommendation recommend(const DatasetDistribution& input,
                           double threshold = kDefaultRecommendThreshold) const;

 private:
  friend class ModelZoo;
  std::uint64_t version_ = 0;
  std::vector<std::shared_ptr<const ModelRecord>> models_;  // sorted by model_id
};

using ZooSnapshotPtr = std::shared_ptr<const ZooSnapshot>;

/// Best, median and worst entries of a ranking (indices 0, size/2, size-1).
struct RankingExtremes {
  RankedModel best, median, worst;
};
RankingExtremes ranking_extremes(const std::vector<RankedModel>& ranked);

/// Registry of trained models. Reads go against immutable snapshots;
/// registration and refresh are serialized.
class ModelZoo {
 public:
  /// Recomputes a model's training distribution under a new cluster model;
  /// nullopt means its training data is no longer available.
  using Recompute = std::function<std::optional<DatasetDistribution>(const ModelRecord&)>;

  ModelZoo();
  /// Persistent zoo: manifest.json plus content-addressed artifacts/ under dir.
  explicit ModelZoo(std::string dir);

  ZooSnapshotPtr snapshot() const;
  std::uint64_t version() const { return snapshot()->version(); }

  std::string register_model(ModelRecord record);
  Recommendation recommend(const DatasetDistribution& input,
                           double threshold = kDefaultRecommendThreshold) const {
    return snapshot()->recommend(input, threshold);
  }
  std::vector<RankedModel> rank_all(const DatasetDistribution& input) const {
    return snapshot()->rank_all(input);
  }

  /// Moves every entry to `model.version`; entries whose recompute fails are
  /// flagged stale. Published atomically once the manifest is durable.
  RefreshReport refresh_distributions(const ClusterModel& model, const Recompute& recompute);

  /// Artifact bytes for blob-stored models.
  std::string read_artifact(const std::string& model_id) const;
  std::string manifest_json() const;

 private:
  void load();
  void persist(const ZooSnapshot& snap) const;
  void publish(ZooSnapshotPtr next);

  std::string dir_;
  mutable std::mutex snap_mu_;
  ZooSnapshotPtr current_;
  std::mutex writer_mu_;
};

}  // namespace dmreuse
