#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmreuse/clustering.hpp"
#include "dmreuse/datastore.hpp"
#include "dmreuse/embedding.hpp"
#include "dmreuse/modelzoo.hpp"

namespace dmreuse {

struct CertaintyReport {
  std::string dataset_id;
  std::size_t total = 0;
  std::size_t certain = 0;
  double certainty = 0.0;  // percent
  double membership_bar = 0.5;
  std::array<std::size_t, 10> histogram{};  // max membership, bins of width 0.1
  std::uint64_t cluster_model_version = 0;
};

struct TriggerPolicy {
  double certainty_threshold = 80.0;  // percent
  std::size_t warmup_datasets = 5;
  std::size_t cooldown = 1;  // datasets that must pass after a trigger

  void validate() const;
};

/// Dataset indices at which updates fired, plus the index being evaluated.
struct TriggerHistory {
  std::vector<std::size_t> trigger_indices;
  std::size_t dataset_index = 0;
};

/// Share of samples whose largest fuzzy membership reaches `bar`.
CertaintyReport compute_certainty(const ClusterModel& model,
                                  std::span<const EmbeddingVector> embeddings, double bar = 0.5,
                                  std::string dataset_id = {});

bool should_trigger(const CertaintyReport& report, const TriggerPolicy& policy,
                    const TriggerHistory& history);

/// Scores incoming datasets in arrival order, decides triggers and appends
/// one JSON line per decision to the audit log (when a path is set).
class DriftMonitor {
 public:
  struct Decision {
    std::size_t dataset_index = 0;
    bool trigger = false;
  };

  explicit DriftMonitor(TriggerPolicy policy, std::string audit_path = {});

  Decision observe(const CertaintyReport& report, std::uint64_t generation);
  /// Records a completed update in the audit log.
  void record_update(const std::string& summary_json);

  TriggerHistory history() const;
  const TriggerPolicy& policy() const { return policy_; }
  std::vector<std::string> audit_lines() const;

 private:
  void append(const std::string& line);

  TriggerPolicy policy_;
  std::string audit_path_;
  mutable std::mutex mu_;
  TriggerHistory history_;
  std::vector<std::string> lines_;
};

/// Embedder, cluster model and the generation number they belong to. The
/// store index and zoo distributions of the same generation carry the same
/// cluster model version.
struct Generation {
  std::uint64_t number = 0;
  std::shared_ptr<const EmbedderSpec> embedder;  // null for external embeddings
  std::shared_ptr<const ClusterModel> model;     // null before the first update
};

struct UpdateConfig {
  std::size_t embedding_dim = 32;
  std::size_t k_min = 2;
  std::size_t k_max = 25;
  std::uint64_t seed = 0;
  double fuzzifier_m = 2.0;
  bool refit_embedder = true;
  /// Elbow sweeps run on at most this many evenly strided samples.
  std::size_t max_fit_samples = 20000;
};

struct UpdateSummary {
  std::uint64_t generation = 0;
  std::uint64_t embedder_version = 0;
  std::uint64_t cluster_version = 0;
  std::size_t chosen_k = 0;
  std::optional<ElbowReport> elbow;
  std::size_t records_reindexed = 0;
  std::size_t records_changed_cluster = 0;
  std::size_t zoo_refreshed = 0;
  std::vector<std::string> zoo_stale;
  bool reused_stored_embeddings = false;
  double elapsed_ms = 0.0;
};

/// The system-plane pipeline: refit embedder, re-embed, pick K and refit
/// clusters, reindex the store, refresh zoo distributions. One run at a time;
/// the new generation becomes visible all at once or not at all.
class SystemUpdater {
 public:
  /// Called inside the store's commit window, before the zoo refresh; used to
  /// persist the new embedder. Throwing aborts the update.
  using PersistHook = std::function<void(const Generation&)>;
  using PublishHook = std::function<void(std::shared_ptr<const Generation>)>;

  SystemUpdater(DataStore& store, ModelZoo& zoo, UpdateConfig config);

  UpdateSummary run(const Generation& current, const PublishHook& publish,
                    const PersistHook& persist = {});
  bool busy() const;
  const UpdateConfig& config() const { return config_; }

 private:
  DataStore& store_;
  ModelZoo& zoo_;
  UpdateConfig config_;
  mutable std::mutex lease_;
};

/// Distribution of a zoo model's training refs under a store snapshot.
std::optional<DatasetDistribution> distribution_of_refs(const StoreSnapshot& snap,
                                                        std::span<const std::string> refs);

}  // namespace dmreuse
