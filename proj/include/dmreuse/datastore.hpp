#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmreuse/clustering.hpp"
#include "dmreuse/distribution.hpp"
#include "dmreuse/embedding.hpp"

namespace dmreuse {

struct Label {
  std::string schema;  // e.g. "bragg-center-of-mass"
  std::string bytes;   // opaque payload, nonempty
  bool operator==(const Label&) const = default;
};

/// Raw tensor retained alongside a record so the embedder can be refit.
struct RawPayload {
  std::vector<std::size_t> shape;
  std::vector<float> values;
  bool operator==(const RawPayload&) const = default;
};

inline constexpr std::int64_t kUnassigned = -1;

struct DataRecord {
  std::string sample_id;
  EmbeddingVector embedding;  // empty only while the store has no embedder yet
  std::int64_t cluster_id = kUnassigned;
  Label label;
  std::string source;
  std::int64_t ingested_at = 0;  // unix microseconds
  std::uint64_t cluster_model_version = 0;
  std::optional<RawPayload> raw;

  RawSample raw_sample() const;
  bool operator==(const DataRecord&) const = default;
};

/// Copy-on-write chunked array shared between store snapshots.
class RecordTable {
 public:
  static constexpr std::size_t kChunkSize = 4096;

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const DataRecord& operator[](std::size_t i) const {
    return (*chunks_[i / kChunkSize])[i % kChunkSize];
  }

  template <typename F>
  void for_each(F&& f) const {
    std::size_t pos = 0;
    for (const auto& chunk : chunks_) {
      for (const auto& rec : *chunk) f(pos++, rec);
    }
  }

 private:
  friend class TableEditor;
  std::vector<std::shared_ptr<std::vector<DataRecord>>> chunks_;
  std::size_t size_ = 0;
};

struct LookupResult {
  std::vector<DataRecord> records;
  std::size_t requested_count = 0;
  std::vector<std::size_t> per_cluster_counts;
  std::uint64_t rng_seed = 0;
  std::uint64_t cluster_model_version = 0;
};

enum class PseudoLabelDecision { Reused, NeedsLabeling };

std::string_view to_string(PseudoLabelDecision d);

struct PseudoLabelOutcome {
  std::string sample_id;
  PseudoLabelDecision decision = PseudoLabelDecision::NeedsLabeling;
  std::optional<DataRecord> matched_record;
  double distance = 0.0;
  bool searched_all_clusters = false;
  std::uint64_t cluster_model_version = 0;
};

struct StoreStats {
  std::size_t record_count = 0;
  std::vector<std::size_t> per_cluster;
  std::size_t unassigned = 0;
  std::uint64_t cluster_model_version = 0;
  std::size_t dim = 0;
  std::uint64_t commit_seq = 0;
  std::size_t audit_entries = 0;
  std::uint64_t disk_bytes = 0;
};

struct AuditEntry {
  std::int64_t replaced_at = 0;
  DataRecord prior;
};

/// Immutable, internally consistent view of the store at one commit.
class StoreSnapshot {
 public:
  std::uint64_t version() const { return version_; }
  const std::shared_ptr<const ClusterModel>& model() const { return model_; }
  std::size_t dim() const { return dim_; }
  const RecordTable& records() const { return records_; }
  std::uint64_t commit_seq() const { return commit_seq_; }
  std::span<const std::uint32_t> cluster_members(std::size_t c) const;
  std::size_t cluster_count() const { return clusters_.size(); }

  LookupResult lookup_by_distribution(const DatasetDistribution& pdf, std::size_t n,
                                      std::uint64_t seed) const;
  PseudoLabelOutcome pseudo_label(const EmbeddingVector& v, double threshold_t,
                                  std::string sample_id = {}) const;
  StoreStats stats() const;

 private:
  friend class DataStore;
  std::uint64_t version_ = 0;
  std::shared_ptr<const ClusterModel> model_;
  std::size_t dim_ = 0;
  RecordTable records_;
  std::vector<std::shared_ptr<std::vector<std::uint32_t>>> clusters_;
  std::uint64_t commit_seq_ = 0;
  std::size_t audit_entries_ = 0;
  std::uint64_t disk_bytes_ = 0;
};

using SnapshotPtr = std::shared_ptr<const StoreSnapshot>;

/// Largest-remainder apportionment of n seats over weights (ties: lower index).
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t n);

/// Largest remainder with per-cluster capacities: shortfall of saturated
/// clusters is re-apportioned over clusters with spare capacity, by weight,
/// or by spare capacity when the remaining weights are all zero.
std::vector<std::size_t> apportion_with_capacity(std::span<const double> weights,
                                                 std::span<const std::size_t> capacity,
                                                 std::size_t n);

struct ReindexReport {
  std::size_t records = 0;
  std::size_t changed = 0;
  std::uint64_t version = 0;
};

/// Embedded labeled-data store: append-only record log with CRC-framed
/// batches, rebuildable per-cluster index, snapshot reads.
class DataStore {
 public:
  struct Options {
    bool sync = true;
    /// Test knob: write only this many bytes of the next batch frame, then
    /// throw as if the process died (no cleanup, no publish).
    std::optional<std::size_t> crash_after_bytes;
    /// Test knob: called before the batch write; throwing aborts the insert.
    std::function<void()> before_write;
  };

  /// In-memory store (no persistence).
  DataStore();
  /// Opens or creates a store under `dir`, replaying the log.
  explicit DataStore(std::string dir, Options options);
  explicit DataStore(std::string dir) : DataStore(std::move(dir), Options{}) {}
  ~DataStore();

  DataStore(const DataStore&) = delete;
  DataStore& operator=(const DataStore&) = delete;

  SnapshotPtr snapshot() const;

  /// Appends or upserts a batch atomically. Cluster ids are assigned under the
  /// current model. Returns the number of records in the batch. With
  /// `expected_version` set, a store at another cluster model version rejects
  /// the batch with VersionMismatch (embeddings computed by a stale embedder).
  std::size_t insert(std::vector<DataRecord> records,
                     std::optional<std::uint64_t> expected_version = std::nullopt);

  LookupResult lookup_by_distribution(const DatasetDistribution& pdf, std::size_t n,
                                      std::uint64_t seed) const {
    return snapshot()->lookup_by_distribution(pdf, n, seed);
  }
  PseudoLabelOutcome pseudo_label(const EmbeddingVector& v, double threshold_t) const {
    return snapshot()->pseudo_label(v, threshold_t);
  }
  StoreStats stats() const { return snapshot()->stats(); }

  std::optional<DataRecord> find(const std::string& sample_id) const;

  using Reembed = std::function<EmbeddingVector(const DataRecord&)>;
  /// Called under the writer lock once the new log is durable but before it
  /// replaces the old one; throwing aborts the reindex with nothing changed.
  using CommitHook = std::function<void(const StoreSnapshot& next)>;

  /// Recomputes every record's cluster (and embedding, when `reembed` is set)
  /// under `model`, compacts the log and swaps the snapshot atomically.
  ReindexReport reindex(std::shared_ptr<const ClusterModel> model, const Reembed& reembed = {},
                        const CommitHook& on_commit = {});

  std::vector<AuditEntry> audit_log() const;
  /// Persists the per-cluster index file (also done on destruction).
  void flush_index();
  bool persistent() const { return !dir_.empty(); }
  const std::string& dir() const { return dir_; }

 private:
  void open_existing();
  void write_index_file(const StoreSnapshot& snap);
  bool load_index_file(StoreSnapshot& snap);
  void publish(SnapshotPtr next);
  std::string log_path() const;
  std::string index_path() const;
  std::string audit_path() const;

  std::string dir_;
  Options options_;
  int log_fd_ = -1;
  std::uint64_t log_size_ = 0;

  mutable std::mutex snap_mu_;
  SnapshotPtr current_;

  mutable std::mutex writer_mu_;
  std::unordered_map<std::string, std::uint32_t> positions_;
  std::vector<AuditEntry> audit_;
};

}  // namespace dmreuse
