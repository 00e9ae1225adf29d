#include "dmreuse/drift.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace {

std::int64_t now_micros() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

using ClusterById = std::unordered_map<std::string_view, std::int64_t>;

ClusterById cluster_by_id(const StoreSnapshot& snap) {
  ClusterById map;
  map.reserve(snap.records().size());
  snap.records().for_each(
      [&](std::size_t, const DataRecord& r) { map.emplace(r.sample_id, r.cluster_id); });
  return map;
}

std::optional<DatasetDistribution> distribution_from_map(const ClusterById& map,
                                                         std::span<const std::string> refs,
                                                         std::size_t k, std::uint64_t version) {
  std::vector<std::size_t> labels;
  labels.reserve(refs.size());
  for (const auto& id : refs) {
    auto it = map.find(id);
    if (it != map.end() && it->second >= 0) labels.push_back(static_cast<std::size_t>(it->second));
  }
  if (labels.empty()) return std::nullopt;
  return pdf_from_labels(labels, k, version);
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

}  // namespace

void TriggerPolicy::validate() const {
  if (!(certainty_threshold > 0.0 && certainty_threshold < 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "certainty threshold must lie in (0, 100)");
  }
}

CertaintyReport compute_certainty(const ClusterModel& model,
                                  std::span<const EmbeddingVector> embeddings, double bar,
                                  std::string dataset_id) {
  if (embeddings.empty()) throw Error(ErrorCode::EmptyInput, "no samples to score");
  if (!(bar > 0.0 && bar < 1.0)) throw Error(ErrorCode::InvalidArgument, "membership bar outside (0,1)");
  CertaintyReport r;
  r.dataset_id = std::move(dataset_id);
  r.total = embeddings.size();
  r.membership_bar = bar;
  r.cluster_model_version = model.version;
  std::vector<double> d(model.k);
  for (const auto& e : embeddings) {
    if (e.dim() != model.dim) {
      throw Error(ErrorCode::DimMismatch, "sample dim " + std::to_string(e.dim()) +
                                              ", model dim " + std::to_string(model.dim));
    }
    for (std::size_t c = 0; c < model.k; ++c) {
      d[c] = normalized_distance(model.feature_scale, e.values, model.centroid(c));
    }
    const auto u = fuzzy_memberships_from_distances(d, model.fuzzifier_m);
    const double top = *std::max_element(u.begin(), u.end());
    if (top >= bar) ++r.certain;
    ++r.histogram[std::min<std::size_t>(9, static_cast<std::size_t>(top * 10.0))];
  }
  r.certainty = 100.0 * static_cast<double>(r.certain) / static_cast<double>(r.total);
  return r;
}

bool should_trigger(const CertaintyReport& report, const TriggerPolicy& policy,
                    const TriggerHistory& history) {
  if (history.dataset_index < policy.warmup_datasets) return false;
  if (!(report.certainty < policy.certainty_threshold)) return false;
  for (auto idx : history.trigger_indices) {
    if (idx <= history.dataset_index && history.dataset_index - idx <= policy.cooldown) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

DriftMonitor::DriftMonitor(TriggerPolicy policy, std::string audit_path)
    : policy_(policy), audit_path_(std::move(audit_path)) {
  policy_.validate();
}

void DriftMonitor::append(const std::string& line) {
  lines_.push_back(line);
  if (!audit_path_.empty()) {
    std::ofstream out(audit_path_, std::ios::app);
    out << line << '\n';
  }
}

DriftMonitor::Decision DriftMonitor::observe(const CertaintyReport& report,
                                             std::uint64_t generation) {
  std::lock_guard lock(mu_);
  Decision d;
  d.dataset_index = history_.dataset_index;
  d.trigger = should_trigger(report, policy_, history_);
  if (d.trigger) history_.trigger_indices.push_back(history_.dataset_index);
  nlohmann::json j = {{"timestamp", now_micros()},
                      {"event", "certainty"},
                      {"dataset_index", d.dataset_index},
                      {"dataset_id", report.dataset_id},
                      {"certainty", report.certainty},
                      {"decision", d.trigger ? "trigger" : "none"},
                      {"cluster_model_version", report.cluster_model_version},
                      {"generation", generation}};
  append(j.dump());
  ++history_.dataset_index;
  return d;
}

void DriftMonitor::record_update(const std::string& summary_json) {
  std::lock_guard lock(mu_);
  nlohmann::json j = {{"timestamp", now_micros()},
                      {"event", "update"},
                      {"summary", nlohmann::json::parse(summary_json)}};
  append(j.dump());
}

TriggerHistory DriftMonitor::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

std::vector<std::string> DriftMonitor::audit_lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

// ---------------------------------------------------------------------------

std::optional<DatasetDistribution> distribution_of_refs(const StoreSnapshot& snap,
                                                        std::span<const std::string> refs) {
  if (!snap.model()) return std::nullopt;
  return distribution_from_map(cluster_by_id(snap), refs, snap.model()->k, snap.version());
}

SystemUpdater::SystemUpdater(DataStore& store, ModelZoo& zoo, UpdateConfig config)
    : store_(store), zoo_(zoo), config_(config) {}

bool SystemUpdater::busy() const {
  if (lease_.try_lock()) {
    lease_.unlock();
    return false;
  }
  return true;
}

UpdateSummary SystemUpdater::run(const Generation& current, const PublishHook& publish,
                                 const PersistHook& persist) {
  std::unique_lock lease(lease_, std::try_to_lock);
  if (!lease.owns_lock()) {
    throw Error(ErrorCode::UpdateInProgress, "a system update is already running");
  }
  const auto started = std::chrono::steady_clock::now();
  UpdateSummary summary;
  const auto snap = store_.snapshot();
  const std::uint64_t next_gen =
      std::max({current.number, snap->version(), zoo_.version()}) + 1;
  summary.generation = next_gen;

  const auto& table = snap->records();
  if (table.empty()) {
    throw StageError("collect", Error(ErrorCode::EmptyStore, "no historical data to learn from"));
  }

  bool all_raw = true;
  table.for_each([&](std::size_t, const DataRecord& r) { all_raw = all_raw && r.raw.has_value(); });

  std::shared_ptr<const EmbedderSpec> embedder = current.embedder;
  if (config_.refit_embedder && all_raw) {
    embedder = stage("fit_embedder", [&] {
      std::vector<RawSample> samples;
      samples.reserve(table.size());
      table.for_each([&](std::size_t, const DataRecord& r) { samples.push_back(r.raw_sample()); });
      return std::make_shared<const EmbedderSpec>(
          fit_embedder(samples, config_.embedding_dim, next_gen - 1));
    });
  } else {
    summary.reused_stored_embeddings = true;
  }
  summary.embedder_version = embedder ? embedder->version : 0;

  const bool reembed = !summary.reused_stored_embeddings;
  auto embedding_of = [&](const DataRecord& r) {
    return reembed ? embed(*embedder, r.raw_sample()) : r.embedding;
  };

  std::vector<EmbeddingVector> all = stage("embed", [&] {
    std::vector<EmbeddingVector> out;
    out.reserve(table.size());
    table.for_each([&](std::size_t, const DataRecord& r) { out.push_back(embedding_of(r)); });
    return out;
  });

  auto model = stage("cluster", [&] {
    KMeansOptions opts;
    opts.fuzzifier_m = config_.fuzzifier_m;
    opts.version = next_gen;
    opts.feature_scale = standard_scales(all);
    std::vector<EmbeddingVector> fit_set;
    std::span<const EmbeddingVector> fit_view = all;
    if (config_.max_fit_samples > 0 && all.size() > config_.max_fit_samples) {
      const double stride = static_cast<double>(all.size()) / static_cast<double>(config_.max_fit_samples);
      for (std::size_t i = 0; i < config_.max_fit_samples; ++i) {
        fit_set.push_back(all[static_cast<std::size_t>(static_cast<double>(i) * stride)]);
      }
      fit_view = fit_set;
    }
    std::size_t k = config_.k_min;
    if (config_.k_min < config_.k_max) {
      const auto k_max = std::min(config_.k_max, fit_view.size());
      if (config_.k_min < k_max) {
        summary.elbow = select_k_elbow(fit_view, config_.k_min, k_max, config_.seed, opts);
        k = summary.elbow->chosen_k;
      } else {
        k = k_max;
      }
    }
    k = std::min(k, fit_view.size());
    return std::make_shared<const ClusterModel>(
        fit_kmeans_best_of(fit_view, k, config_.seed, kElbowRestarts, opts));
  });
  summary.chosen_k = model->k;
  summary.cluster_version = model->version;
  all.clear();
  all.shrink_to_fit();

  auto next = std::make_shared<Generation>();
  next->number = next_gen;
  next->embedder = embedder;
  next->model = model;

  const auto report = stage("reindex", [&] {
    return store_.reindex(
        model, reembed ? DataStore::Reembed(embedding_of) : DataStore::Reembed{},
        [&](const StoreSnapshot& staged) {
          if (persist) stage("persist", [&] { persist(*next); });
          const auto map = cluster_by_id(staged);
          auto refresh = stage("refresh_zoo", [&] {
            return zoo_.refresh_distributions(*model, [&](const ModelRecord& m) {
              return distribution_from_map(map, m.training_refs, model->k, model->version);
            });
          });
          summary.zoo_refreshed = refresh.updated;
          summary.zoo_stale = refresh.stale;
        });
  });
  summary.records_reindexed = report.records;
  summary.records_changed_cluster = report.changed;

  if (publish) publish(next);
  summary.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace dmreuse
