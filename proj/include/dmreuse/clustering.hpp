#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmreuse/embedding.hpp"

namespace dmreuse {

/// K centroids plus the per-dimension scales of the normalized Euclidean
/// metric. Immutable after fitting; safe for any number of concurrent readers.
struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;      // k x dim, row-major
  std::vector<double> feature_mean;   // dim
  std::vector<double> feature_scale;  // dim, strictly positive
  double wss = 0.0;
  double fuzzifier_m = 2.0;
  std::uint64_t version = 0;

  std::span<const double> centroid(std::size_t i) const {
    return std::span<const double>(centroids).subspan(i * dim, dim);
  }
};

struct ClusterAssignment {
  std::string sample_id;
  std::size_t cluster_id = 0;
  double distance = 0.0;
  double max_membership = 0.0;
};

struct ElbowReport {
  std::vector<std::size_t> k_values;
  std::vector<double> wss_values;
  std::size_t chosen_k = 0;
  double knee_score = 0.0;
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  double fuzzifier_m = 2.0;
  /// Per-dimension scales for the metric. Empty means the training-set
  /// standard deviation (zero-variance dims get scale 1).
  std::vector<double> feature_scale;
  std::uint64_t version = 1;
};

/// Full outcome of one Lloyd's run; fit_kmeans keeps only the model.
struct KMeansRun {
  ClusterModel model;
  std::vector<std::size_t> labels;
  std::vector<double> wss_trace;  // objective after each assignment step
  std::size_t iterations = 0;
};

/// sqrt(sum_d ((a_d - b_d) / scale_d)^2).
double normalized_distance(const ClusterModel& model, const EmbeddingVector& a,
                           const EmbeddingVector& b);
double normalized_distance(std::span<const double> scale, std::span<const float> a,
                           std::span<const double> b);
double normalized_distance_sq(std::span<const double> scale, std::span<const float> a,
                              std::span<const double> b);

/// Standard deviation per dimension with zero-variance dims mapped to 1.
std::vector<double> standard_scales(std::span<const EmbeddingVector> embeddings);

KMeansRun run_kmeans(std::span<const EmbeddingVector> embeddings, std::size_t k,
                     std::uint64_t seed, const KMeansOptions& options = {});

/// Lloyd's algorithm under the normalized metric with farthest-point seeding
/// from a seed-selected first centroid.
ClusterModel fit_kmeans(std::span<const EmbeddingVector> embeddings, std::size_t k,
                        std::uint64_t seed, const KMeansOptions& options = {});

/// Lowest-WSS model over seeds seed, seed+1, ..., seed+restarts-1.
ClusterModel fit_kmeans_best_of(std::span<const EmbeddingVector> embeddings, std::size_t k,
                                std::uint64_t seed, std::size_t restarts,
                                const KMeansOptions& options = {});

inline constexpr std::size_t kElbowRestarts = 5;

ElbowReport select_k_elbow(std::span<const EmbeddingVector> embeddings, std::size_t k_min,
                           std::size_t k_max, std::uint64_t seed,
                           const KMeansOptions& options = {});

/// Knee of a decreasing curve: the point farthest below the chord joining the
/// end points after min-max normalizing both axes. Ties go to the smallest K.
std::size_t knee_index(std::span<const std::size_t> ks, std::span<const double> wss,
                       double* score = nullptr);

std::vector<double> fuzzy_memberships(const ClusterModel& model, const EmbeddingVector& v);
/// Memberships from precomputed distances; exposed for the certainty scorer.
std::vector<double> fuzzy_memberships_from_distances(std::span<const double> distances, double m);

ClusterAssignment assign(const ClusterModel& model, const EmbeddingVector& v);
/// Hard nearest centroid only (no memberships), used on hot paths.
std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> v,
                             double* distance = nullptr);

std::string serialize_cluster_model(const ClusterModel& model);
ClusterModel deserialize_cluster_model(std::string_view bytes);

}  // namespace dmreuse
