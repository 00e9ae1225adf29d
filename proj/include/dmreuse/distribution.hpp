#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmreuse/clustering.hpp"

namespace dmreuse {

/// Probability vector over the clusters of one ClusterModel version: the
/// signature of a dataset. Only comparable with signatures of the same k and
/// version.
struct DatasetDistribution {
  std::size_t k = 0;
  std::vector<double> probs;
  std::size_t sample_count = 0;
  std::uint64_t cluster_model_version = 0;

  /// Throws InvalidArgument when probs are not a distribution.
  void validate() const;
  bool operator==(const DatasetDistribution&) const = default;
};

/// Hard-assignment histogram of `embeddings` under `model`, normalized.
DatasetDistribution compute_pdf(const ClusterModel& model,
                                std::span<const EmbeddingVector> embeddings);

/// Histogram from already-assigned cluster ids.
DatasetDistribution pdf_from_labels(std::span<const std::size_t> labels, std::size_t k,
                                    std::uint64_t version);

/// Jensen-Shannon divergence in bits, in [0, 1].
double jsd(const DatasetDistribution& p, const DatasetDistribution& q);
double jsd(std::span<const double> p, std::span<const double> q);

}  // namespace dmreuse
