#include "dmreuse/distribution.hpp"

#include <algorithm>
#include <cmath>

#include "dmreuse/error.hpp"

namespace dmreuse {

void DatasetDistribution::validate() const {
  if (probs.size() != k || k == 0) {
    throw Error(ErrorCode::InvalidArgument, "distribution has " + std::to_string(probs.size()) +
                                                " probabilities for k=" + std::to_string(k));
  }
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "probability outside [0,1]");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "probabilities sum to " + std::to_string(total));
  }
}

DatasetDistribution pdf_from_labels(std::span<const std::size_t> labels, std::size_t k,
                                    std::uint64_t version) {
  if (labels.empty()) throw Error(ErrorCode::EmptyInput, "cannot build a distribution of nothing");
  std::vector<std::size_t> counts(k, 0);
  for (auto c : labels) {
    if (c >= k) throw Error(ErrorCode::RangeError, "cluster id " + std::to_string(c) + " >= k");
    ++counts[c];
  }
  DatasetDistribution out;
  out.k = k;
  out.sample_count = labels.size();
  out.cluster_model_version = version;
  out.probs.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.probs[i] = static_cast<double>(counts[i]) / static_cast<double>(labels.size());
  }
  return out;
}

DatasetDistribution compute_pdf(const ClusterModel& model,
                                std::span<const EmbeddingVector> embeddings) {
  if (embeddings.empty()) throw Error(ErrorCode::EmptyInput, "cannot build a distribution of nothing");
  std::vector<std::size_t> labels;
  labels.reserve(embeddings.size());
  for (const auto& e : embeddings) labels.push_back(nearest_centroid(model, e.values));
  return pdf_from_labels(labels, model.k, model.version);
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::KMismatch, "distributions over " + std::to_string(p.size()) + " and " +
                                          std::to_string(q.size()) + " clusters");
  }
  std::vector<double> terms;
  terms.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    double t = 0.0;
    if (p[i] > 0.0) t += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) t += 0.5 * q[i] * std::log2(q[i] / m);
    terms.push_back(t);
  }
  // Summing in sorted order makes the result independent of cluster order.
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return std::clamp(total, 0.0, 1.0);
}

double jsd(const DatasetDistribution& p, const DatasetDistribution& q) {
  if (p.k != q.k) {
    throw Error(ErrorCode::KMismatch,
                "k=" + std::to_string(p.k) + " vs k=" + std::to_string(q.k));
  }
  if (p.cluster_model_version != q.cluster_model_version) {
    throw Error(ErrorCode::VersionMismatch,
                "cluster model version " + std::to_string(p.cluster_model_version) + " vs " +
                    std::to_string(q.cluster_model_version));
  }
  return jsd(p.probs, q.probs);
}

}  // namespace dmreuse
