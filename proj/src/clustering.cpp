#include "dmreuse/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <unordered_set>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace {

constexpr char kClusterMagic[4] = {'F', 'D', 'M', 'C'};
constexpr std::uint32_t kClusterBlobVersion = 1;

void check_dim(const ClusterModel& model, std::size_t dim) {
  if (dim != model.dim) {
    throw Error(ErrorCode::DimMismatch, "vector dim " + std::to_string(dim) +
                                            " does not match cluster model dim " +
                                            std::to_string(model.dim));
  }
}

std::size_t common_dim(std::span<const EmbeddingVector> embeddings) {
  const std::size_t dim = embeddings.front().dim();
  if (dim == 0) throw Error(ErrorCode::DimMismatch, "zero-dimensional embeddings");
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "embedding " + std::to_string(i) + " has dim " +
                                              std::to_string(embeddings[i].dim()) + ", expected " +
                                              std::to_string(dim));
    }
  }
  return dim;
}

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace

double normalized_distance_sq(std::span<const double> scale, std::span<const float> a,
                              std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < scale.size(); ++d) {
    const double diff = (static_cast<double>(a[d]) - b[d]) / scale[d];
    s += diff * diff;
  }
  return s;
}

double normalized_distance(std::span<const double> scale, std::span<const float> a,
                           std::span<const double> b) {
  return std::sqrt(normalized_distance_sq(scale, a, b));
}

double normalized_distance(const ClusterModel& model, const EmbeddingVector& a,
                           const EmbeddingVector& b) {
  check_dim(model, a.dim());
  check_dim(model, b.dim());
  double s = 0.0;
  for (std::size_t d = 0; d < model.dim; ++d) {
    const double diff =
        (static_cast<double>(a.values[d]) - static_cast<double>(b.values[d])) / model.feature_scale[d];
    s += diff * diff;
  }
  return std::sqrt(s);
}

std::vector<double> standard_scales(std::span<const EmbeddingVector> embeddings) {
  if (embeddings.empty()) throw Error(ErrorCode::EmptyInput, "no embeddings");
  const std::size_t dim = common_dim(embeddings);
  const double n = static_cast<double>(embeddings.size());
  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  for (const auto& e : embeddings) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += e.values[d];
  }
  for (auto& m : mean) m /= n;
  for (const auto& e : embeddings) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = e.values[d] - mean[d];
      scale[d] += diff * diff;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    const double sd = std::sqrt(scale[d] / n);
    scale[d] = sd > 1e-12 * std::max(1.0, std::abs(mean[d])) ? sd : 1.0;
  }
  return scale;
}

namespace {

std::size_t first_seed_index(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace

KMeansRun run_kmeans(std::span<const EmbeddingVector> embeddings, std::size_t k,
                     std::uint64_t seed, const KMeansOptions& options) {
  if (embeddings.empty()) throw Error(ErrorCode::TooFewSamples, "no embeddings to cluster");
  if (k == 0) throw Error(ErrorCode::RangeError, "k must be at least 1");
  if (embeddings.size() < k) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(embeddings.size()) +
                                              " samples cannot form " + std::to_string(k) +
                                              " clusters");
  }
  if (options.fuzzifier_m <= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "fuzzifier m must exceed 1");
  }
  const std::size_t dim = common_dim(embeddings);
  const std::size_t n = embeddings.size();

  std::vector<double> scale = options.feature_scale;
  if (scale.empty()) {
    scale = standard_scales(embeddings);
  } else if (scale.size() != dim) {
    throw Error(ErrorCode::DimMismatch, "feature_scale has wrong length");
  }
  for (double s : scale) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::InvalidArgument, "feature scales must be positive and finite");
    }
  }

  // Work in scaled coordinates so the metric is plain Euclidean.
  std::vector<double> pts(n * dim);
  std::vector<double> mean(dim, 0.0);
  {
    std::unordered_set<std::string_view> distinct;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = embeddings[i].values;
      for (std::size_t d = 0; d < dim; ++d) {
        if (!std::isfinite(v[d])) {
          throw Error(ErrorCode::NonFiniteValue, "embedding " + std::to_string(i) + " not finite");
        }
        pts[i * dim + d] = v[d] / scale[d];
        mean[d] += v[d];
      }
      distinct.emplace(reinterpret_cast<const char*>(v.data()), dim * sizeof(float));
    }
    if (distinct.size() < k) {
      throw Error(ErrorCode::TooFewSamples, "only " + std::to_string(distinct.size()) +
                                                " distinct points for " + std::to_string(k) +
                                                " clusters");
    }
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  const double* P = pts.data();

  // Farthest-point seeding.
  std::vector<double> cent(k * dim);
  const std::size_t first = first_seed_index(seed, n);
  std::copy_n(P + first * dim, dim, cent.begin());
  std::vector<double> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = sq_dist(P + i * dim, cent.data(), dim);
  for (std::size_t c = 1; c < k; ++c) {
    std::size_t far = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (min_d2[i] > min_d2[far]) far = i;
    }
    std::copy_n(P + far * dim, dim, cent.begin() + static_cast<std::ptrdiff_t>(c * dim));
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist(P + i * dim, cent.data() + c * dim, dim));
    }
  }

  KMeansRun run;
  run.labels.assign(n, k);  // k = unassigned
  std::vector<double> point_d2(n);
  std::vector<std::size_t> counts(k);

  auto recompute_centroids = [&] {
    std::fill(cent.begin(), cent.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = run.labels[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) cent[c * dim + d] += P[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) cent[c * dim + d] /= static_cast<double>(counts[c]);
    }
  };

  for (std::size_t it = 0; it < std::max<std::size_t>(options.max_iter, 1); ++it) {
    bool changed = false;
    double wss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d2 = sq_dist(P + i * dim, cent.data() + c * dim, dim);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = c;
        }
      }
      if (run.labels[i] != best) {
        run.labels[i] = best;
        changed = true;
      }
      point_d2[i] = best_d2;
      wss += best_d2;
    }
    run.wss_trace.push_back(wss);
    run.iterations = it + 1;
    if (!changed) break;

    recompute_centroids();
    // Repair empty clusters with the point farthest from its own centroid.
    bool repaired = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d2 = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[run.labels[i]] <= 1) continue;
        const double d2 = sq_dist(P + i * dim, cent.data() + run.labels[i] * dim, dim);
        if (d2 > far_d2) {
          far_d2 = d2;
          far = i;
        }
      }
      if (far == n) break;
      --counts[run.labels[far]];
      run.labels[far] = c;
      counts[c] = 1;
      repaired = true;
    }
    if (repaired) recompute_centroids();
  }

  // Hartigan single-point transfers from the Lloyd fixpoint. A move of x from
  // a to b lowers WSS by n_a/(n_a-1)|x-c_a|^2 - n_b/(n_b+1)|x-c_b|^2; any
  // partition with no such move left is also a Lloyd fixpoint.
  recompute_centroids();
  for (std::size_t pass = 0; pass < std::max<std::size_t>(options.max_iter, 1); ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = run.labels[i];
      if (counts[a] <= 1) continue;
      const double na = static_cast<double>(counts[a]);
      const double cost_out = na / (na - 1.0) * sq_dist(P + i * dim, cent.data() + a * dim, dim);
      std::size_t to = a;
      double best_gain = 0.0;
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double gain = cost_out - nb / (nb + 1.0) * sq_dist(P + i * dim, cent.data() + b * dim, dim);
        if (gain > best_gain * (1.0 + 1e-12) + 1e-15 * cost_out) {
          best_gain = gain;
          to = b;
        }
      }
      if (to == a) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        const double x = P[i * dim + d];
        cent[a * dim + d] = (cent[a * dim + d] * na - x) / (na - 1.0);
        const double nb = static_cast<double>(counts[to]);
        cent[to * dim + d] = (cent[to * dim + d] * nb + x) / (nb + 1.0);
      }
      --counts[a];
      ++counts[to];
      run.labels[i] = to;
      moved = true;
    }
    if (!moved) break;
    recompute_centroids();
  }

  // Final objective with centroids equal to the means of the final labels.
  recompute_centroids();
  double wss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    wss += sq_dist(P + i * dim, cent.data() + run.labels[i] * dim, dim);
  }

  ClusterModel& model = run.model;
  model.k = k;
  model.dim = dim;
  model.centroids.resize(k * dim);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < dim; ++d) model.centroids[c * dim + d] = cent[c * dim + d] * scale[d];
  }
  model.feature_mean = std::move(mean);
  model.feature_scale = std::move(scale);
  model.wss = wss;
  model.fuzzifier_m = options.fuzzifier_m;
  model.version = options.version;
  return run;
}

ClusterModel fit_kmeans(std::span<const EmbeddingVector> embeddings, std::size_t k,
                        std::uint64_t seed, const KMeansOptions& options) {
  return run_kmeans(embeddings, k, seed, options).model;
}

ClusterModel fit_kmeans_best_of(std::span<const EmbeddingVector> embeddings, std::size_t k,
                                std::uint64_t seed, std::size_t restarts,
                                const KMeansOptions& options) {
  if (restarts == 0) restarts = 1;
  KMeansOptions opts = options;
  if (opts.feature_scale.empty() && !embeddings.empty()) opts.feature_scale = standard_scales(embeddings);
  // Restarts take successive seeds, skipping those whose first centroid
  // (or a duplicate of it) was already tried, so small inputs get distinct
  // starting points.
  const std::size_t n = embeddings.size();
  std::vector<bool> tried(n, false);
  auto mark = [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (embeddings[j].values == embeddings[i].values) tried[j] = true;
    }
  };
  std::optional<ClusterModel> best;
  std::uint64_t s = seed;
  for (std::size_t r = 0; r < restarts; ++r) {
    std::size_t probes = 0;
    while (n > 0 && tried[first_seed_index(s, n)] && probes < 64) {
      ++s;
      ++probes;
    }
    if (n > 0) mark(first_seed_index(s, n));
    ClusterModel m = fit_kmeans(embeddings, k, s++, opts);
    if (!best || m.wss < best->wss) best = std::move(m);
    if (n > 0 && std::all_of(tried.begin(), tried.end(), [](bool b) { return b; })) break;
  }
  return *best;
}

std::size_t knee_index(std::span<const std::size_t> ks, std::span<const double> wss,
                       double* score) {
  if (ks.empty() || ks.size() != wss.size()) {
    throw Error(ErrorCode::InvalidArgument, "knee detection needs matching non-empty curves");
  }
  const std::size_t last = ks.size() - 1;
  const double x0 = static_cast<double>(ks.front());
  const double xspan = static_cast<double>(ks.back()) - x0;
  const auto [lo, hi] = std::minmax_element(wss.begin(), wss.end());
  const double yspan = *hi - *lo;
  std::size_t best = 0;
  double best_score = 0.0;
  if (last > 0 && xspan > 0 && yspan > 0) {
    auto nx = [&](std::size_t i) { return (static_cast<double>(ks[i]) - x0) / xspan; };
    auto ny = [&](std::size_t i) { return (wss[i] - *lo) / yspan; };
    const double ax = nx(0), ay = ny(0);
    const double bx = nx(last), by = ny(last);
    const double len = std::hypot(bx - ax, by - ay);
    for (std::size_t i = 1; i < last; ++i) {
      // Positive when the point lies below the chord of a decreasing curve.
      const double cross = (bx - ax) * (ny(i) - ay) - (by - ay) * (nx(i) - ax);
      const double s = -cross / len;
      if (s > best_score + 1e-12) {
        best_score = s;
        best = i;
      }
    }
  }
  if (score) *score = best_score;
  return best;
}

ElbowReport select_k_elbow(std::span<const EmbeddingVector> embeddings, std::size_t k_min,
                           std::size_t k_max, std::uint64_t seed, const KMeansOptions& options) {
  if (k_min < 1 || k_min >= k_max || k_max > embeddings.size()) {
    throw Error(ErrorCode::RangeError, "elbow range [" + std::to_string(k_min) + ", " +
                                           std::to_string(k_max) + "] invalid for " +
                                           std::to_string(embeddings.size()) + " samples");
  }
  KMeansOptions opts = options;
  if (opts.feature_scale.empty()) opts.feature_scale = standard_scales(embeddings);

  ElbowReport report;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    report.k_values.push_back(k);
    report.wss_values.push_back(fit_kmeans_best_of(embeddings, k, seed, kElbowRestarts, opts).wss);
  }
  const auto idx = knee_index(report.k_values, report.wss_values, &report.knee_score);
  report.chosen_k = report.k_values[idx];
  return report;
}

std::vector<double> fuzzy_memberships_from_distances(std::span<const double> distances, double m) {
  std::vector<double> u(distances.size(), 0.0);
  if (distances.empty()) return u;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (distances[i] == 0.0) {
      u[i] = 1.0;
      return u;
    }
  }
  const double p = 2.0 / (m - 1.0);
  const double dmin = *std::min_element(distances.begin(), distances.end());
  double total = 0.0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    u[i] = std::pow(dmin / distances[i], p);
    total += u[i];
  }
  for (auto& x : u) x /= total;
  return u;
}

std::vector<double> fuzzy_memberships(const ClusterModel& model, const EmbeddingVector& v) {
  check_dim(model, v.dim());
  std::vector<double> d(model.k);
  for (std::size_t c = 0; c < model.k; ++c) {
    d[c] = normalized_distance(model.feature_scale, v.values, model.centroid(c));
  }
  return fuzzy_memberships_from_distances(d, model.fuzzifier_m);
}

std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> v,
                             double* distance) {
  check_dim(model, v.size());
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < model.k; ++c) {
    const double d2 = normalized_distance_sq(model.feature_scale, v, model.centroid(c));
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  if (distance) *distance = std::sqrt(best_d2);
  return best;
}

ClusterAssignment assign(const ClusterModel& model, const EmbeddingVector& v) {
  check_dim(model, v.dim());
  std::vector<double> d(model.k);
  ClusterAssignment a;
  for (std::size_t c = 0; c < model.k; ++c) {
    d[c] = normalized_distance(model.feature_scale, v.values, model.centroid(c));
    if (d[c] < d[a.cluster_id]) a.cluster_id = c;
  }
  a.distance = d[a.cluster_id];
  const auto u = fuzzy_memberships_from_distances(d, model.fuzzifier_m);
  a.max_membership = *std::max_element(u.begin(), u.end());
  return a;
}

std::string serialize_cluster_model(const ClusterModel& model) {
  ByteWriter w;
  w.put_raw(std::string_view(kClusterMagic, 4));
  w.put_u32(kClusterBlobVersion);
  w.put_u64(model.version);
  w.put_u64(model.k);
  w.put_u64(model.dim);
  w.put_f64(model.wss);
  w.put_f64(model.fuzzifier_m);
  for (double c : model.centroids) w.put_f64(c);
  for (double m : model.feature_mean) w.put_f64(m);
  for (double s : model.feature_scale) w.put_f64(s);
  return std::move(w).take();
}

ClusterModel deserialize_cluster_model(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_raw(4) != std::string_view(kClusterMagic, 4)) {
    throw Error(ErrorCode::FormatError, "bad cluster model magic");
  }
  if (auto v = r.get_u32(); v != kClusterBlobVersion) {
    throw Error(ErrorCode::FormatError, "unsupported cluster model version " + std::to_string(v));
  }
  ClusterModel m;
  m.version = r.get_u64();
  m.k = r.get_u64();
  m.dim = r.get_u64();
  m.wss = r.get_f64();
  m.fuzzifier_m = r.get_f64();
  if (m.k == 0 || m.dim == 0 || (m.k * m.dim + 2 * m.dim) * 8 > r.remaining()) {
    throw Error(ErrorCode::FormatError, "cluster model sizes inconsistent with blob length");
  }
  m.centroids.resize(m.k * m.dim);
  for (auto& c : m.centroids) c = r.get_f64();
  m.feature_mean.resize(m.dim);
  for (auto& x : m.feature_mean) x = r.get_f64();
  m.feature_scale.resize(m.dim);
  for (auto& x : m.feature_scale) x = r.get_f64();
  return m;
}

}  // namespace dmreuse
