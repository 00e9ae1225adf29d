#include "dmreuse/synthetic.hpp"

#include <random>

#include "dmreuse/error.hpp"

namespace dmreuse {

std::shared_ptr<const ClusterModel> fill_synthetic_store(DataStore& store,
                                                         const SyntheticStoreSpec& spec) {
  if (spec.k == 0 || spec.dim == 0 || spec.batch == 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic store needs k, dim and batch > 0");
  }
  if (store.snapshot()->records().size() != 0 || store.snapshot()->model()) {
    throw Error(ErrorCode::InvalidArgument, "synthetic store must start empty");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> center(-10.0, 10.0);
  std::normal_distribution<double> noise(0.0, spec.spread);

  auto model = std::make_shared<ClusterModel>();
  model->k = spec.k;
  model->dim = spec.dim;
  model->version = 1;
  model->centroids.resize(spec.k * spec.dim);
  for (auto& c : model->centroids) c = center(rng);
  model->feature_mean.assign(spec.dim, 0.0);
  model->feature_scale.assign(spec.dim, 1.0);
  store.reindex(model);

  std::size_t next = 0;
  while (next < spec.records) {
    const auto n = std::min(spec.batch, spec.records - next);
    std::vector<DataRecord> batch(n);
    for (auto& r : batch) {
      const auto c = next % spec.k;
      r.sample_id = "s" + std::to_string(next);
      r.embedding.values.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        r.embedding.values[d] = static_cast<float>(model->centroids[c * spec.dim + d] + noise(rng));
      }
      const auto idx = static_cast<std::uint32_t>(next);
      r.label = {"index-u32", std::string(reinterpret_cast<const char*>(&idx), sizeof idx)};
      r.source = "synthetic";
      ++next;
    }
    store.insert(std::move(batch));
  }
  return model;
}

}  // namespace dmreuse
