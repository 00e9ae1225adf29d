#pragma once

#include <cstdint>
#include <memory>

#include "dmreuse/datastore.hpp"

namespace dmreuse {

struct SyntheticStoreSpec {
  std::size_t records = 100000;
  std::size_t dim = 32;
  std::size_t k = 15;
  double spread = 0.5;  // per-dimension noise sigma around unit-scale centers
  std::uint64_t seed = 1;
  std::size_t batch = 20000;
};

/// Fills an empty store with Gaussian blobs around k random centers and
/// installs a cluster model whose centroids are those centers (version 1).
/// Labels are the 4-byte record index.
std::shared_ptr<const ClusterModel> fill_synthetic_store(DataStore& store,
                                                         const SyntheticStoreSpec& spec);

}  // namespace dmreuse
