#include "doctest.h"

#include <cmath>
#include <random>

#include "dmreuse/distribution.hpp"
#include "dmreuse/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dmreuse;
using testing::vec;

namespace {

ClusterModel square_model() {
  ClusterModel m;
  m.k = 4;
  m.dim = 2;
  m.centroids = {0, 0, 10, 0, 0, 10, 10, 10};
  m.feature_mean = {5, 5};
  m.feature_scale = {1, 1};
  m.version = 3;
  return m;
}

DatasetDistribution dist(std::vector<double> p, std::uint64_t version = 1) {
  DatasetDistribution d;
  d.k = p.size();
  d.probs = std::move(p);
  d.sample_count = 10;
  d.cluster_model_version = version;
  return d;
}

}  // namespace

TEST_CASE("pdf examples") {
  const auto model = square_model();
  std::vector<EmbeddingVector> at0(5, vec({0, 0}));
  const auto one_hot = compute_pdf(model, at0);
  CHECK(one_hot.probs == std::vector<double>{1, 0, 0, 0});
  CHECK(one_hot.sample_count == 5);
  CHECK(one_hot.cluster_model_version == 3);

  std::vector<EmbeddingVector> each = {vec({0, 0}), vec({10, 0}), vec({0, 10}), vec({10, 10})};
  CHECK(compute_pdf(model, each).probs == std::vector<double>{0.25, 0.25, 0.25, 0.25});

  std::vector<EmbeddingVector> skip = {vec({0, 1}), vec({9, 1}), vec({1, 9})};
  CHECK(compute_pdf(model, skip).probs[3] == 0.0);

  CHECK_THROWS_AS(compute_pdf(model, std::vector<EmbeddingVector>{}), Error);
  std::vector<EmbeddingVector> wrong = {vec({1, 2, 3})};
  try {
    compute_pdf(model, wrong);
    FAIL("expected DimMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimMismatch);
  }
}

TEST_CASE("pdf of a concatenation is the count-weighted average") {
  const auto model = square_model();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-2, 12);
  std::vector<EmbeddingVector> a(37), b(91);
  for (auto& v : a) v = vec({u(rng), u(rng)});
  for (auto& v : b) v = vec({u(rng), u(rng)});
  auto ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const auto pa = compute_pdf(model, a), pb = compute_pdf(model, b), pab = compute_pdf(model, ab);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pab.probs[i] == doctest::Approx((37 * pa.probs[i] + 91 * pb.probs[i]) / 128).epsilon(1e-12));
  }
}

TEST_CASE("jsd hand values") {
  CHECK(jsd(dist({0.3, 0.7}), dist({0.3, 0.7})) == 0.0);
  CHECK(jsd(dist({1, 0}), dist({0, 1})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(jsd(dist({0.5, 0.5}), dist({1, 0})) - 0.311278) < 1e-6);
  CHECK(jsd(dist({0.5, 0.5}), dist({1, 0})) ==
        doctest::Approx(oracle::jsd_entropy_form({0.5, 0.5}, {1, 0})).epsilon(1e-12));
}

TEST_CASE("jsd refuses incomparable signatures") {
  try {
    jsd(dist({0.5, 0.5}, 1), dist({0.5, 0.5}, 2));
    FAIL("expected VersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VersionMismatch);
  }
  try {
    jsd(dist({0.5, 0.5}), dist({1, 0, 0}));
    FAIL("expected KMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::KMismatch);
  }
}

TEST_CASE("jsd properties on random simplex points") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 3000; ++t) {
    const std::size_t k = 2 + rng() % 10;
    const auto p = testing::random_simplex(rng, k), q = testing::random_simplex(rng, k),
               r = testing::random_simplex(rng, k);
    const double pq = jsd(p, q), qp = jsd(q, p), qr = jsd(q, r), pr = jsd(p, r);
    CHECK(pq == qp);
    CHECK(pq >= 0.0);
    CHECK(pq <= 1.0);
    CHECK(pq == doctest::Approx(oracle::jsd_entropy_form(p, q)).epsilon(1e-9));
    CHECK(std::sqrt(pr) <= std::sqrt(pq) + std::sqrt(qr) + 1e-12);
  }
}

TEST_CASE("jsd is one exactly for disjoint supports") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    auto p = testing::random_simplex(rng, 3), q = testing::random_simplex(rng, 3);
    std::vector<double> a = {p[0], p[1], p[2], 0, 0, 0}, b = {0, 0, 0, q[0], q[1], q[2]};
    CHECK(jsd(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("distribution validation") {
  CHECK_NOTHROW(dist({0.2, 0.8}).validate());
  CHECK_THROWS_AS(dist({0.2, 0.7}).validate(), Error);
  CHECK_THROWS_AS(dist({-0.2, 1.2}).validate(), Error);
  auto bad = dist({0.5, 0.5});
  bad.k = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  const std::vector<std::size_t> labels{0, 2, 2, 1};
  const auto d = pdf_from_labels(labels, 3, 4);
  CHECK(d.probs == std::vector<double>{0.25, 0.25, 0.5});
  CHECK_THROWS_AS(pdf_from_labels(labels, 2, 4), Error);
}
