#include "doctest.h"

#include <cmath>
#include <random>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/embedding.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dmreuse;

namespace {

RawSample sample(std::string id, std::vector<float> payload, std::vector<std::size_t> shape = {}) {
  if (shape.empty()) shape = {payload.size()};
  return {std::move(id), std::move(shape), std::move(payload), "unit"};
}

oracle::Matrix as_matrix(const std::vector<RawSample>& s) {
  oracle::Matrix m;
  for (const auto& x : s) m.emplace_back(x.payload.begin(), x.payload.end());
  return m;
}

std::vector<double> zrow(const EmbedderSpec& spec, const RawSample& s) {
  std::vector<double> z(s.payload.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = (s.payload[j] - spec.feature_mean[j]) / spec.feature_scale[j];
  }
  return z;
}

// Mean squared reconstruction residual of z-scored rows under the embedder's
// projection rows (assumed orthonormal).
double residual(const EmbedderSpec& spec, const std::vector<RawSample>& s) {
  const std::size_t p = spec.input_size();
  double total = 0.0;
  for (const auto& x : s) {
    auto z = zrow(spec, x);
    std::vector<double> rec(p, 0.0);
    for (std::size_t d = 0; d < spec.output_dim; ++d) {
      double y = 0.0;
      for (std::size_t j = 0; j < p; ++j) y += spec.projection[d * p + j] * z[j];
      for (std::size_t j = 0; j < p; ++j) rec[j] += y * spec.projection[d * p + j];
    }
    for (std::size_t j = 0; j < p; ++j) total += (z[j] - rec[j]) * (z[j] - rec[j]);
  }
  return total / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("samples on a plane in 9-D embed with zero residual, matching the eigen oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> u(9), v(9), c(9);
  for (auto* vec : {&u, &v, &c})
    for (auto& x : *vec) x = g(rng);
  std::vector<RawSample> samples;
  for (int i = 0; i < 100; ++i) {
    const double a = 3.0 * g(rng), b = g(rng);
    std::vector<float> p(9);
    for (int j = 0; j < 9; ++j) p[j] = static_cast<float>(a * u[j] + b * v[j] + c[j]);
    samples.push_back(sample("p" + std::to_string(i), p));
  }
  const auto spec = fit_embedder(samples, 2);
  CHECK(spec.version == 1);
  CHECK(spec.effective_rank == 2);
  CHECK_FALSE(spec.degenerate);
  // float payloads leave ~1e-7 relative noise off the plane
  CHECK(residual(spec, samples) < 1e-8);

  const auto eig = oracle::jacobi(oracle::covariance(oracle::zscore(as_matrix(samples))));
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(spec.component_variance[d] == doctest::Approx(eig.values[d]).epsilon(1e-6));
    double dot = 0.0;
    for (std::size_t j = 0; j < 9; ++j) dot += spec.projection[d * 9 + j] * eig.vectors[d][j];
    CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(eig.values[2] < 1e-8);

  // Embedded coordinates preserve the plane geometry: pairwise distances in
  // z-space equal pairwise distances in embedding space.
  for (int i = 0; i < 20; ++i) {
    const auto za = zrow(spec, samples[i]), zb = zrow(spec, samples[i + 1]);
    double dz = 0.0;
    for (std::size_t j = 0; j < 9; ++j) dz += (za[j] - zb[j]) * (za[j] - zb[j]);
    const auto ea = embed(spec, samples[i]), eb = embed(spec, samples[i + 1]);
    double de = 0.0;
    for (std::size_t d = 0; d < 2; ++d) de += (ea.values[d] - eb.values[d]) * (ea.values[d] - eb.values[d]);
    CHECK(std::sqrt(de) == doctest::Approx(std::sqrt(dz)).epsilon(1e-5));
  }
}

TEST_CASE("projection residual is minimal among rank-D projections") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<RawSample> samples;
  for (int i = 0; i < 200; ++i) {
    std::vector<float> p(6);
    for (int j = 0; j < 6; ++j) p[j] = static_cast<float>(g(rng) * (j + 1));
    p[1] += 0.8f * p[0];
    p[4] -= 0.5f * p[3];
    samples.push_back(sample("r" + std::to_string(i), p));
  }
  const auto spec = fit_embedder(samples, 3);
  const auto eig = oracle::jacobi(oracle::covariance(oracle::zscore(as_matrix(samples))));
  const double oracle_residual = eig.values[3] + eig.values[4] + eig.values[5];
  const double got = residual(spec, samples);
  CHECK(got == doctest::Approx(oracle_residual).epsilon(1e-6));

  // Random orthonormal 3-frames never do better.
  for (int trial = 0; trial < 50; ++trial) {
    EmbedderSpec other = spec;
    std::vector<std::vector<double>> basis;
    for (int d = 0; d < 3; ++d) {
      std::vector<double> b(6);
      for (auto& x : b) x = g(rng);
      for (const auto& q : basis) {
        double dot = 0.0;
        for (int j = 0; j < 6; ++j) dot += b[j] * q[j];
        for (int j = 0; j < 6; ++j) b[j] -= dot * q[j];
      }
      double norm = 0.0;
      for (double x : b) norm += x * x;
      for (auto& x : b) x /= std::sqrt(norm);
      basis.push_back(b);
    }
    for (int d = 0; d < 3; ++d)
      for (int j = 0; j < 6; ++j) other.projection[d * 6 + j] = basis[d][j];
    CHECK(residual(other, samples) >= got * (1.0 - 1e-9));
  }
}

TEST_CASE("directions follow the sign convention") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<RawSample> samples;
  for (int i = 0; i < 50; ++i) {
    std::vector<float> p(5);
    for (auto& x : p) x = static_cast<float>(g(rng));
    samples.push_back(sample("s" + std::to_string(i), p));
  }
  const auto spec = fit_embedder(samples, 4);
  for (std::size_t d = 0; d < 4; ++d) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double x = spec.projection[d * 5 + j];
      if (std::abs(x) > 1e-9) {
        CHECK(x > 0);
        break;
      }
    }
  }
}

TEST_CASE("identical samples give a degenerate embedder mapping to zero") {
  std::vector<RawSample> samples(10, sample("same", {1, 2, 3}));
  const auto spec = fit_embedder(samples, 1);
  CHECK(spec.degenerate);
  CHECK(spec.effective_rank == 0);
  const auto e = embed(spec, samples[0]);
  CHECK(e.dim() == 1);
  CHECK(e.values[0] == 0.0f);
}

TEST_CASE("fewer samples than D zero-pads the trailing dims") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<RawSample> samples;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> p(20);
    for (auto& x : p) x = static_cast<float>(g(rng));
    samples.push_back(sample("f" + std::to_string(i), p));
  }
  const auto spec = fit_embedder(samples, 10);
  CHECK(spec.degenerate);
  CHECK(spec.effective_rank <= 5);
  for (const auto& s : samples) {
    const auto e = embed(spec, s);
    REQUIRE(e.dim() == 10);
    for (std::size_t d = 5; d < 10; ++d) CHECK(e.values[d] == 0.0f);
  }
}

TEST_CASE("embedding the fitted mean gives the zero vector") {
  std::vector<RawSample> samples = {sample("a", {0, 0, 4}), sample("b", {2, 4, 0}),
                                    sample("c", {4, 2, 2})};
  const auto spec = fit_embedder(samples, 2);
  const auto e = embed(spec, sample("m", {2, 2, 2}));
  for (float v : e.values) CHECK(std::abs(v) < 1e-6f);
}

TEST_CASE("embed is bit-exact and pairwise distances ignore a global shift") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<RawSample> a, b;
  for (int i = 0; i < 40; ++i) {
    std::vector<float> p(8), q(8);
    for (int j = 0; j < 8; ++j) {
      p[j] = static_cast<float>(g(rng));
      q[j] = p[j] + 100.0f;
    }
    a.push_back(sample("a" + std::to_string(i), p));
    b.push_back(sample("b" + std::to_string(i), q));
  }
  const auto sa = fit_embedder(a, 3), sb = fit_embedder(b, 3);
  CHECK(embed(sa, a[0]) == embed(sa, a[0]));
  for (int i = 0; i + 1 < 40; ++i) {
    auto dist = [](const EmbeddingVector& x, const EmbeddingVector& y) {
      double s = 0;
      for (std::size_t d = 0; d < x.dim(); ++d) s += (x.values[d] - y.values[d]) * (x.values[d] - y.values[d]);
      return std::sqrt(s);
    };
    CHECK(dist(embed(sa, a[i]), embed(sa, a[i + 1])) ==
          doctest::Approx(dist(embed(sb, b[i]), embed(sb, b[i + 1]))).epsilon(1e-3));
  }
}

TEST_CASE("fit and embed validate input") {
  CHECK_THROWS_AS(fit_embedder(std::vector<RawSample>{}, 2), Error);
  std::vector<RawSample> mixed = {sample("a", {1, 2}), sample("b", {1, 2, 3})};
  try {
    fit_embedder(mixed, 1);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  std::vector<RawSample> ok = {sample("a", {1, 2}), sample("b", {3, 1})};
  const auto spec = fit_embedder(ok, 1, 4);
  CHECK(spec.version == 5);
  try {
    embed(spec, sample("c", {1, 2, 3}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  auto bad = sample("nan", {1, NAN});
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("embedder spec survives serialization") {
  std::vector<RawSample> s = {sample("a", {1, 2, 3, 4}, {2, 2}), sample("b", {4, 3, 2, 1}, {2, 2}),
                              sample("c", {0, 5, 1, 1}, {2, 2})};
  const auto spec = fit_embedder(s, 2, 7);
  const auto back = deserialize_embedder(serialize_embedder(spec));
  CHECK(back.version == spec.version);
  CHECK(back.input_shape == spec.input_shape);
  CHECK(back.projection == spec.projection);
  CHECK(back.feature_scale == spec.feature_scale);
  CHECK(embed(back, s[2]) == embed(spec, s[2]));
  auto blob = serialize_embedder(spec);
  blob.resize(blob.size() - 3);
  CHECK_THROWS_AS(deserialize_embedder(blob), Error);
}

TEST_CASE("external embeddings round-trip through manifest and vector file") {
  testing::TempDir dir;
  std::vector<ExternalEmbedding> rows = {{"x", "scan1", testing::vec({1, 2, 3, 4})},
                                         {"y", "scan1", testing::vec({-1, 0.5f, 0, 9})},
                                         {"z", "scan2", testing::vec({0, 0, 0, 1e-30f})}};
  const auto manifest = dir.file("emb.json");
  write_external_embeddings(manifest, rows, 4);
  CHECK(std::filesystem::exists(dir.file("emb.bin")));
  const auto back = ingest_external_embeddings(manifest, 4);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].source == rows[i].source);
    CHECK(back[i].vector == rows[i].vector);
  }
  CHECK(ingest_external_embeddings(manifest, 0).size() == 3);
  try {
    ingest_external_embeddings(manifest, 8);
    FAIL("expected DimMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimMismatch);
  }
}

TEST_CASE("round trip holds for random lists") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t dim = 1 + static_cast<std::uint32_t>(rng() % 16);
    std::vector<ExternalEmbedding> rows(rng() % 30);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].id = "id" + std::to_string(trial) + "_" + std::to_string(i);
      rows[i].vector.values.resize(dim);
      for (auto& x : rows[i].vector.values) x = u(rng);
    }
    const auto file = encode_embedding_file(rows, dim);
    const auto back = bind_manifest(decode_embedding_file(file), make_embedding_manifest(rows, dim, "v.bin"));
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].id == rows[i].id);
      CHECK(back[i].vector == rows[i].vector);
    }
  }
}

TEST_CASE("truncated vector file names the byte offset") {
  std::vector<ExternalEmbedding> rows = {{"a", "", testing::vec({1, 2, 3, 4})},
                                         {"b", "", testing::vec({5, 6, 7, 8})}};
  auto file = encode_embedding_file(rows, 4);
  file.resize(file.size() - 6);  // cut into the second vector
  try {
    decode_embedding_file(file);
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatError);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  auto header = encode_embedding_file(rows, 4);
  header[0] = 'X';
  CHECK_THROWS_AS(decode_embedding_file(header), Error);
}

TEST_CASE("NaN vectors are rejected with the sample id") {
  std::vector<ExternalEmbedding> rows = {{"good", "", testing::vec({1, 2})},
                                         {"bad-one", "", testing::vec({NAN, 2})}};
  const auto file = encode_embedding_file(rows, 2);
  try {
    bind_manifest(decode_embedding_file(file), make_embedding_manifest(rows, 2, "v.bin"));
    FAIL("expected NonFiniteValue");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteValue);
    CHECK(std::string(e.what()).find("bad-one") != std::string::npos);
  }
}
