#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dmreuse {

/// One raw sample: a flat tensor plus its declared shape (e.g. {15, 15}).
struct RawSample {
  std::string id;
  std::vector<std::size_t> shape;
  std::vector<float> payload;
  std::string source;

  std::size_t flat_size() const;
  /// Throws ShapeMismatch / NonFiniteValue when the invariants do not hold.
  void validate() const;
};

/// A point in latent space. All vectors in one index generation share dim().
struct EmbeddingVector {
  std::vector<float> values;

  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> v) : values(std::move(v)) {}
  EmbeddingVector(std::initializer_list<float> v) : values(v) {}

  std::size_t dim() const { return values.size(); }
  std::span<const float> span() const { return values; }
  bool all_finite() const;
  bool operator==(const EmbeddingVector&) const = default;
};

enum class EmbedderKind : std::uint32_t { BuiltinProjection = 0, External = 1 };

std::string_view to_string(EmbedderKind kind);

/// Fitted parameters of an embedder. Immutable once built; refits produce a
/// new spec with a larger version.
struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::BuiltinProjection;
  std::vector<std::size_t> input_shape;
  std::size_t output_dim = 0;
  std::vector<double> feature_mean;   // per flattened input feature
  std::vector<double> feature_scale;  // per flattened input feature, > 0
  std::vector<double> projection;     // output_dim x input_size, row-major
  std::vector<double> component_variance;  // variance captured by each output dim
  std::size_t fitted_on = 0;
  std::size_t effective_rank = 0;
  bool degenerate = false;  // some output dims are zero-padded directions
  std::uint64_t version = 0;

  std::size_t input_size() const;
};

/// Fits the built-in linear embedder: per-feature z-scoring followed by the
/// top-output_dim variance directions. Directions are sign-normalized so the
/// first nonzero component is positive. Directions of zero variance are
/// zero-padded and flagged via `degenerate`.
EmbedderSpec fit_embedder(std::span<const RawSample> samples, std::size_t output_dim,
                          std::uint64_t previous_version = 0);

/// Pure function of (spec, sample); bit-exact across calls.
EmbeddingVector embed(const EmbedderSpec& spec, const RawSample& sample);

std::string serialize_embedder(const EmbedderSpec& spec);
EmbedderSpec deserialize_embedder(std::string_view bytes);

// ---------------------------------------------------------------------------
// External embedding exchange format.
//
// Vector file (little-endian): "FDMS" | u32 format version | u64 count | u32 dim
// followed by count*dim float32 values, row-major. A JSON sidecar manifest maps
// row index to sample id, source and declared dim.

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

struct ExternalEmbedding {
  std::string id;
  std::string source;
  EmbeddingVector vector;
};

struct EmbeddingMatrix {
  std::uint32_t dim = 0;
  std::vector<float> values;  // count * dim
  std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
};

std::string encode_embedding_file(std::span<const ExternalEmbedding> rows, std::uint32_t dim);
EmbeddingMatrix decode_embedding_file(std::string_view bytes);

/// Builds the manifest JSON text for `rows`, pointing at `vector_file`.
std::string make_embedding_manifest(std::span<const ExternalEmbedding> rows, std::uint32_t dim,
                                    const std::string& vector_file);

/// Combines a decoded vector file with manifest text. `expected_dim` of 0 means
/// "store is empty, accept any dim".
std::vector<ExternalEmbedding> bind_manifest(const EmbeddingMatrix& matrix,
                                             std::string_view manifest_json,
                                             std::uint32_t expected_dim = 0);

/// Writes `<manifest_path>` and its vector file (manifest_path with ".bin"
/// substituted for the extension).
void write_external_embeddings(const std::string& manifest_path,
                               std::span<const ExternalEmbedding> rows, std::uint32_t dim);

/// Reads a manifest and the vector file it references (relative paths resolve
/// against the manifest's directory). Rows are returned in manifest order.
std::vector<ExternalEmbedding> ingest_external_embeddings(const std::string& manifest_path,
                                                          std::uint32_t expected_dim = 0);

}  // namespace dmreuse
