#include "dmreuse/embedding.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "json.hpp"
#include "dmreuse/binary_io.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace {

constexpr char kEmbeddingMagic[4] = {'F', 'D', 'M', 'S'};
constexpr char kEmbedderMagic[4] = {'F', 'D', 'M', 'E'};
constexpr std::uint32_t kEmbedderBlobVersion = 1;

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Sample covariance route when features are few; Gram route otherwise.
// Returns directions as rows (count x p), paired with their variances, both in
// descending variance order.
void top_directions(const Eigen::MatrixXd& z, std::size_t count, Eigen::MatrixXd& dirs,
                    Eigen::VectorXd& vars) {
  const auto n = z.rows();
  const auto p = z.cols();
  const auto want = static_cast<Eigen::Index>(count);
  dirs = Eigen::MatrixXd::Zero(want, p);
  vars = Eigen::VectorXd::Zero(want);
  if (p <= n || p <= 512) {
    Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto& ev = es.eigenvalues();
    const auto& evec = es.eigenvectors();
    for (Eigen::Index i = 0; i < std::min(want, p); ++i) {
      dirs.row(i) = evec.col(p - 1 - i).transpose();
      vars(i) = ev(p - 1 - i);
    }
  } else {
    Eigen::MatrixXd gram = (z * z.transpose()) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const auto& ev = es.eigenvalues();
    const auto& evec = es.eigenvectors();
    for (Eigen::Index i = 0; i < std::min(want, n); ++i) {
      Eigen::VectorXd v = z.transpose() * evec.col(n - 1 - i);
      const double norm = v.norm();
      if (norm > 0) dirs.row(i) = (v / norm).transpose();
      vars(i) = ev(n - 1 - i);
    }
  }
}

std::size_t count_distinct(std::span<const RawSample> samples) {
  std::unordered_set<std::string_view> seen;
  for (const auto& s : samples) {
    seen.emplace(reinterpret_cast<const char*>(s.payload.data()), s.payload.size() * sizeof(float));
  }
  return seen.size();
}

}  // namespace

std::size_t RawSample::flat_size() const {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void RawSample::validate() const {
  if (payload.size() != flat_size()) {
    throw Error(ErrorCode::ShapeMismatch, "sample '" + id + "' payload has " +
                                              std::to_string(payload.size()) + " values, shape " +
                                              shape_str(shape) + " needs " +
                                              std::to_string(flat_size()));
  }
  for (float v : payload) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "sample '" + id + "' payload");
  }
}

bool EmbeddingVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

std::string_view to_string(EmbedderKind kind) {
  return kind == EmbedderKind::BuiltinProjection ? "builtin-projection" : "external";
}

std::size_t EmbedderSpec::input_size() const {
  if (input_shape.empty()) return 0;
  return std::accumulate(input_shape.begin(), input_shape.end(), std::size_t{1},
                         std::multiplies<>());
}

EmbedderSpec fit_embedder(std::span<const RawSample> samples, std::size_t output_dim,
                          std::uint64_t previous_version) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "fit_embedder needs samples");
  if (output_dim == 0) throw Error(ErrorCode::InvalidArgument, "output_dim must be positive");
  const auto& shape = samples.front().shape;
  for (const auto& s : samples) {
    if (s.shape != shape) {
      throw Error(ErrorCode::ShapeMismatch, "sample '" + s.id + "' has shape " + shape_str(s.shape) +
                                                ", expected " + shape_str(shape));
    }
    s.validate();
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto p = static_cast<Eigen::Index>(samples.front().flat_size());
  if (p == 0) throw Error(ErrorCode::ShapeMismatch, "empty sample shape");

  Eigen::MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& payload = samples[static_cast<std::size_t>(i)].payload;
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = payload[static_cast<std::size_t>(j)];
  }

  EmbedderSpec spec;
  spec.kind = EmbedderKind::BuiltinProjection;
  spec.input_shape = shape;
  spec.output_dim = output_dim;
  spec.fitted_on = samples.size();
  spec.version = previous_version + 1;
  spec.feature_mean.resize(static_cast<std::size_t>(p));
  spec.feature_scale.resize(static_cast<std::size_t>(p));

  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd z = x.rowwise() - mean;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = z.col(j).squaredNorm() / static_cast<double>(n);
    const double sd = std::sqrt(var);
    // Constant features keep scale 1.
    const double scale = sd > 1e-12 * std::max(1.0, std::abs(mean(j))) ? sd : 1.0;
    z.col(j) /= scale;
    spec.feature_mean[static_cast<std::size_t>(j)] = mean(j);
    spec.feature_scale[static_cast<std::size_t>(j)] = scale;
  }

  Eigen::MatrixXd dirs;
  Eigen::VectorXd vars;
  top_directions(z, output_dim, dirs, vars);

  const double total_var = z.squaredNorm() / static_cast<double>(n);
  const double zero_tol = 1e-9 * std::max(1.0, total_var);
  std::size_t rank = 0;
  spec.projection.assign(output_dim * static_cast<std::size_t>(p), 0.0);
  spec.component_variance.assign(output_dim, 0.0);
  for (std::size_t d = 0; d < output_dim; ++d) {
    const auto row = static_cast<Eigen::Index>(d);
    if (vars(row) <= zero_tol) continue;
    ++rank;
    Eigen::RowVectorXd dir = dirs.row(row);
    const double peak = dir.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (std::abs(dir(j)) > 1e-9 * peak) {
        if (dir(j) < 0) dir = -dir;
        break;
      }
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      spec.projection[d * static_cast<std::size_t>(p) + static_cast<std::size_t>(j)] = dir(j);
    }
    spec.component_variance[d] = vars(row);
  }
  spec.effective_rank = rank;
  spec.degenerate = rank < output_dim || count_distinct(samples) < output_dim;
  return spec;
}

EmbeddingVector embed(const EmbedderSpec& spec, const RawSample& sample) {
  if (spec.kind != EmbedderKind::BuiltinProjection) {
    throw Error(ErrorCode::InvalidArgument, "external embedder specs cannot embed raw samples");
  }
  if (sample.shape != spec.input_shape || sample.payload.size() != spec.input_size()) {
    throw Error(ErrorCode::ShapeMismatch, "sample '" + sample.id + "' has shape " +
                                              shape_str(sample.shape) + ", embedder expects " +
                                              shape_str(spec.input_shape));
  }
  const std::size_t p = spec.input_size();
  std::vector<double> z(p);
  for (std::size_t j = 0; j < p; ++j) {
    z[j] = (static_cast<double>(sample.payload[j]) - spec.feature_mean[j]) / spec.feature_scale[j];
  }
  EmbeddingVector out;
  out.values.resize(spec.output_dim);
  for (std::size_t d = 0; d < spec.output_dim; ++d) {
    const double* row = spec.projection.data() + d * p;
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) acc += row[j] * z[j];
    out.values[d] = static_cast<float>(acc);
  }
  return out;
}

std::string serialize_embedder(const EmbedderSpec& spec) {
  ByteWriter w;
  w.put_raw(std::string_view(kEmbedderMagic, 4));
  w.put_u32(kEmbedderBlobVersion);
  w.put_u32(static_cast<std::uint32_t>(spec.kind));
  w.put_u64(spec.version);
  w.put_u64(spec.fitted_on);
  w.put_u64(spec.effective_rank);
  w.put_u8(spec.degenerate ? 1 : 0);
  w.put_u32(static_cast<std::uint32_t>(spec.input_shape.size()));
  for (auto s : spec.input_shape) w.put_u64(s);
  w.put_u64(spec.output_dim);
  auto put_vec = [&](const std::vector<double>& v) {
    w.put_u64(v.size());
    for (double x : v) w.put_f64(x);
  };
  put_vec(spec.feature_mean);
  put_vec(spec.feature_scale);
  put_vec(spec.projection);
  put_vec(spec.component_variance);
  return std::move(w).take();
}

EmbedderSpec deserialize_embedder(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_raw(4) != std::string_view(kEmbedderMagic, 4)) {
    throw Error(ErrorCode::FormatError, "bad embedder magic");
  }
  if (auto v = r.get_u32(); v != kEmbedderBlobVersion) {
    throw Error(ErrorCode::FormatError, "unsupported embedder blob version " + std::to_string(v));
  }
  EmbedderSpec spec;
  spec.kind = static_cast<EmbedderKind>(r.get_u32());
  spec.version = r.get_u64();
  spec.fitted_on = r.get_u64();
  spec.effective_rank = r.get_u64();
  spec.degenerate = r.get_u8() != 0;
  spec.input_shape.resize(r.get_u32());
  for (auto& s : spec.input_shape) s = r.get_u64();
  spec.output_dim = r.get_u64();
  auto get_vec = [&](std::vector<double>& v) {
    const auto n = r.get_u64();
    if (n > r.remaining() / 8) throw Error(ErrorCode::FormatError, "embedder vector length overflow");
    v.resize(n);
    for (auto& x : v) x = r.get_f64();
  };
  get_vec(spec.feature_mean);
  get_vec(spec.feature_scale);
  get_vec(spec.projection);
  get_vec(spec.component_variance);
  if (spec.kind == EmbedderKind::BuiltinProjection &&
      (spec.feature_mean.size() != spec.input_size() ||
       spec.feature_scale.size() != spec.input_size() ||
       spec.projection.size() != spec.input_size() * spec.output_dim)) {
    throw Error(ErrorCode::FormatError, "embedder parameter sizes disagree with shape");
  }
  return spec;
}

// ---------------------------------------------------------------------------

std::string encode_embedding_file(std::span<const ExternalEmbedding> rows, std::uint32_t dim) {
  ByteWriter w;
  w.put_raw(std::string_view(kEmbeddingMagic, 4));
  w.put_u32(kEmbeddingFormatVersion);
  w.put_u64(rows.size());
  w.put_u32(dim);
  for (const auto& row : rows) {
    if (row.vector.dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "row '" + row.id + "' has dim " +
                                              std::to_string(row.vector.dim()) + ", file dim " +
                                              std::to_string(dim));
    }
    for (float v : row.vector.values) w.put_f32(v);
  }
  return std::move(w).take();
}

EmbeddingMatrix decode_embedding_file(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_raw(4) != std::string_view(kEmbeddingMagic, 4)) {
    throw Error(ErrorCode::FormatError, "bad magic at byte offset 0, expected FDMS");
  }
  if (auto v = r.get_u32(); v != kEmbeddingFormatVersion) {
    throw Error(ErrorCode::FormatError, "unsupported embedding format version " + std::to_string(v));
  }
  const auto count = r.get_u64();
  EmbeddingMatrix m;
  m.dim = r.get_u32();
  if (m.dim == 0 && count > 0) throw Error(ErrorCode::FormatError, "zero dim with nonzero count");
  const std::size_t body = static_cast<std::size_t>(count) * m.dim * sizeof(float);
  if (r.remaining() < body) {
    const std::size_t complete = r.remaining() / (m.dim * sizeof(float));
    const std::size_t bad_offset = r.offset() + complete * m.dim * sizeof(float);
    throw Error(ErrorCode::FormatError,
                "vector file truncated: row " + std::to_string(complete) + " starting at byte offset " +
                    std::to_string(bad_offset) + " is incomplete (file has " +
                    std::to_string(bytes.size()) + " bytes)");
  }
  m.values.resize(static_cast<std::size_t>(count) * m.dim);
  for (auto& v : m.values) v = r.get_f32();
  if (!r.done()) {
    throw Error(ErrorCode::FormatError,
                "trailing bytes after body at byte offset " + std::to_string(r.offset()));
  }
  return m;
}

std::string make_embedding_manifest(std::span<const ExternalEmbedding> rows, std::uint32_t dim,
                                    const std::string& vector_file) {
  nlohmann::json j;
  j["format"] = "fdms-embeddings";
  j["version"] = kEmbeddingFormatVersion;
  j["vector_file"] = vector_file;
  j["dim"] = dim;
  j["count"] = rows.size();
  auto& arr = j["rows"] = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    arr.push_back({{"row", i}, {"id", rows[i].id}, {"source", rows[i].source}});
  }
  return j.dump(2);
}

std::vector<ExternalEmbedding> bind_manifest(const EmbeddingMatrix& matrix,
                                             std::string_view manifest_json,
                                             std::uint32_t expected_dim) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    const auto declared = j.at("dim").get<std::uint32_t>();
    if (declared != matrix.dim) {
      throw Error(ErrorCode::DimMismatch, "manifest declares dim " + std::to_string(declared) +
                                              " but vector file has dim " +
                                              std::to_string(matrix.dim));
    }
    if (expected_dim != 0 && declared != expected_dim) {
      throw Error(ErrorCode::DimMismatch, "embedding dim " + std::to_string(declared) +
                                              " does not match index dim " +
                                              std::to_string(expected_dim));
    }
    const auto& rows = j.at("rows");
    std::vector<ExternalEmbedding> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
      const auto idx = row.at("row").get<std::size_t>();
      if (idx >= matrix.count()) {
        throw Error(ErrorCode::FormatError, "manifest row " + std::to_string(idx) +
                                                " outside vector file of " +
                                                std::to_string(matrix.count()) + " rows");
      }
      ExternalEmbedding e;
      e.id = row.at("id").get<std::string>();
      e.source = row.value("source", std::string{});
      const float* begin = matrix.values.data() + idx * matrix.dim;
      e.vector.values.assign(begin, begin + matrix.dim);
      if (!e.vector.all_finite()) {
        throw Error(ErrorCode::NonFiniteValue, "embedding for sample '" + e.id + "' (row " +
                                                   std::to_string(idx) + ") is not finite");
      }
      out.push_back(std::move(e));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("malformed manifest: ") + e.what());
  }
}

void write_external_embeddings(const std::string& manifest_path,
                               std::span<const ExternalEmbedding> rows, std::uint32_t dim) {
  namespace fs = std::filesystem;
  fs::path vec = fs::path(manifest_path).replace_extension(".bin");
  write_file_atomic(vec.string(), encode_embedding_file(rows, dim));
  write_file_atomic(manifest_path, make_embedding_manifest(rows, dim, vec.filename().string()));
}

std::vector<ExternalEmbedding> ingest_external_embeddings(const std::string& manifest_path,
                                                          std::uint32_t expected_dim) {
  namespace fs = std::filesystem;
  const std::string manifest = read_file(manifest_path);
  std::string vector_file;
  try {
    vector_file = nlohmann::json::parse(manifest).at("vector_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("malformed manifest: ") + e.what());
  }
  fs::path vec(vector_file);
  if (vec.is_relative()) vec = fs::path(manifest_path).parent_path() / vec;
  return bind_manifest(decode_embedding_file(read_file(vec.string())), manifest, expected_dim);
}

}  // namespace dmreuse
