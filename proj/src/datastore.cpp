#include "dmreuse/datastore.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <unordered_set>

#include "json.hpp"
#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "dmreuse/error.hpp"

namespace dmreuse {

namespace fs = std::filesystem;

namespace {

constexpr char kLogMagic[4] = {'F', 'D', 'M', 'L'};
constexpr char kIndexMagic[4] = {'F', 'D', 'M', 'I'};
constexpr std::uint32_t kLogFormatVersion = 1;
constexpr std::uint32_t kIndexFormatVersion = 1;
constexpr std::uint32_t kBatchMagic = 0x48435442;  // "BTCH"
constexpr std::size_t kFrameHeader = 16;           // magic, count, body length

std::int64_t now_micros() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::uint32_t crc_of(std::string_view body) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large bodies in pieces.
  std::size_t off = 0;
  while (off < body.size()) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(body.size() - off, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(body.data() + off), piece);
    off += piece;
  }
  return static_cast<std::uint32_t>(crc);
}

void encode_record(ByteWriter& out, const DataRecord& r) {
  ByteWriter w;
  w.put_string(r.sample_id);
  w.put_u32(static_cast<std::uint32_t>(r.embedding.dim()));
  for (float v : r.embedding.values) w.put_f32(v);
  w.put_string(r.label.schema);
  w.put_string(r.label.bytes);
  w.put_string(r.source);
  w.put_i64(r.ingested_at);
  w.put_i64(r.cluster_id);
  w.put_u64(r.cluster_model_version);
  w.put_u8(r.raw ? 1 : 0);
  if (r.raw) {
    w.put_u32(static_cast<std::uint32_t>(r.raw->shape.size()));
    for (auto s : r.raw->shape) w.put_u64(s);
    w.put_u64(r.raw->values.size());
    for (float v : r.raw->values) w.put_f32(v);
  }
  out.put_u32(static_cast<std::uint32_t>(w.size()));
  out.put_raw(w.bytes());
}

DataRecord decode_record(ByteReader& in) {
  const auto len = in.get_u32();
  ByteReader r(in.get_raw(len));
  DataRecord rec;
  rec.sample_id = r.get_string();
  const auto dim = r.get_u32();
  if (dim > r.remaining() / 4) throw Error(ErrorCode::FormatError, "record dim overflow");
  rec.embedding.values.resize(dim);
  for (auto& v : rec.embedding.values) v = r.get_f32();
  rec.label.schema = r.get_string();
  rec.label.bytes = r.get_string();
  rec.source = r.get_string();
  rec.ingested_at = r.get_i64();
  rec.cluster_id = r.get_i64();
  rec.cluster_model_version = r.get_u64();
  if (r.get_u8()) {
    RawPayload raw;
    raw.shape.resize(r.get_u32());
    for (auto& s : raw.shape) s = r.get_u64();
    const auto count = r.get_u64();
    if (count > r.remaining() / 4) throw Error(ErrorCode::FormatError, "raw payload overflow");
    raw.values.resize(count);
    for (auto& v : raw.values) v = r.get_f32();
    rec.raw = std::move(raw);
  }
  return rec;
}

std::string encode_batch(std::span<const DataRecord> records) {
  ByteWriter body;
  for (const auto& r : records) encode_record(body, r);
  ByteWriter frame;
  frame.put_u32(kBatchMagic);
  frame.put_u32(static_cast<std::uint32_t>(records.size()));
  frame.put_u64(body.size());
  frame.put_raw(body.bytes());
  frame.put_u32(crc_of(body.bytes()));
  return std::move(frame).take();
}

std::string encode_log_header(const ClusterModel* model) {
  ByteWriter w;
  w.put_raw(std::string_view(kLogMagic, 4));
  w.put_u32(kLogFormatVersion);
  w.put_u64(model ? model->version : 0);
  if (model) {
    auto blob = serialize_cluster_model(*model);
    w.put_u32(static_cast<std::uint32_t>(blob.size()));
    w.put_raw(blob);
  } else {
    w.put_u32(0);
  }
  return std::move(w).take();
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = kMax - (kMax % bound) - 1;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit && limit != kMax);
  return x % bound;
}

/// Floyd's sampling of `take` distinct indices below `pool`, sorted.
std::vector<std::size_t> sample_without_replacement(std::mt19937_64& rng, std::size_t pool,
                                                    std::size_t take) {
  std::vector<std::size_t> out;
  if (take == 0) return out;
  if (take == pool) {
    out.resize(pool);
    for (std::size_t i = 0; i < pool; ++i) out[i] = i;
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(take * 2);
  for (std::size_t j = pool - take; j < pool; ++j) {
    const auto r = static_cast<std::size_t>(uniform_below(rng, j + 1));
    if (!chosen.insert(r).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

void write_all(int fd, std::string_view bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::StorageFailure, std::string("log write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

nlohmann::json audit_to_json(const AuditEntry& e) {
  const auto& p = e.prior;
  return {{"replaced_at", e.replaced_at},
          {"sample_id", p.sample_id},
          {"prior",
           {{"embedding", p.embedding.values},
            {"cluster_id", p.cluster_id},
            {"cluster_model_version", p.cluster_model_version},
            {"label_schema", p.label.schema},
            {"label_hex", to_hex(p.label.bytes)},
            {"source", p.source},
            {"ingested_at", p.ingested_at}}}};
}

AuditEntry audit_from_json(const nlohmann::json& j) {
  AuditEntry e;
  e.replaced_at = j.at("replaced_at").get<std::int64_t>();
  auto& p = e.prior;
  p.sample_id = j.at("sample_id").get<std::string>();
  const auto& prior = j.at("prior");
  p.embedding.values = prior.at("embedding").get<std::vector<float>>();
  p.cluster_id = prior.at("cluster_id").get<std::int64_t>();
  p.cluster_model_version = prior.at("cluster_model_version").get<std::uint64_t>();
  p.label.schema = prior.at("label_schema").get<std::string>();
  p.label.bytes = from_hex(prior.at("label_hex").get<std::string>());
  p.source = prior.at("source").get<std::string>();
  p.ingested_at = prior.at("ingested_at").get<std::int64_t>();
  return e;
}

}  // namespace

// ---------------------------------------------------------------------------

class TableEditor {
 public:
  explicit TableEditor(RecordTable base)
      : t_(std::move(base)), fresh_(t_.chunks_.size(), false) {}

  void append(DataRecord r) {
    if (t_.size_ % RecordTable::kChunkSize == 0) {
      auto chunk = std::make_shared<std::vector<DataRecord>>();
      chunk->reserve(RecordTable::kChunkSize);
      t_.chunks_.push_back(std::move(chunk));
      fresh_.push_back(true);
    }
    mutable_chunk(t_.chunks_.size() - 1).push_back(std::move(r));
    ++t_.size_;
  }

  DataRecord& at(std::size_t i) {
    return mutable_chunk(i / RecordTable::kChunkSize)[i % RecordTable::kChunkSize];
  }
  const DataRecord& get(std::size_t i) const { return t_[i]; }
  std::size_t size() const { return t_.size_; }

  RecordTable finish() && { return std::move(t_); }

 private:
  std::vector<DataRecord>& mutable_chunk(std::size_t c) {
    if (!fresh_[c]) {
      auto copy = std::make_shared<std::vector<DataRecord>>();
      copy->reserve(RecordTable::kChunkSize);
      *copy = *t_.chunks_[c];
      t_.chunks_[c] = std::move(copy);
      fresh_[c] = true;
    }
    return *t_.chunks_[c];
  }

  RecordTable t_;
  std::vector<bool> fresh_;
};

namespace {

using ClusterLists = std::vector<std::shared_ptr<std::vector<std::uint32_t>>>;

class ClusterEditor {
 public:
  explicit ClusterEditor(ClusterLists base) : lists_(std::move(base)), fresh_(lists_.size(), false) {}

  void add(std::size_t c, std::uint32_t pos) {
    auto& v = mutable_list(c);
    v.insert(std::lower_bound(v.begin(), v.end(), pos), pos);
  }
  void remove(std::size_t c, std::uint32_t pos) {
    auto& v = mutable_list(c);
    auto it = std::lower_bound(v.begin(), v.end(), pos);
    if (it != v.end() && *it == pos) v.erase(it);
  }
  ClusterLists finish() && { return std::move(lists_); }

 private:
  std::vector<std::uint32_t>& mutable_list(std::size_t c) {
    if (!fresh_[c]) {
      lists_[c] = std::make_shared<std::vector<std::uint32_t>>(*lists_[c]);
      fresh_[c] = true;
    }
    return *lists_[c];
  }

  ClusterLists lists_;
  std::vector<bool> fresh_;
};

ClusterLists build_cluster_lists(const RecordTable& table, std::size_t k) {
  ClusterLists lists(k);
  for (auto& l : lists) l = std::make_shared<std::vector<std::uint32_t>>();
  table.for_each([&](std::size_t pos, const DataRecord& r) {
    if (r.cluster_id >= 0 && static_cast<std::size_t>(r.cluster_id) < k) {
      lists[static_cast<std::size_t>(r.cluster_id)]->push_back(static_cast<std::uint32_t>(pos));
    }
  });
  return lists;
}

}  // namespace

RawSample DataRecord::raw_sample() const {
  if (!raw) throw Error(ErrorCode::NotFound, "record '" + sample_id + "' has no raw payload");
  return RawSample{sample_id, raw->shape, raw->values, source};
}

std::string_view to_string(PseudoLabelDecision d) {
  return d == PseudoLabelDecision::Reused ? "reused" : "needs-labeling";
}

// ---------------------------------------------------------------------------
// Apportionment

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t n) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "negative weight");
    total += w;
  }
  std::vector<std::size_t> seats(weights.size(), 0);
  if (n == 0) return seats;
  if (!(total > 0.0)) throw Error(ErrorCode::InvalidArgument, "weights sum to zero");

  std::vector<double> rem(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = static_cast<double>(n) * (weights[i] / total);
    // Quotas within rounding noise of an integer count as that integer.
    const double fl = std::floor(q + 1e-9 * std::max(1.0, q));
    seats[i] = static_cast<std::size_t>(fl);
    rem[i] = std::max(0.0, q - fl);
    used += seats[i];
  }
  std::vector<std::size_t> order(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Remainders equal up to rounding noise are ties, resolved by lower index.
  auto key = [&](std::size_t i) { return std::llround(rem[i] * 1e9); };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  while (used > n) {
    // Only reachable through snapping noise: take seats back from the smallest remainders.
    for (auto it = order.rbegin(); it != order.rend() && used > n; ++it) {
      if (seats[*it] > 0) {
        --seats[*it];
        --used;
      }
    }
  }
  for (std::size_t j = 0; used < n; j = (j + 1) % order.size()) {
    if (weights[order[j]] > 0.0) {
      ++seats[order[j]];
      ++used;
    }
  }
  return seats;
}

std::vector<std::size_t> apportion_with_capacity(std::span<const double> weights,
                                                 std::span<const std::size_t> capacity,
                                                 std::size_t n) {
  if (weights.size() != capacity.size()) {
    throw Error(ErrorCode::KMismatch, "weights and capacities differ in length");
  }
  std::size_t total_cap = 0;
  for (auto c : capacity) total_cap += c;
  if (total_cap < n) {
    throw Error(ErrorCode::InsufficientData, "requested " + std::to_string(n) + " records, only " +
                                                 std::to_string(total_cap) + " available");
  }
  auto targets = largest_remainder(weights, n);
  while (true) {
    std::size_t shortfall = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] > capacity[i]) {
        shortfall += targets[i] - capacity[i];
        targets[i] = capacity[i];
      }
    }
    if (shortfall == 0) return targets;
    std::vector<double> w(weights.size(), 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (targets[i] < capacity[i]) {
        w[i] = weights[i];
        wsum += w[i];
      }
    }
    if (!(wsum > 0.0)) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = static_cast<double>(capacity[i] - targets[i]);
      }
    }
    const auto extra = largest_remainder(w, shortfall);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] += extra[i];
  }
}

// ---------------------------------------------------------------------------
// Snapshot reads

std::span<const std::uint32_t> StoreSnapshot::cluster_members(std::size_t c) const {
  if (c >= clusters_.size()) return {};
  return *clusters_[c];
}

LookupResult StoreSnapshot::lookup_by_distribution(const DatasetDistribution& pdf, std::size_t n,
                                                   std::uint64_t seed) const {
  if (!model_) throw Error(ErrorCode::NotInitialized, "store has no cluster index yet");
  if (pdf.cluster_model_version != version_) {
    throw Error(ErrorCode::VersionMismatch, "distribution computed under cluster model version " +
                                                std::to_string(pdf.cluster_model_version) +
                                                ", store index is at " + std::to_string(version_));
  }
  if (pdf.k != model_->k || pdf.probs.size() != model_->k) {
    throw Error(ErrorCode::KMismatch, "distribution k=" + std::to_string(pdf.k) + ", index k=" +
                                          std::to_string(model_->k));
  }
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "lookup count must be at least 1");

  std::vector<std::size_t> capacity(clusters_.size());
  for (std::size_t c = 0; c < clusters_.size(); ++c) capacity[c] = clusters_[c]->size();
  LookupResult out;
  out.requested_count = n;
  out.rng_seed = seed;
  out.cluster_model_version = version_;
  out.per_cluster_counts = apportion_with_capacity(pdf.probs, capacity, n);
  out.records.reserve(n);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    const auto& members = *clusters_[c];
    for (auto idx : sample_without_replacement(rng, members.size(), out.per_cluster_counts[c])) {
      out.records.push_back(records_[members[idx]]);
    }
  }
  return out;
}

PseudoLabelOutcome StoreSnapshot::pseudo_label(const EmbeddingVector& v, double threshold_t,
                                               std::string sample_id) const {
  if (!(threshold_t > 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold T must be positive");
  if (records_.empty()) throw Error(ErrorCode::EmptyStore, "no labeled records to match against");
  if (dim_ != 0 && v.dim() != dim_) {
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(v.dim()) + ", store dim " +
                                            std::to_string(dim_));
  }

  std::vector<double> unit;
  std::span<const double> scale;
  if (model_) {
    scale = model_->feature_scale;
  } else {
    unit.assign(v.dim(), 1.0);
    scale = unit;
  }
  auto dist_sq = [&](const DataRecord& r) {
    double s = 0.0;
    for (std::size_t d = 0; d < scale.size(); ++d) {
      const double diff =
          (static_cast<double>(v.values[d]) - static_cast<double>(r.embedding.values[d])) / scale[d];
      s += diff * diff;
    }
    return s;
  };

  PseudoLabelOutcome out;
  out.sample_id = std::move(sample_id);
  out.cluster_model_version = version_;
  std::size_t best = records_.size();
  double best_d2 = std::numeric_limits<double>::infinity();

  if (model_) {
    const auto c = nearest_centroid(*model_, v.values);
    for (auto pos : *clusters_[c]) {
      const double d2 = dist_sq(records_[pos]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = pos;
      }
    }
  }
  // Fall back to every cluster when the home cluster has no match inside T.
  if (best == records_.size() || !(std::sqrt(best_d2) < threshold_t)) {
    out.searched_all_clusters = true;
    records_.for_each([&](std::size_t pos, const DataRecord& r) {
      if (r.embedding.dim() != v.dim()) return;
      const double d2 = dist_sq(r);
      if (d2 < best_d2 || (d2 == best_d2 && pos < best)) {
        best_d2 = d2;
        best = pos;
      }
    });
  }
  if (best == records_.size()) {
    throw Error(ErrorCode::EmptyStore, "no embedded records to match against");
  }
  out.distance = std::sqrt(best_d2);
  if (out.distance < threshold_t) {
    out.decision = PseudoLabelDecision::Reused;
    out.matched_record = records_[best];
  }
  return out;
}

StoreStats StoreSnapshot::stats() const {
  StoreStats s;
  s.record_count = records_.size();
  s.cluster_model_version = version_;
  s.dim = dim_;
  s.commit_seq = commit_seq_;
  s.audit_entries = audit_entries_;
  s.disk_bytes = disk_bytes_;
  s.per_cluster.resize(clusters_.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    s.per_cluster[c] = clusters_[c]->size();
    assigned += s.per_cluster[c];
  }
  s.unassigned = s.record_count - assigned;
  return s;
}

// ---------------------------------------------------------------------------
// DataStore

DataStore::DataStore() : current_(std::make_shared<StoreSnapshot>()) {}

DataStore::DataStore(std::string dir, Options options)
    : dir_(std::move(dir)), options_(std::move(options)) {
  if (dir_.empty()) {
    current_ = std::make_shared<StoreSnapshot>();
    return;
  }
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot create " + dir_ + ": " + ec.message());
  open_existing();
}

DataStore::~DataStore() {
  if (persistent()) {
    try {
      flush_index();
    } catch (...) {
    }
  }
  if (log_fd_ >= 0) ::close(log_fd_);
}

std::string DataStore::log_path() const { return (fs::path(dir_) / "records.log").string(); }
std::string DataStore::index_path() const { return (fs::path(dir_) / "records.idx").string(); }
std::string DataStore::audit_path() const { return (fs::path(dir_) / "audit.jsonl").string(); }

void DataStore::open_existing() {
  if (!fs::exists(log_path())) write_file_atomic(log_path(), encode_log_header(nullptr));
  const std::string bytes = read_file(log_path());

  auto snap = std::make_shared<StoreSnapshot>();
  ByteReader header(bytes);
  try {
    if (header.get_raw(4) != std::string_view(kLogMagic, 4)) {
      throw Error(ErrorCode::FormatError, "bad log magic");
    }
    if (auto v = header.get_u32(); v != kLogFormatVersion) {
      throw Error(ErrorCode::FormatError, "unsupported log version " + std::to_string(v));
    }
    snap->version_ = header.get_u64();
    const auto blob_len = header.get_u32();
    if (blob_len > 0) {
      snap->model_ = std::make_shared<const ClusterModel>(
          deserialize_cluster_model(header.get_raw(blob_len)));
      snap->dim_ = snap->model_->dim;
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::StorageFailure, std::string("corrupt log header: ") + e.what());
  }

  // Replay committed batches; an incomplete or corrupt tail is discarded.
  std::size_t pos = header.offset();
  TableEditor table(RecordTable{});
  std::size_t batches = 0;
  while (pos < bytes.size()) {
    try {
      ByteReader frame(std::string_view(bytes).substr(pos));
      if (frame.get_u32() != kBatchMagic) throw Error(ErrorCode::FormatError, "bad batch magic");
      const auto count = frame.get_u32();
      const auto body_len = frame.get_u64();
      const auto body = frame.get_raw(body_len);
      if (frame.get_u32() != crc_of(body)) throw Error(ErrorCode::FormatError, "batch crc mismatch");
      ByteReader br(body);
      std::vector<DataRecord> recs;
      recs.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) recs.push_back(decode_record(br));
      for (auto& r : recs) {
        if (r.embedding.dim() != 0) snap->dim_ = r.embedding.dim();
        auto it = positions_.find(r.sample_id);
        if (it == positions_.end()) {
          positions_.emplace(r.sample_id, static_cast<std::uint32_t>(table.size()));
          table.append(std::move(r));
        } else {
          table.at(it->second) = std::move(r);
        }
      }
      pos += kFrameHeader + body_len + 4;
      ++batches;
    } catch (const Error& e) {
      std::cerr << "[datastore] discarding uncommitted log tail at byte " << pos << " ("
                << e.what() << ")\n";
      if (::truncate(log_path().c_str(), static_cast<off_t>(pos)) != 0) {
        throw Error(ErrorCode::StorageFailure, "cannot truncate log tail");
      }
      break;
    }
  }
  log_size_ = pos;
  snap->records_ = std::move(table).finish();
  snap->commit_seq_ = batches;

  if (snap->model_) {
    if (!load_index_file(*snap)) {
      // Records written under an older model (interrupted reindex) are reassigned.
      TableEditor fix(snap->records_);
      for (std::size_t i = 0; i < fix.size(); ++i) {
        const auto& r = fix.get(i);
        if (r.cluster_model_version != snap->version_ && r.embedding.dim() == snap->dim_) {
          auto& m = fix.at(i);
          m.cluster_id = static_cast<std::int64_t>(nearest_centroid(*snap->model_, m.embedding.values));
          m.cluster_model_version = snap->version_;
        }
      }
      snap->records_ = std::move(fix).finish();
      snap->clusters_ = build_cluster_lists(snap->records_, snap->model_->k);
      write_index_file(*snap);
    }
  }

  if (fs::exists(audit_path())) {
    std::ifstream in(audit_path());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        audit_.push_back(audit_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception&) {
        break;  // torn final line
      }
    }
  }
  snap->audit_entries_ = audit_.size();

  log_fd_ = ::open(log_path().c_str(), O_WRONLY | O_APPEND);
  if (log_fd_ < 0) throw Error(ErrorCode::StorageFailure, "cannot open log for append");
  snap->disk_bytes_ = log_size_;
  current_ = std::move(snap);
}

void DataStore::write_index_file(const StoreSnapshot& snap) {
  if (!persistent() || !snap.model_) return;
  ByteWriter w;
  w.put_raw(std::string_view(kIndexMagic, 4));
  w.put_u32(kIndexFormatVersion);
  w.put_u64(snap.version_);
  w.put_u64(log_size_);
  w.put_u64(snap.records_.size());
  w.put_u32(static_cast<std::uint32_t>(snap.clusters_.size()));
  for (const auto& list : snap.clusters_) {
    w.put_u64(list->size());
    for (auto p : *list) w.put_u32(p);
  }
  write_file_atomic(index_path(), w.bytes());
}

bool DataStore::load_index_file(StoreSnapshot& snap) {
  if (!fs::exists(index_path())) return false;
  try {
    const auto bytes = read_file(index_path());
    ByteReader r(bytes);
    if (r.get_raw(4) != std::string_view(kIndexMagic, 4)) return false;
    if (r.get_u32() != kIndexFormatVersion) return false;
    if (r.get_u64() != snap.version_) return false;
    if (r.get_u64() != log_size_) return false;
    if (r.get_u64() != snap.records_.size()) return false;
    const auto k = r.get_u32();
    if (k != snap.model_->k) return false;
    ClusterLists lists(k);
    for (auto& l : lists) {
      l = std::make_shared<std::vector<std::uint32_t>>(r.get_u64());
      for (auto& p : *l) {
        p = r.get_u32();
        if (p >= snap.records_.size()) return false;
      }
    }
    snap.clusters_ = std::move(lists);
    return true;
  } catch (const Error&) {
    return false;
  }
}

void DataStore::flush_index() {
  std::lock_guard lock(writer_mu_);
  write_index_file(*snapshot());
}

SnapshotPtr DataStore::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return current_;
}

void DataStore::publish(SnapshotPtr next) {
  std::lock_guard lock(snap_mu_);
  current_ = std::move(next);
}

std::optional<DataRecord> DataStore::find(const std::string& sample_id) const {
  std::lock_guard lock(writer_mu_);
  auto it = positions_.find(sample_id);
  if (it == positions_.end()) return std::nullopt;
  return snapshot()->records()[it->second];
}

std::vector<AuditEntry> DataStore::audit_log() const {
  std::lock_guard lock(writer_mu_);
  return audit_;
}

std::size_t DataStore::insert(std::vector<DataRecord> records,
                              std::optional<std::uint64_t> expected_version) {
  std::lock_guard lock(writer_mu_);
  const auto base = snapshot();
  if (expected_version && *expected_version != base->version_) {
    throw Error(ErrorCode::VersionMismatch, "batch prepared for version " +
                                                std::to_string(*expected_version) +
                                                ", store is at " + std::to_string(base->version_));
  }
  if (records.empty()) return 0;

  const ClusterModel* model = base->model_.get();
  std::size_t dim = base->dim_;
  std::unordered_set<std::string_view> ids;
  const auto now = now_micros();
  for (auto& r : records) {
    if (r.sample_id.empty()) throw Error(ErrorCode::InvalidArgument, "record without sample_id");
    if (!ids.insert(r.sample_id).second) {
      throw Error(ErrorCode::DuplicateId, "sample_id '" + r.sample_id + "' repeated within batch");
    }
    if (r.label.bytes.empty()) {
      throw Error(ErrorCode::InvalidArgument, "record '" + r.sample_id + "' has an empty label");
    }
    if (r.embedding.dim() == 0) {
      if (model || !r.raw) {
        throw Error(ErrorCode::DimMismatch, "record '" + r.sample_id + "' has no embedding");
      }
    } else {
      if (dim != 0 && r.embedding.dim() != dim) {
        throw Error(ErrorCode::DimMismatch, "record '" + r.sample_id + "' has dim " +
                                                std::to_string(r.embedding.dim()) +
                                                ", store dim is " + std::to_string(dim));
      }
      if (!r.embedding.all_finite()) {
        throw Error(ErrorCode::NonFiniteValue, "record '" + r.sample_id + "' embedding");
      }
      dim = r.embedding.dim();
    }
    if (r.raw && r.raw->values.size() != RawSample{r.sample_id, r.raw->shape, {}, {}}.flat_size()) {
      throw Error(ErrorCode::ShapeMismatch, "record '" + r.sample_id + "' raw payload size");
    }
    if (r.ingested_at == 0) r.ingested_at = now;
    if (model) {
      r.cluster_id = static_cast<std::int64_t>(nearest_centroid(*model, r.embedding.values));
      r.cluster_model_version = model->version;
    } else {
      r.cluster_id = kUnassigned;
      r.cluster_model_version = 0;
    }
  }

  if (persistent()) {
    const std::string frame = encode_batch(records);
    if (options_.before_write) options_.before_write();
    if (options_.crash_after_bytes) {
      const auto cut = std::min(*options_.crash_after_bytes, frame.size());
      options_.crash_after_bytes.reset();
      write_all(log_fd_, std::string_view(frame).substr(0, cut));
      throw Error(ErrorCode::StorageFailure, "simulated crash mid-batch");
    }
    try {
      write_all(log_fd_, frame);
      if (options_.sync && ::fdatasync(log_fd_) != 0) {
        throw Error(ErrorCode::StorageFailure, "fdatasync failed");
      }
    } catch (...) {
      if (::ftruncate(log_fd_, static_cast<off_t>(log_size_)) != 0) {
        std::cerr << "[datastore] failed to roll back partial batch\n";
      }
      throw;
    }
    log_size_ += frame.size();
  }

  auto next = std::make_shared<StoreSnapshot>(*base);
  TableEditor table(base->records_);
  std::optional<ClusterEditor> clusters;
  if (model) clusters.emplace(base->clusters_);
  std::vector<AuditEntry> replaced;
  for (auto& r : records) {
    auto it = positions_.find(r.sample_id);
    if (it == positions_.end()) {
      const auto pos = static_cast<std::uint32_t>(table.size());
      if (clusters) clusters->add(static_cast<std::size_t>(r.cluster_id), pos);
      positions_.emplace(r.sample_id, pos);
      table.append(std::move(r));
    } else {
      const auto pos = it->second;
      auto& slot = table.at(pos);
      if (clusters) {
        if (slot.cluster_id >= 0) clusters->remove(static_cast<std::size_t>(slot.cluster_id), pos);
        clusters->add(static_cast<std::size_t>(r.cluster_id), pos);
      }
      replaced.push_back(AuditEntry{now, std::move(slot)});
      slot = std::move(r);
    }
  }
  next->records_ = std::move(table).finish();
  if (clusters) next->clusters_ = std::move(*clusters).finish();
  next->dim_ = dim;
  next->commit_seq_ = base->commit_seq_ + 1;
  next->disk_bytes_ = log_size_;

  if (!replaced.empty() && persistent()) {
    std::ofstream out(audit_path(), std::ios::app);
    for (const auto& e : replaced) out << audit_to_json(e).dump() << '\n';
  }
  for (auto& e : replaced) audit_.push_back(std::move(e));
  next->audit_entries_ = audit_.size();
  const auto count = records.size();
  publish(std::move(next));
  return count;
}

ReindexReport DataStore::reindex(std::shared_ptr<const ClusterModel> model, const Reembed& reembed,
                                 const CommitHook& on_commit) {
  if (!model) throw Error(ErrorCode::InvalidArgument, "reindex needs a cluster model");
  std::lock_guard lock(writer_mu_);
  const auto base = snapshot();
  if (model->version <= base->version_) {
    throw Error(ErrorCode::VersionMismatch, "reindex to version " + std::to_string(model->version) +
                                                " does not advance store version " +
                                                std::to_string(base->version_));
  }

  ReindexReport report;
  report.version = model->version;
  TableEditor table(RecordTable{});
  for (std::size_t i = 0; i < base->records_.size(); ++i) {
    DataRecord r = base->records_[i];
    if (reembed) r.embedding = reembed(r);
    if (r.embedding.dim() != model->dim) {
      throw Error(ErrorCode::DimMismatch, "record '" + r.sample_id + "' has dim " +
                                              std::to_string(r.embedding.dim()) +
                                              ", new model dim " + std::to_string(model->dim));
    }
    const auto c = static_cast<std::int64_t>(nearest_centroid(*model, r.embedding.values));
    if (c != r.cluster_id) ++report.changed;
    r.cluster_id = c;
    r.cluster_model_version = model->version;
    table.append(std::move(r));
  }
  report.records = table.size();

  auto next = std::make_shared<StoreSnapshot>(*base);
  next->records_ = std::move(table).finish();
  next->version_ = model->version;
  next->model_ = model;
  next->dim_ = model->dim;
  next->clusters_ = build_cluster_lists(next->records_, model->k);
  next->commit_seq_ = base->commit_seq_ + 1;

  std::string tmp;
  std::uint64_t new_size = 0;
  if (persistent()) {
    std::vector<DataRecord> all;
    all.reserve(next->records_.size());
    next->records_.for_each([&](std::size_t, const DataRecord& r) { all.push_back(r); });
    std::string bytes = encode_log_header(model.get());
    if (!all.empty()) bytes += encode_batch(all);
    new_size = bytes.size();
    tmp = log_path() + ".compact";
    write_file_atomic(tmp, bytes);
    next->disk_bytes_ = new_size;
  }

  if (on_commit) {
    try {
      on_commit(*next);
    } catch (...) {
      if (!tmp.empty()) ::unlink(tmp.c_str());
      throw;
    }
  }

  if (persistent()) {
    std::error_code ec;
    fs::rename(tmp, log_path(), ec);
    if (ec) {
      ::unlink(tmp.c_str());
      throw Error(ErrorCode::StorageFailure, "cannot install compacted log: " + ec.message());
    }
    if (log_fd_ >= 0) ::close(log_fd_);
    log_fd_ = ::open(log_path().c_str(), O_WRONLY | O_APPEND);
    if (log_fd_ < 0) throw Error(ErrorCode::StorageFailure, "cannot reopen log");
    log_size_ = new_size;
    write_index_file(*next);
  }
  publish(std::move(next));
  return report;
}

}  // namespace dmreuse
