#include "agsv/store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#include <zlib.h>

#include "agsv/detail/binary.hpp"
#include "agsv/errors.hpp"
#include "agsv/image.hpp"
#include "similarity.hpp"

namespace agsv {

EmbeddingStore::EmbeddingStore(EmbeddingStore&& other) noexcept {
  std::unique_lock lock(other.mutex_);
  dim_ = other.dim_;
  ids_ = std::move(other.ids_);
  vectors_ = std::move(other.vectors_);
  metadata_ = std::move(other.metadata_);
  by_id_ = std::move(other.by_id_);
  index_ = std::move(other.index_);
  other.dim_ = 0;
}

EmbeddingStore& EmbeddingStore::operator=(EmbeddingStore&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  dim_ = other.dim_;
  ids_ = std::move(other.ids_);
  vectors_ = std::move(other.vectors_);
  metadata_ = std::move(other.metadata_);
  by_id_ = std::move(other.by_id_);
  index_ = std::move(other.index_);
  other.dim_ = 0;
  return *this;
}

void EmbeddingStore::insert(const std::string& id, std::span<const double> vector,
                            Metadata metadata) {
  if (id.empty()) throw InputError("record id must not be empty");
  if (vector.empty()) throw ShapeError("vector must have at least one component");
  double sq = 0.0;
  for (double v : vector) {
    if (!std::isfinite(v)) throw InputError("vector for '" + id + "' holds non-finite values");
    sq += v * v;
  }
  std::unique_lock lock(mutex_);
  if (by_id_.count(id)) throw DuplicateId(id);
  if (dim_ != 0 && static_cast<int>(vector.size()) != dim_)
    throw ShapeError("vector has dimension " + std::to_string(vector.size()) + ", store has " +
                     std::to_string(dim_));
  if (sq == 0.0) throw NormalizationError(ids_.size());
  const double norm = std::sqrt(sq);
  for (double v : vector) vectors_.push_back(static_cast<float>(v / norm));
  dim_ = static_cast<int>(vector.size());
  by_id_.emplace(id, ids_.size());
  ids_.push_back(id);
  metadata_.push_back(std::move(metadata));
}

std::optional<StoreRecord> EmbeddingStore::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  const std::size_t i = it->second;
  const auto d = static_cast<std::size_t>(dim_);
  return StoreRecord{ids_[i],
                     std::vector<float>(vectors_.begin() + static_cast<std::ptrdiff_t>(i * d),
                                        vectors_.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)),
                     metadata_[i]};
}

bool EmbeddingStore::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return by_id_.count(id) != 0;
}

std::size_t EmbeddingStore::size() const {
  std::shared_lock lock(mutex_);
  return ids_.size();
}

std::optional<int> EmbeddingStore::dim() const {
  std::shared_lock lock(mutex_);
  if (dim_ == 0) return std::nullopt;
  return dim_;
}

std::vector<StoreRecord> EmbeddingStore::records() const {
  std::shared_lock lock(mutex_);
  std::vector<StoreRecord> out;
  out.reserve(ids_.size());
  const auto d = static_cast<std::ptrdiff_t>(dim_);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto begin = vectors_.begin() + static_cast<std::ptrdiff_t>(i) * d;
    out.push_back({ids_[i], std::vector<float>(begin, begin + d), metadata_[i]});
  }
  return out;
}

std::vector<std::vector<double>> EmbeddingStore::vectors() const {
  std::shared_lock lock(mutex_);
  std::vector<std::vector<double>> out;
  out.reserve(ids_.size());
  const auto d = static_cast<std::ptrdiff_t>(dim_);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto begin = vectors_.begin() + static_cast<std::ptrdiff_t>(i) * d;
    out.emplace_back(begin, begin + d);
  }
  return out;
}

std::vector<SearchHit> EmbeddingStore::exact_search(std::span<const double> query,
                                                    std::size_t k) const {
  std::shared_lock lock(mutex_);
  if (ids_.empty()) throw EmptyStore();
  if (k < 1) throw ParameterError("k must be >= 1");
  const std::vector<double> unit = detail::unit_query(query, dim_);
  std::vector<SearchHit> all;
  all.reserve(ids_.size());
  const auto d = static_cast<std::size_t>(dim_);
  for (std::size_t i = 0; i < ids_.size(); ++i)
    all.push_back({ids_[i], detail::cosine(unit, vectors_.data() + i * d)});
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    ranks_before);
  all.resize(take);
  return all;
}

std::shared_ptr<const AnnIndex> EmbeddingStore::build_index(const AnnParams& params) {
  params.validate();
  std::vector<std::string> ids;
  std::vector<float> vectors;
  int dim = 0;
  {
    std::shared_lock lock(mutex_);
    if (ids_.empty()) throw EmptyStore();
    ids = ids_;
    vectors = vectors_;
    dim = dim_;
  }
  auto index = std::make_shared<const AnnIndex>(
      AnnIndex::build(std::move(ids), std::move(vectors), dim, params));
  std::unique_lock lock(mutex_);
  index_ = index;
  return index;
}

std::shared_ptr<const AnnIndex> EmbeddingStore::index() const {
  std::shared_lock lock(mutex_);
  return index_;
}

std::vector<SearchHit> EmbeddingStore::ann_search(std::span<const double> query, std::size_t k,
                                                  std::optional<std::size_t> beam,
                                                  bool strict) const {
  std::shared_ptr<const AnnIndex> index;
  {
    std::shared_lock lock(mutex_);
    if (!index_) throw StaleIndex("no index has been built");
    if (strict && index_->size() != ids_.size())
      throw StaleIndex("index covers " + std::to_string(index_->size()) + " of " +
                       std::to_string(ids_.size()) + " records");
    index = index_;
  }
  return index->search(query, k, beam);
}

StoreStats EmbeddingStore::stats() const {
  std::shared_lock lock(mutex_);
  StoreStats s;
  s.count = ids_.size();
  if (dim_ != 0) s.dim = dim_;
  if (index_) s.index = IndexStatus{index_->params(), index_->size(), index_->size() != ids_.size()};
  return s;
}

// ---- persistence ----

namespace {

constexpr char kMagic[] = "AGDB";

void write_section(detail::ByteWriter& w, const std::vector<std::uint8_t>& payload) {
  w.u64(payload.size());
  w.bytes(payload);
  w.u32(static_cast<std::uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size()))));
}

std::span<const std::uint8_t> read_section(detail::ByteReader& r, const char* what) {
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw CorruptFile(std::string(what) + " section is truncated");
  const auto payload = r.bytes(static_cast<std::size_t>(n));
  const std::uint32_t stored = r.u32();
  const auto actual =
      static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
  if (stored != actual) throw CorruptFile(std::string(what) + " section fails its checksum");
  return payload;
}

}  // namespace

std::vector<std::uint8_t> EmbeddingStore::serialize() const {
  std::shared_lock lock(mutex_);
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kStoreFormatVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u64(ids_.size());

  detail::ByteWriter vec;
  for (float v : vectors_) vec.f32(v);
  write_section(w, vec.buffer());

  detail::ByteWriter ids;
  for (const auto& id : ids_) ids.str(id);
  write_section(w, ids.buffer());

  detail::ByteWriter meta;
  for (const auto& m : metadata_) {
    meta.u32(static_cast<std::uint32_t>(m.size()));
    for (const auto& [key, value] : m) {
      meta.str(key);
      meta.str(value);
    }
  }
  write_section(w, meta.buffer());
  return w.take();
}

EmbeddingStore EmbeddingStore::deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic)
    throw CorruptFile("not a store file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kStoreFormatVersion)
    throw VersionMismatch("store format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kStoreFormatVersion) +
                          ")");
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  if ((count == 0) != (dim == 0)) throw CorruptFile("store header is inconsistent");

  const auto vec = read_section(r, "vector");
  if (dim != 0 && vec.size() / 4 / dim != count) throw CorruptFile("vector section size mismatch");
  if (vec.size() != count * dim * 4) throw CorruptFile("vector section size mismatch");
  detail::ByteReader vr(vec);
  EmbeddingStore s;
  s.dim_ = static_cast<int>(dim);
  s.vectors_.resize(vec.size() / 4);
  for (float& v : s.vectors_) {
    v = vr.f32();
    if (!std::isfinite(v)) throw CorruptFile("vector section holds non-finite values");
  }

  const auto ids = read_section(r, "id");
  detail::ByteReader ir(ids);
  s.ids_.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id = ir.str();
    if (id.empty() || !s.by_id_.emplace(id, s.ids_.size()).second)
      throw CorruptFile("id section holds an empty or repeated id");
    s.ids_.push_back(std::move(id));
  }
  if (ir.remaining() != 0) throw CorruptFile("id section has trailing bytes");

  const auto meta = read_section(r, "metadata");
  detail::ByteReader mr(meta);
  s.metadata_.resize(static_cast<std::size_t>(count));
  for (auto& m : s.metadata_) {
    const std::uint32_t pairs = mr.u32();
    for (std::uint32_t p = 0; p < pairs; ++p) {
      std::string key = mr.str();
      m[std::move(key)] = mr.str();
    }
  }
  if (mr.remaining() != 0) throw CorruptFile("metadata section has trailing bytes");
  if (r.remaining() != 0) throw CorruptFile("trailing bytes after store sections");
  return s;
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write store file " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing store file " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace agsv
