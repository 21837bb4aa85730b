#pragma once

// Embedding database: unit-normalized float32 vectors with string ids and
// flat metadata, exact cosine top-k, and a layered proximity-graph index for
// approximate search.
//
// File layout ("AGDB"):
//
//   "AGDB" | u32 version | u32 dim | u64 count |
//   three sections, each u64 byte length | payload | u32 crc32(payload):
//     vectors   count * dim float32, little endian
//     ids       per record: u32 length, UTF-8 bytes
//     metadata  per record: u32 pair count, then (u32 length, key, u32 length, value) pairs

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace agsv {

using Metadata = std::map<std::string, std::string>;

struct StoreRecord {
  std::string id;
  std::vector<float> vector;  // unit norm
  Metadata metadata;

  friend bool operator==(const StoreRecord&, const StoreRecord&) = default;
};

struct SearchHit {
  std::string id;
  double similarity = 0.0;

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Higher similarity first; equal similarities by ascending id.
bool ranks_before(const SearchHit& a, const SearchHit& b);

struct AnnParams {
  std::size_t max_neighbors = 16;  // per node on upper layers; twice this on layer 0
  std::size_t build_beam = 200;
  std::size_t search_beam = 512;
  std::uint64_t seed = 0;

  /// Throws ParameterError.
  void validate() const;

  friend bool operator==(const AnnParams&, const AnnParams&) = default;
};

/// Hierarchical proximity graph over a snapshot of the store. Immutable once
/// built and safe to share across threads.
class AnnIndex {
 public:
  /// Throws EmptyStore on an empty snapshot and ParameterError on bad params.
  static AnnIndex build(std::vector<std::string> ids, std::vector<float> vectors, int dim,
                        const AnnParams& params);

  /// Approximate top-k with exact similarities for the returned ids. beam
  /// defaults to params().search_beam. Throws ParameterError if k < 1 or
  /// k > beam, ShapeError on a dimension mismatch, NormalizationError on a
  /// zero query.
  std::vector<SearchHit> search(std::span<const double> query, std::size_t k,
                                std::optional<std::size_t> beam = std::nullopt) const;

  std::size_t size() const noexcept { return ids_.size(); }
  int dim() const noexcept { return dim_; }
  const AnnParams& params() const noexcept { return params_; }

  // Graph inspection, for tests.
  int top_level() const noexcept { return top_level_; }
  std::size_t entry_point() const noexcept { return entry_; }
  int level_of(std::size_t node) const { return static_cast<int>(links_[node].size()) - 1; }
  const std::vector<std::uint32_t>& neighbors(std::size_t node, int level) const {
    return links_[node][static_cast<std::size_t>(level)];
  }
  std::size_t max_links(int level) const {
    return level == 0 ? 2 * params_.max_neighbors : params_.max_neighbors;
  }
  /// Nodes reachable from the entry point over layer-0 links.
  std::size_t reachable_count() const;

 private:
  AnnIndex() = default;

  const float* row(std::size_t node) const {
    return vectors_.data() + node * static_cast<std::size_t>(dim_);
  }
  float sim(const float* a, const float* b) const;

  struct Candidate {
    float similarity;
    std::uint32_t node;
  };
  std::vector<Candidate> search_layer(const float* query, std::vector<std::uint32_t> entries,
                                      std::size_t beam, int level) const;
  std::vector<std::uint32_t> select_neighbors(const std::vector<Candidate>& candidates,
                                              std::size_t limit) const;
  void insert_node(std::uint32_t node, int level);
  void repair_connectivity();

  std::vector<std::string> ids_;
  std::vector<float> vectors_;
  int dim_ = 0;
  AnnParams params_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> neighbors
  std::size_t entry_ = 0;
  int top_level_ = -1;
};

struct IndexStatus {
  AnnParams params;
  std::size_t snapshot_size = 0;
  bool stale = false;  // the store has grown since the build
};

struct StoreStats {
  std::size_t count = 0;
  std::optional<int> dim;
  std::optional<IndexStatus> index;
};

inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Reader-writer store: any number of concurrent readers or one writer.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(EmbeddingStore&& other) noexcept;
  EmbeddingStore& operator=(EmbeddingStore&& other) noexcept;

  /// Stores the normalized vector. Throws DuplicateId (store unchanged),
  /// NormalizationError on a zero vector, ShapeError on a dimension change,
  /// InputError on non-finite values or an empty id.
  void insert(const std::string& id, std::span<const double> vector, Metadata metadata = {});

  std::optional<StoreRecord> get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::size_t size() const;
  std::optional<int> dim() const;
  /// Copy of every record in insertion order.
  std::vector<StoreRecord> records() const;
  /// Row-per-record copy of the stored vectors, insertion order.
  std::vector<std::vector<double>> vectors() const;

  /// True top-k by cosine similarity. Throws EmptyStore, ParameterError
  /// (k < 1), ShapeError, NormalizationError.
  std::vector<SearchHit> exact_search(std::span<const double> query, std::size_t k) const;

  /// Builds an index over the current records and makes it current.
  std::shared_ptr<const AnnIndex> build_index(const AnnParams& params = {});
  std::shared_ptr<const AnnIndex> index() const;

  /// Searches the current index. Throws StaleIndex when no index exists, or
  /// when strict and records were added after the build.
  std::vector<SearchHit> ann_search(std::span<const double> query, std::size_t k,
                                    std::optional<std::size_t> beam = std::nullopt,
                                    bool strict = false) const;

  StoreStats stats() const;

  std::vector<std::uint8_t> serialize() const;
  /// Throws CorruptFile or VersionMismatch.
  static EmbeddingStore deserialize(std::span<const std::uint8_t> bytes);
  /// Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

 private:
  mutable std::shared_mutex mutex_;
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> vectors_;
  std::vector<Metadata> metadata_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::shared_ptr<const AnnIndex> index_;
};

/// One manifest line, either tab-separated "id<TAB>path<TAB>key=value..." or a
/// JSON object {"id": ..., "path": ..., "metadata": {...}}. Blank lines and
/// lines starting with '#' are skipped.
struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest's directory
  Metadata metadata;
};

/// Throws DataError (naming the line) on malformed lines and DuplicateId on
/// repeated ids.
std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir = {});
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace agsv
