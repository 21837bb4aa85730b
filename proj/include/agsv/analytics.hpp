#pragma once

// Embedding-space analysis: k-means, outlier scoring, principal-component
// projection to 3D, frame partitioning and de-duplication, and class balance.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agsv/linalg.hpp"

namespace agsv {

struct KMeansConfig {
  std::size_t k = 2;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  std::size_t restarts = 1;  // independent seeded runs; the lowest objective wins
};

struct ClusterModel {
  std::size_t k = 0;
  Matrix centroids;                      // k x D
  std::vector<std::size_t> assignments;  // per point, < k
  double objective = 0.0;                // sum of squared distances to assigned centroids
  std::vector<double> objective_history;  // after each assignment or transfer step of the winning run
  std::size_t iterations = 0;
  // Fewer distinct points than clusters: some cluster could not be given a
  // point and stays empty.
  bool degenerate = false;

  std::vector<std::size_t> cluster_sizes() const;
};

/// Lloyd iterations from k-means++ seeding. Ties in assignment go to the lower
/// cluster index. An empty cluster is reseeded with the point farthest from
/// its centroid. At a Lloyd fixpoint, single-point transfers that lower the
/// objective are applied and iteration resumes. Throws ParameterError (k < 1, k > points, restarts < 1) and
/// DataError on non-finite input.
ClusterModel kmeans(const Matrix& points, const KMeansConfig& config);

inline constexpr const char* kCentroidDistance = "centroid-distance";
inline constexpr const char* kMinorityCluster = "minority-cluster";

/// "centroid-distance": Euclidean distance to the assigned centroid.
/// "minority-cluster": 1 - (size of own cluster / point count).
/// Throws ParameterError on an unknown method, ShapeError if the model does
/// not match the points.
std::vector<double> outlier_scores(const Matrix& points, const ClusterModel& model,
                                   const std::string& method);

struct OutlierConfig {
  std::string method = kCentroidDistance;
  std::size_t clusters = 1;
  double sigma = 3.0;               // centroid-distance: threshold = mean + sigma * stddev
  double minority_fraction = 0.15;  // minority-cluster: flag clusters smaller than this share
  std::uint64_t seed = 0;
  std::size_t restarts = 4;
  std::optional<double> threshold;  // replaces the method's rule when set

  /// Throws ParameterError.
  void validate() const;
};

struct OutlierReport {
  std::string method;
  double threshold = 0.0;
  std::vector<double> scores;        // per point, >= 0
  std::vector<std::size_t> flagged;  // indices with score > threshold, ascending
  std::vector<std::string> ids;      // per point
};

/// Throws DataError with fewer than 10 points. Without ids, points are named
/// by their index.
OutlierReport detect_outliers(const Matrix& points, const OutlierConfig& config,
                              std::span<const std::string> ids = {});

struct Projection3D {
  Vector mean;                  // D (zero-padded to 3 when D < 3)
  Matrix basis;                 // 3 x D, orthonormal rows
  Matrix coordinates;           // n x 3
  Vector explained_variance;    // 3 eigenvalues, non-increasing
  double discarded_variance = 0.0;  // sum of the remaining eigenvalues
};

/// Principal components of the mean-centered covariance (divided by n). Each
/// basis row is signed so that its largest-magnitude entry is positive.
/// Inputs with D < 3 are padded with zero-variance coordinates. Throws
/// DataError with fewer than 4 points.
Projection3D project_3d(const Matrix& points);

/// Mean squared distance between the centered points and their projection
/// onto the basis.
double reconstruction_error(const Matrix& points, const Projection3D& projection);

enum class KeepGroup { kLarger, kSmaller, kFirst, kSecond };

struct FramePartition {
  std::vector<int> labels;  // 0 or 1 per frame; frame 0 is always in group 0
  std::vector<std::size_t> groups[2];  // frame indices in order
  int kept = 0;
  bool degenerate = false;
};

/// Two-way k-means over frame embeddings. Throws DataError with fewer than 2
/// frames.
FramePartition partition_frames(const Matrix& frames, KeepGroup keep = KeepGroup::kLarger,
                                std::uint64_t seed = 0);

/// Greedy scan: frame 0 is kept; frame t is kept iff its cosine similarity to
/// the most recently kept frame is <= threshold. Throws DataError on an empty
/// sequence, ParameterError unless -1 < threshold < 1, NormalizationError on a
/// zero frame.
std::vector<std::size_t> dedup_frames(const Matrix& frames, double threshold);

struct BalanceReport {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  double imbalance_ratio = 1.0;  // max count / min count
};

/// Throws DataError on an empty input.
BalanceReport balance_report(std::span<const std::string> labels);
BalanceReport balance_report(std::span<const std::size_t> assignments);

/// First line {"method","threshold","count"}, then one {"id","score","flagged"}
/// object per point.
std::string outlier_report_jsonl(const OutlierReport& report);
/// First line {"explained_variance","discarded_variance"}, then one
/// {"id","x","y","z"} object per point, plus "metadata" when given.
std::string projection_jsonl(const Projection3D& projection, std::span<const std::string> ids,
                             std::span<const std::map<std::string, std::string>> metadata = {});

}  // namespace agsv
