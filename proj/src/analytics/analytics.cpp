#include "agsv/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "agsv/errors.hpp"
#include "agsv/random.hpp"

namespace agsv {

std::vector<std::size_t> ClusterModel::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : assignments) ++sizes[a];
  return sizes;
}

namespace {

using Index = Eigen::Index;

double squared_distance(const Matrix& points, Index i, const Matrix& centroids, Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

// k-means++: first centre uniform, the rest drawn proportional to squared
// distance from the nearest chosen centre.
Matrix seed_centroids(const Matrix& points, std::size_t k, Rng& rng) {
  const Index n = points.rows();
  Matrix centroids(static_cast<Index>(k), points.cols());
  centroids.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      auto& d = nearest[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(points, i, centroids, static_cast<Index>(c - 1)));
      total += d;
    }
    Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= nearest[static_cast<std::size_t>(i)];
        if (target < 0.0 && nearest[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      rng.uniform();
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(static_cast<Index>(c)) = points.row(pick);
  }
  return centroids;
}

// Running means, so a cluster of identical points has exactly that point as
// its centroid. Empty clusters keep their previous centroid.
std::vector<std::size_t> update_centroids(const Matrix& points,
                                          const std::vector<std::size_t>& assignments,
                                          Matrix& centroids) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(centroids.rows()), 0);
  for (Index i = 0; i < points.rows(); ++i) {
    const auto c = assignments[static_cast<std::size_t>(i)];
    const auto n = ++sizes[c];
    if (n == 1)
      centroids.row(static_cast<Index>(c)) = points.row(i);
    else
      centroids.row(static_cast<Index>(c)) +=
          (points.row(i) - centroids.row(static_cast<Index>(c))) / static_cast<double>(n);
  }
  return sizes;
}

double objective_of(const Matrix& points, const ClusterModel& m) {
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i)
    total += squared_distance(points, i, m.centroids,
                              static_cast<Index>(m.assignments[static_cast<std::size_t>(i)]));
  return total;
}

// Single-point transfers: moving x from cluster a to b changes the objective
// by |b|/(|b|+1)*|x-cb|^2 - |a|/(|a|-1)*|x-ca|^2. Lloyd fixpoints can still
// admit such moves. Returns whether any point moved.
bool transfer_pass(const Matrix& points, ClusterModel& m, std::vector<std::size_t>& sizes) {
  bool moved = false;
  for (Index i = 0; i < points.rows(); ++i) {
    auto& a = m.assignments[static_cast<std::size_t>(i)];
    if (sizes[a] < 2) continue;
    const double na = static_cast<double>(sizes[a]);
    const double leave = na / (na - 1.0) * squared_distance(points, i, m.centroids, static_cast<Index>(a));
    std::size_t best = a;
    double best_delta = -1e-12 * std::max(leave, 1e-300);
    for (std::size_t b = 0; b < m.k; ++b) {
      if (b == a) continue;
      const double nb = static_cast<double>(sizes[b]);
      const double delta =
          nb / (nb + 1.0) * squared_distance(points, i, m.centroids, static_cast<Index>(b)) - leave;
      if (delta < best_delta) {
        best_delta = delta;
        best = b;
      }
    }
    if (best == a) continue;
    const auto ra = static_cast<Index>(a), rb = static_cast<Index>(best);
    m.centroids.row(ra) += (m.centroids.row(ra) - points.row(i)) / (na - 1.0);
    m.centroids.row(rb) += (points.row(i) - m.centroids.row(rb)) / (static_cast<double>(sizes[best]) + 1.0);
    --sizes[a];
    ++sizes[best];
    a = best;
    moved = true;
  }
  return moved;
}

ClusterModel lloyd(const Matrix& points, std::size_t k, std::size_t max_iters, Rng& rng) {
  const Index n = points.rows();
  ClusterModel m;
  m.k = k;
  m.centroids = seed_centroids(points, k, rng);
  m.assignments.assign(static_cast<std::size_t>(n), k);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);

  // Nearest centroid per point, ties to the lower index.
  auto assign = [&] {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(points, i, m.centroids, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(points, i, m.centroids, static_cast<Index>(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      auto& a = m.assignments[static_cast<std::size_t>(i)];
      if (a != best) changed = true;
      a = best;
      dist[static_cast<std::size_t>(i)] = best_d;
    }
    return changed;
  };

  assign();
  m.objective_history.push_back(objective_of(points, m));
  std::vector<std::size_t> sizes;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    m.iterations = iter + 1;
    sizes = update_centroids(points, m.assignments, m.centroids);
    // Empty cluster: take over the point farthest from its centroid, unless
    // every candidate already sits on its centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t far = 0;
      double far_d = 0.0;
      for (std::size_t i = 0; i < dist.size(); ++i)
        if (sizes[m.assignments[i]] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      if (far_d <= 0.0) continue;
      m.assignments[far] = c;
      dist[far] = 0.0;
      sizes = update_centroids(points, m.assignments, m.centroids);
    }
    bool changed = assign();
    m.objective_history.push_back(objective_of(points, m));
    if (changed) continue;
    sizes = update_centroids(points, m.assignments, m.centroids);
    if (!transfer_pass(points, m, sizes)) break;
    m.objective_history.push_back(objective_of(points, m));
  }
  sizes = update_centroids(points, m.assignments, m.centroids);
  m.objective = objective_of(points, m);
  m.objective_history.push_back(m.objective);
  m.degenerate = std::count(sizes.begin(), sizes.end(), std::size_t{0}) > 0;
  return m;
}

}  // namespace

ClusterModel kmeans(const Matrix& points, const KMeansConfig& config) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (config.k < 1) throw ParameterError("k must be >= 1");
  if (config.k > n)
    throw ParameterError("k (" + std::to_string(config.k) + ") exceeds the point count (" +
                         std::to_string(n) + ")");
  if (config.restarts < 1) throw ParameterError("restarts must be >= 1");
  if (!points.allFinite()) throw DataError("points hold non-finite values");
  ClusterModel best;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    Rng rng(derive_seed({config.seed, r}));
    ClusterModel m = lloyd(points, config.k, config.max_iters, rng);
    if (r == 0 || m.objective < best.objective) best = std::move(m);
  }
  return best;
}

std::vector<double> outlier_scores(const Matrix& points, const ClusterModel& model,
                                   const std::string& method) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (model.assignments.size() != n || model.centroids.cols() != points.cols())
    throw ShapeError("cluster model was not fitted on these points");
  std::vector<double> scores(n);
  if (method == kCentroidDistance) {
    for (std::size_t i = 0; i < n; ++i)
      scores[i] = (points.row(static_cast<Index>(i)) -
                   model.centroids.row(static_cast<Index>(model.assignments[i])))
                      .norm();
  } else if (method == kMinorityCluster) {
    const auto sizes = model.cluster_sizes();
    for (std::size_t i = 0; i < n; ++i)
      scores[i] = 1.0 - static_cast<double>(sizes[model.assignments[i]]) / static_cast<double>(n);
  } else {
    throw ParameterError("unknown outlier method '" + method + "'");
  }
  return scores;
}

void OutlierConfig::validate() const {
  if (method != kCentroidDistance && method != kMinorityCluster)
    throw ParameterError("unknown outlier method '" + method + "'");
  if (clusters < 1) throw ParameterError("clusters must be >= 1");
  if (!(sigma >= 0.0)) throw ParameterError("sigma must be >= 0");
  if (!(minority_fraction > 0.0 && minority_fraction <= 1.0))
    throw ParameterError("minority_fraction must lie in (0, 1]");
  if (restarts < 1) throw ParameterError("restarts must be >= 1");
  if (threshold && !std::isfinite(*threshold)) throw ParameterError("threshold must be finite");
}

OutlierReport detect_outliers(const Matrix& points, const OutlierConfig& config,
                              std::span<const std::string> ids) {
  config.validate();
  const auto n = static_cast<std::size_t>(points.rows());
  if (n < 10) throw DataError("outlier detection needs at least 10 points, got " + std::to_string(n));
  if (!ids.empty() && ids.size() != n) throw ShapeError("one id per point is required");

  const ClusterModel model = kmeans(points, {config.clusters, config.seed, 300, config.restarts});
  OutlierReport r;
  r.method = config.method;
  r.scores = outlier_scores(points, model, config.method);
  if (config.method == kCentroidDistance) {
    double mean = 0.0;
    for (double s : r.scores) mean += s;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double s : r.scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(n);
    r.threshold = mean + config.sigma * std::sqrt(var);
    // Equal scores must never flag, even when rounding puts the mean a hair
    // below them.
    const auto [lo, hi] = std::minmax_element(r.scores.begin(), r.scores.end());
    if (*lo == *hi) r.threshold = *hi;
  } else {
    r.threshold = 1.0 - config.minority_fraction;
  }
  if (config.threshold) r.threshold = *config.threshold;
  for (std::size_t i = 0; i < n; ++i)
    if (r.scores[i] > r.threshold) r.flagged.push_back(i);
  r.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) r.ids.push_back(ids.empty() ? std::to_string(i) : ids[i]);
  return r;
}

Projection3D project_3d(const Matrix& input) {
  const Index n = input.rows();
  if (n < 4) throw DataError("projection needs at least 4 points, got " + std::to_string(n));
  if (!input.allFinite()) throw DataError("points hold non-finite values");
  const Index d = std::max<Index>(3, input.cols());
  Matrix points = Matrix::Zero(n, d);
  points.leftCols(input.cols()) = input;

  Projection3D p;
  p.mean = points.colwise().mean().transpose();
  const Matrix centered = points.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DataError("covariance eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = eig.eigenvalues();
  const Eigen::MatrixXd vectors = eig.eigenvectors();
  p.basis.resize(3, d);
  p.explained_variance.resize(3);
  for (Index j = 0; j < 3; ++j) {
    const Index col = d - 1 - j;
    Eigen::VectorXd v = vectors.col(col);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.basis.row(j) = v.transpose();
    p.explained_variance(j) = std::max(0.0, values(col));
  }
  p.discarded_variance = 0.0;
  for (Index j = 0; j < d - 3; ++j) p.discarded_variance += std::max(0.0, values(j));
  p.coordinates = centered * p.basis.transpose();
  return p;
}

double reconstruction_error(const Matrix& input, const Projection3D& projection) {
  const Index d = projection.basis.cols();
  Matrix points = Matrix::Zero(input.rows(), d);
  points.leftCols(input.cols()) = input;
  const Matrix centered = points.rowwise() - projection.mean.transpose();
  const Matrix residual = centered - centered * projection.basis.transpose() * projection.basis;
  return residual.squaredNorm() / static_cast<double>(input.rows());
}

FramePartition partition_frames(const Matrix& frames, KeepGroup keep, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(frames.rows());
  if (n < 2) throw DataError("frame partition needs at least 2 frames");
  const ClusterModel m = kmeans(frames, {2, seed, 300, 4});
  FramePartition p;
  p.degenerate = m.degenerate;
  const std::size_t first = m.assignments[0];
  p.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.labels[i] = m.assignments[i] == first ? 0 : 1;
    p.groups[p.labels[i]].push_back(i);
  }
  const bool second_larger = p.groups[1].size() > p.groups[0].size();
  switch (keep) {
    case KeepGroup::kLarger: p.kept = second_larger ? 1 : 0; break;
    case KeepGroup::kSmaller: p.kept = second_larger ? 0 : 1; break;
    case KeepGroup::kFirst: p.kept = 0; break;
    case KeepGroup::kSecond: p.kept = 1; break;
  }
  return p;
}

std::vector<std::size_t> dedup_frames(const Matrix& frames, double threshold) {
  if (frames.rows() == 0) throw DataError("frame sequence is empty");
  if (!(threshold > -1.0 && threshold < 1.0))
    throw ParameterError("threshold must lie strictly between -1 and 1");
  std::vector<double> norms(static_cast<std::size_t>(frames.rows()));
  for (Index i = 0; i < frames.rows(); ++i) {
    norms[static_cast<std::size_t>(i)] = frames.row(i).norm();
    if (!(norms[static_cast<std::size_t>(i)] > 0.0))
      throw NormalizationError(static_cast<std::size_t>(i));
  }
  std::vector<std::size_t> kept{0};
  for (Index t = 1; t < frames.rows(); ++t) {
    const auto last = static_cast<Index>(kept.back());
    const double cos = frames.row(t).dot(frames.row(last)) /
                       (norms[static_cast<std::size_t>(t)] * norms[static_cast<std::size_t>(last)]);
    if (cos <= threshold) kept.push_back(static_cast<std::size_t>(t));
  }
  return kept;
}

namespace {

BalanceReport finish(std::map<std::string, std::size_t> counts, std::size_t total) {
  if (total == 0) throw DataError("balance report needs at least one label");
  BalanceReport r;
  std::size_t lo = total, hi = 0;
  for (const auto& [label, count] : counts) {
    lo = std::min(lo, count);
    hi = std::max(hi, count);
  }
  r.counts = std::move(counts);
  r.total = total;
  r.imbalance_ratio = static_cast<double>(hi) / static_cast<double>(lo);
  return r;
}

}  // namespace

BalanceReport balance_report(std::span<const std::string> labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  return finish(std::move(counts), labels.size());
}

BalanceReport balance_report(std::span<const std::size_t> assignments) {
  std::map<std::string, std::size_t> counts;
  for (std::size_t a : assignments) ++counts[std::to_string(a)];
  return finish(std::move(counts), assignments.size());
}

std::string outlier_report_jsonl(const OutlierReport& report) {
  std::string out = nlohmann::json{{"method", report.method},
                                   {"threshold", report.threshold},
                                   {"count", report.scores.size()},
                                   {"flagged", report.flagged.size()}}
                        .dump() +
                    "\n";
  std::vector<bool> flag(report.scores.size(), false);
  for (std::size_t i : report.flagged) flag[i] = true;
  for (std::size_t i = 0; i < report.scores.size(); ++i)
    out += nlohmann::json{{"id", report.ids.at(i)}, {"score", report.scores[i]}, {"flagged", flag[i]}}
               .dump() +
           "\n";
  return out;
}

std::string projection_jsonl(const Projection3D& projection, std::span<const std::string> ids,
                             std::span<const std::map<std::string, std::string>> metadata) {
  const auto n = static_cast<std::size_t>(projection.coordinates.rows());
  if (ids.size() != n || (!metadata.empty() && metadata.size() != n))
    throw ShapeError("one id (and metadata entry) per projected point is required");
  const Vector& ev = projection.explained_variance;
  std::string out = nlohmann::json{{"explained_variance", {ev(0), ev(1), ev(2)}},
                                   {"discarded_variance", projection.discarded_variance},
                                   {"count", n}}
                        .dump() +
                    "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = projection.coordinates.row(static_cast<Index>(i));
    nlohmann::json j{{"id", ids[i]}, {"x", row(0)}, {"y", row(1)}, {"z", row(2)}};
    if (!metadata.empty()) j["metadata"] = metadata[i];
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace agsv
