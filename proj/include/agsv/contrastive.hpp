#pragma once

// NT-Xent contrastive objective over a batch of 2N embeddings laid out so
// that rows i and i+N are the two views of one source image.

#include <cstddef>
#include <vector>

#include "agsv/linalg.hpp"

namespace agsv {

/// Involution i <-> i+N with no fixed points.
class PairLayout {
 public:
  explicit PairLayout(std::size_t n_pairs);

  std::size_t n_pairs() const noexcept { return n_pairs_; }
  std::size_t size() const noexcept { return 2 * n_pairs_; }
  std::size_t partner(std::size_t i) const noexcept {
    return i < n_pairs_ ? i + n_pairs_ : i - n_pairs_;
  }

 private:
  std::size_t n_pairs_;
};

/// Throws ParameterError when n_pairs is zero.
PairLayout pair_layout(std::size_t n_pairs);

/// 2N finite embeddings of a common dimension D >= 1, one per row.
class PairedBatch {
 public:
  /// Throws ShapeError on an odd or empty row count, InputError on any
  /// non-finite entry.
  explicit PairedBatch(Matrix embeddings);

  const Matrix& embeddings() const noexcept { return embeddings_; }
  std::size_t n_pairs() const noexcept { return layout_.n_pairs(); }
  std::size_t size() const noexcept { return layout_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(embeddings_.cols()); }
  const PairLayout& layout() const noexcept { return layout_; }

 private:
  Matrix embeddings_;
  PairLayout layout_;
};

struct LossReport {
  double total = 0.0;             // mean over the 2N ordered positive pairs
  std::vector<double> per_pair;   // l_{i, partner(i)} for every row i
  double temperature = 0.0;
};

enum class Normalization {
  kDefensive,   // l2-normalize inside the loss; gradient flows through it
  kAssumeUnit,  // inputs must already be unit norm; raw dot products are used
};

/// Tolerance on |norm - 1| accepted by Normalization::kAssumeUnit.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Row-wise unit normalization. Throws NormalizationError naming the first
/// zero-norm row.
Matrix l2_normalize(const Matrix& rows);

/// Gram matrix of the batch: entry (i, k) = z_i . z_k.
Matrix similarity_matrix(const PairedBatch& batch);

LossReport nt_xent_loss(const PairedBatch& batch, double temperature,
                        Normalization mode = Normalization::kDefensive);

/// d(total)/d(embeddings), same shape as the batch.
Matrix nt_xent_gradient(const PairedBatch& batch, double temperature,
                        Normalization mode = Normalization::kDefensive);

struct LossAndGradient {
  LossReport loss;
  Matrix gradient;
};

LossAndGradient nt_xent_loss_and_gradient(const PairedBatch& batch, double temperature,
                                          Normalization mode = Normalization::kDefensive);

}  // namespace agsv
