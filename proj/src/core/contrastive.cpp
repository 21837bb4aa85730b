#include "agsv/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "agsv/errors.hpp"

namespace agsv {

PairLayout::PairLayout(std::size_t n_pairs) : n_pairs_(n_pairs) {
  if (n_pairs == 0) throw ParameterError("pair layout needs at least one pair");
}

PairLayout pair_layout(std::size_t n_pairs) { return PairLayout(n_pairs); }

namespace {

std::size_t checked_pairs(const Matrix& m) {
  const auto rows = static_cast<std::size_t>(m.rows());
  if (rows == 0 || rows % 2 != 0)
    throw ShapeError("paired batch needs an even, non-zero row count, got " + std::to_string(rows));
  if (m.cols() < 1) throw ShapeError("embedding dimension must be >= 1");
  return rows / 2;
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ParameterError("temperature must be finite and > 0");
}

// Unit rows plus the norms they were divided by.
struct Normalized {
  Matrix unit;
  Vector norms;
};

Normalized prepare(const PairedBatch& batch, Normalization mode) {
  const Matrix& z = batch.embeddings();
  Normalized out;
  out.norms = z.rowwise().norm();
  if (mode == Normalization::kAssumeUnit) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      if (std::abs(out.norms(i) - 1.0) > kUnitNormTolerance)
        throw InputError("row " + std::to_string(i) + " is not unit norm (norm " +
                         std::to_string(out.norms(i)) + ")");
    }
    out.unit = z;
    out.norms.setOnes();
    return out;
  }
  out.unit = l2_normalize(z);
  return out;
}

// Row-wise softmax over k != i of the scaled similarities, and the loss terms.
struct Softmax {
  Matrix prob;  // zero on the diagonal
  std::vector<double> per_pair;
};

Softmax softmax_terms(const Matrix& unit, const PairLayout& layout, double temperature) {
  const Matrix logits = (unit * unit.transpose()) / temperature;
  const auto n = static_cast<Eigen::Index>(layout.size());
  Softmax s;
  s.prob = Matrix::Zero(n, n);
  s.per_pair.resize(layout.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) peak = std::max(peak, logits(i, k));
    double sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i) continue;
      const double e = std::exp(logits(i, k) - peak);
      s.prob(i, k) = e;
      sum += e;
    }
    s.prob.row(i) /= sum;
    const auto j = static_cast<Eigen::Index>(layout.partner(static_cast<std::size_t>(i)));
    // -log(exp(l_ij) / sum_k exp(l_ik)) = logsumexp - l_ij; the numerator is
    // one of the summands, so this is >= 0 up to rounding.
    s.per_pair[static_cast<std::size_t>(i)] =
        std::max(0.0, peak + std::log(sum) - logits(i, j));
  }
  return s;
}

LossReport make_report(std::vector<double> per_pair, double temperature) {
  LossReport r;
  double sum = 0.0;
  for (double v : per_pair) sum += v;
  r.total = sum / static_cast<double>(per_pair.size());
  r.per_pair = std::move(per_pair);
  r.temperature = temperature;
  return r;
}

}  // namespace

PairedBatch::PairedBatch(Matrix embeddings)
    : embeddings_(std::move(embeddings)), layout_(checked_pairs(embeddings_)) {
  if (!embeddings_.allFinite()) throw InputError("embedding batch contains non-finite values");
}

Matrix l2_normalize(const Matrix& rows) {
  Matrix out(rows.rows(), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (!(norm > 0.0)) throw NormalizationError(static_cast<std::size_t>(i));
    out.row(i) = rows.row(i) / norm;
  }
  return out;
}

Matrix similarity_matrix(const PairedBatch& batch) {
  const Matrix& z = batch.embeddings();
  Matrix s = z * z.transpose();
  // Enforce exact symmetry regardless of the product kernel.
  return (s + s.transpose()) * 0.5;
}

LossReport nt_xent_loss(const PairedBatch& batch, double temperature, Normalization mode) {
  check_temperature(temperature);
  const Normalized prepared = prepare(batch, mode);
  Softmax s = softmax_terms(prepared.unit, batch.layout(), temperature);
  return make_report(std::move(s.per_pair), temperature);
}

Matrix nt_xent_gradient(const PairedBatch& batch, double temperature, Normalization mode) {
  return nt_xent_loss_and_gradient(batch, temperature, mode).gradient;
}

LossAndGradient nt_xent_loss_and_gradient(const PairedBatch& batch, double temperature,
                                          Normalization mode) {
  check_temperature(temperature);
  const Normalized prepared = prepare(batch, mode);
  const PairLayout& layout = batch.layout();
  Softmax s = softmax_terms(prepared.unit, layout, temperature);

  // dL/ds_ik = (p_ik - [k == partner(i)]) / 2N, with s_ik = u_i.u_k / tau.
  Matrix coeff = std::move(s.prob);
  for (std::size_t i = 0; i < layout.size(); ++i)
    coeff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(layout.partner(i))) -= 1.0;
  const double scale = 1.0 / (static_cast<double>(layout.size()) * temperature);
  const Matrix sym = coeff + coeff.transpose();
  Matrix grad_unit = scale * (sym * prepared.unit);

  Matrix grad(grad_unit.rows(), grad_unit.cols());
  if (mode == Normalization::kAssumeUnit) {
    grad = std::move(grad_unit);
  } else {
    // Through u = z / |z|: dL/dz = (g - u (u.g)) / |z|.
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
      const auto u = prepared.unit.row(i);
      const auto g = grad_unit.row(i);
      grad.row(i) = (g - u * u.dot(g)) / prepared.norms(i);
    }
  }
  return {make_report(std::move(s.per_pair), temperature), std::move(grad)};
}

}  // namespace agsv
