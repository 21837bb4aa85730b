#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "agsv/linalg.hpp"

namespace agsv {

/// A named parameter tensor. Values are stored flat in row-major order.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  // Biases and similar vectors skip layer-wise trust scaling and weight decay.
  bool exclude_from_adaptation = false;

  std::size_t size() const noexcept { return values.size(); }

  /// View as (shape[0] x rest) matrix.
  Eigen::Map<Matrix> as_matrix();
  Eigen::Map<const Matrix> as_matrix() const;
  Eigen::Map<Vector> as_vector();
  Eigen::Map<const Vector> as_vector() const;
};

/// Ordered collection of named tensors. Order is part of the identity: two
/// sets are aligned when names and shapes match position by position.
class ParamSet {
 public:
  ParamTensor& add(std::string name, std::vector<std::size_t> shape, bool exclude = false);

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }

  /// Throws ParameterError when the name is absent.
  ParamTensor& at(std::string_view name);
  const ParamTensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Same names and shapes, all values zero.
  ParamSet zeros_like() const;

  /// Throws ShapeError unless `other` has identical names and shapes.
  void check_aligned(const ParamSet& other) const;

  bool all_finite() const;
  std::size_t total_size() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<ParamTensor> tensors_;
};

}  // namespace agsv
