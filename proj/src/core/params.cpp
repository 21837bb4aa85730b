#include "agsv/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agsv/errors.hpp"

namespace agsv {

namespace {

Eigen::Index leading(const ParamTensor& t) {
  return t.shape.empty() ? 1 : static_cast<Eigen::Index>(t.shape.front());
}

Eigen::Index trailing(const ParamTensor& t) {
  const Eigen::Index lead = leading(t);
  return lead == 0 ? 0 : static_cast<Eigen::Index>(t.values.size()) / lead;
}

}  // namespace

Eigen::Map<Matrix> ParamTensor::as_matrix() {
  return {values.data(), leading(*this), trailing(*this)};
}

Eigen::Map<const Matrix> ParamTensor::as_matrix() const {
  return {values.data(), leading(*this), trailing(*this)};
}

Eigen::Map<Vector> ParamTensor::as_vector() {
  return {values.data(), static_cast<Eigen::Index>(values.size())};
}

Eigen::Map<const Vector> ParamTensor::as_vector() const {
  return {values.data(), static_cast<Eigen::Index>(values.size())};
}

ParamTensor& ParamSet::add(std::string name, std::vector<std::size_t> shape, bool exclude) {
  if (contains(name)) throw ParameterError("parameter '" + name + "' already exists");
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  ParamTensor t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  t.values.assign(n, 0.0);
  t.exclude_from_adaptation = exclude;
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

ParamTensor& ParamSet::at(std::string_view name) {
  for (auto& t : tensors_)
    if (t.name == name) return t;
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

const ParamTensor& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const ParamTensor& t) { return t.name == name; });
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& t : tensors_) out.add(t.name, t.shape, t.exclude_from_adaptation);
  return out;
}

void ParamSet::check_aligned(const ParamSet& other) const {
  if (other.size() != size())
    throw ShapeError("parameter sets differ in tensor count: " + std::to_string(size()) + " vs " +
                     std::to_string(other.size()));
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size())
      throw ShapeError("parameter '" + a.name + "' is not aligned with '" + b.name + "'");
  }
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.shape != y.shape || x.values != y.values ||
        x.exclude_from_adaptation != y.exclude_from_adaptation)
      return false;
  }
  return true;
}

}  // namespace agsv
