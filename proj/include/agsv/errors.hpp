#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace agsv {

// Root of every error raised by the library. Subclasses map one-to-one onto
// the failure kinds callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class AugmentError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  explicit NormalizationError(std::size_t index)
      : Error("zero-norm vector at index " + std::to_string(index)), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class OptimError : public Error {
 public:
  explicit OptimError(std::string layer)
      : Error("non-finite gradient in layer '" + layer + "'"), layer_(std::move(layer)) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate id '" + id + "'"), id_(id) {}

  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class EmptyStore : public Error {
 public:
  EmptyStore() : Error("store is empty") {}
};

class StaleIndex : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

// The service could not bind its listening socket.
class BindError : public Error {
 public:
  using Error::Error;
};

}  // namespace agsv
