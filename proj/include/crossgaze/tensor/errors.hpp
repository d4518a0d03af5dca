#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crossgaze {

/// Operand shapes that no broadcasting or contraction rule can reconcile.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A serialized artifact (GZT1 tensor, checkpoint, manifest) that cannot be parsed.
/// `offset` is the byte (or line) position where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Missing or inconsistent input data (dataset directories, manifests, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered or a numerical audit threshold exceeded.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crossgaze
