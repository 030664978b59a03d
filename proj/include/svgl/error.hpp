#pragma once

#include <stdexcept>
#include <string>

namespace svgl {

/// Broad failure category. The CLI maps each category to its own exit code.
enum class ErrorCategory { config, io, numeric, contract };

const char* to_string(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

/// Invalid configuration values (bad dims, out-of-range parameters).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

/// Tensor extents that do not compose.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::contract, what) {}
};

/// NaN/Inf or a diverged optimisation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

/// API misuse: stale caches, degenerate batches, wrong call order.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorCategory::contract, what) {}
};

/// Pipeline contract violations (frozen encoder mutated, stage order broken,
/// checksum mismatch between stages).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCategory::contract, what) {}
};

/// File-level failures: missing files, bad magic, truncated payloads, versions.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

}  // namespace svgl
