#pragma once

#include <stdexcept>
#include <string>

namespace patchmeta {

/// Root of every error raised by the library. `kind()` is a stable tag used
/// by the CLI to map failures onto exit-code classes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept = 0;
};

#define PATCHMETA_DEFINE_ERROR(Name, tag)                            \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(what) {}          \
    const char* kind() const noexcept override { return tag; }       \
  }

/// Operand shapes incompatible with an operation.
PATCHMETA_DEFINE_ERROR(ShapeError, "shape");
/// NaN or Inf produced or consumed by an operation.
PATCHMETA_DEFINE_ERROR(NumericFault, "numeric");
/// API used out of contract (backward on untracked scalar, empty step, ...).
PATCHMETA_DEFINE_ERROR(UsageError, "usage");
/// Not enough classes / images / gallery items to satisfy a request.
PATCHMETA_DEFINE_ERROR(CapacityError, "capacity");
/// Invalid configuration value.
PATCHMETA_DEFINE_ERROR(ConfigError, "config");
/// Filesystem failure.
PATCHMETA_DEFINE_ERROR(IoError, "io");
/// Checkpoint or file content failed validation.
PATCHMETA_DEFINE_ERROR(IntegrityError, "integrity");
/// A required artifact (checkpoint) is missing.
PATCHMETA_DEFINE_ERROR(DependencyError, "dependency");

#undef PATCHMETA_DEFINE_ERROR

}  // namespace patchmeta
