#pragma once

#include <stdexcept>
#include <string>

namespace qlk {

// Error categories surfaced through the C API as status codes.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kConfig = 2,
  kIo = 3,
  kHashMismatch = 4,
  kMissingTables = 5,
  kNotConverged = 6,
  kZeroLikelihood = 7,
  kProtocol = 8,
  kInternal = 99,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};

class MissingTablesError : public Error {
 public:
  explicit MissingTablesError(const std::string& what)
      : Error(ErrorCode::kMissingTables, what) {}
};

class NotConvergedError : public Error {
 public:
  explicit NotConvergedError(const std::string& what)
      : Error(ErrorCode::kNotConverged, what) {}
};

}  // namespace qlk
