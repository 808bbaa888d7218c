#pragma once

#include <stdexcept>
#include <string>

namespace loopsr {

// Base for every error raised by the library. Subclasses map onto the CLI
// exit codes (config 2, missing artifact 3, numerical 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(std::string op, const std::string& detail)
      : Error("non-finite value in '" + op + "': " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(std::string path)
      : Error("missing artifact: " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

enum class FormatErrorKind { kBadMagic, kBadVersion, kTruncated, kMalformed, kIo };

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kBadVersion: return "unsupported version";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kMalformed: return "malformed";
    case FormatErrorKind::kIo: return "i/o failure";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& detail)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace loopsr
