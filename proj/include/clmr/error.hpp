#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace clmr {

/// Broad failure class; the CLI maps each kind to an exit code.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Bad input data: OOV characters, malformed files, empty corpora.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// NaN/Inf values, diverged training, degenerate statistics.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// A shape precondition of a tensor op was violated.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class OovError : public DataError {
 public:
  OovError(char32_t codepoint, std::size_t offset)
      : DataError(describe(codepoint, offset)), codepoint_(codepoint), offset_(offset) {}

  char32_t codepoint() const noexcept { return codepoint_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  static std::string describe(char32_t cp, std::size_t offset) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "out-of-vocabulary character U+%04X at offset %zu",
                  static_cast<unsigned>(cp), offset);
    return buf;
  }

  char32_t codepoint_;
  std::size_t offset_;
};

enum class CheckpointErrc { bad_magic, unsupported_version, truncated, shape_mismatch, bad_metadata };

inline const char* to_string(CheckpointErrc c) {
  switch (c) {
    case CheckpointErrc::bad_magic: return "bad magic";
    case CheckpointErrc::unsupported_version: return "unsupported version";
    case CheckpointErrc::truncated: return "truncated checkpoint";
    case CheckpointErrc::shape_mismatch: return "shape mismatch";
    case CheckpointErrc::bad_metadata: return "bad metadata";
  }
  return "checkpoint error";
}

class CheckpointError : public DataError {
 public:
  CheckpointError(CheckpointErrc code, const std::string& detail = {})
      : DataError(detail.empty() ? std::string(to_string(code))
                                 : std::string(to_string(code)) + ": " + detail),
        code_(code) {}
  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

}  // namespace clmr
