// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace diffsim {

// Base of all diffsim exceptions. Subtypes map to process exit codes in the
// CLI: validation-class errors exit 2, runtime-class errors exit 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform (head counts, token counts, feature dims).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite entries, out-of-range scalars, malformed values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// An all-zero feature row where a direction is required. Carries the row.
class DegenerateFeatureError : public Error {
 public:
  DegenerateFeatureError(const std::string& msg, long row)
      : Error(msg), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

// Invalid metric configuration: unknown backend, site not in the backend's
// published list, kind mismatch, even ensemble, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Model weights absent or unreadable. Carries the path that was expected.
class WeightsError : public Error {
 public:
  WeightsError(const std::string& msg, std::string expected_path)
      : Error(msg + " (expected at: " + expected_path + ")"),
        expected_path_(std::move(expected_path)) {}
  const std::string& expected_path() const { return expected_path_; }

 private:
  std::string expected_path_;
};

// Filesystem failures: unreadable image, unwritable output, disk full.
class IoError : public Error {
 public:
  using Error::Error;
};

// Stored payload fails its checksum or is structurally truncated.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& msg, std::string key)
      : Error(msg + " (cache key: " + key + ")"), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Dataset manifest violates its schema. Carries the offending field path.
class ManifestError : public Error {
 public:
  ManifestError(const std::string& msg, std::string field_path)
      : Error(msg + " (at: " + field_path + ")"),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const { return field_path_; }

 private:
  std::string field_path_;
};

}  // namespace diffsim
