// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cxr {

// Base of everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data is wrong. The CLI maps these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// An error anchored at an element path inside an XML document, e.g.
// "/Session/Reports/Report[2]/ReportTime".
class XmlError : public DataError {
 public:
  XmlError(const std::string& what, std::string path)
      : DataError(what + " at " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class MalformedXml : public XmlError {
 public:
  using XmlError::XmlError;
};

class SchemaViolation : public XmlError {
 public:
  using XmlError::XmlError;
};

class BadTimestamp : public XmlError {
 public:
  using XmlError::XmlError;
};

// Errors carrying the 1-based line number of the offending record.
class LineError : public DataError {
 public:
  LineError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MalformedLine : public LineError {
 public:
  using LineError::LineError;
};

class DuplicateStudyUid : public LineError {
 public:
  using LineError::LineError;
};

class CorruptLog : public LineError {
 public:
  using LineError::LineError;
};

class HeaderMismatch : public LineError {
 public:
  explicit HeaderMismatch(const std::string& what) : LineError(what, 1) {}
};

class BadValue : public DataError {
 public:
  BadValue(std::size_t row, std::string column, const std::string& value)
      : DataError("bad value '" + value + "' in column '" + column + "' (row " +
                  std::to_string(row) + ")"),
        row_(row),
        column_(std::move(column)) {}
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

// A named field or key is the problem.
class KeyedError : public DataError {
 public:
  KeyedError(const std::string& what, std::string key)
      : DataError(what + ": " + key), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class EmptyWhitelist : public DataError {
 public:
  EmptyWhitelist() : DataError("service id whitelist is empty") {}
};

class UnscoredStudy : public KeyedError {
 public:
  explicit UnscoredStudy(std::string uid) : KeyedError("study has no PA probability", std::move(uid)) {}
};

class DuplicateKey : public KeyedError {
 public:
  explicit DuplicateKey(std::string key) : KeyedError("duplicate key", std::move(key)) {}
};

class BadPattern : public KeyedError {
 public:
  BadPattern(const std::string& why, std::string pattern)
      : KeyedError("bad keyword pattern (" + why + ")", std::move(pattern)) {}
};

class ConfigError : public KeyedError {
 public:
  ConfigError(std::string field, const std::string& why)
      : KeyedError("config error (" + why + ")", std::move(field)) {}
  const std::string& field() const noexcept { return key(); }
};

class UnknownObservation : public KeyedError {
 public:
  explicit UnknownObservation(std::string name) : KeyedError("unknown observation", std::move(name)) {}
};

class MissingObservation : public KeyedError {
 public:
  explicit MissingObservation(std::string name) : KeyedError("missing observation", std::move(name)) {}
};

class UnknownUid : public KeyedError {
 public:
  explicit UnknownUid(std::string uid) : KeyedError("unknown study uid", std::move(uid)) {}
};

class LengthMismatch : public DataError {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : DataError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class SingleClass : public DataError {
 public:
  SingleClass() : DataError("AUC needs both positive and negative truth values") {}
};

class EmptyInput : public DataError {
 public:
  explicit EmptyInput(const std::string& what) : DataError("empty input: " + what) {}
};

class TooFewSamples : public DataError {
 public:
  explicit TooFewSamples(std::size_t n)
      : DataError("bootstrap needs at least 2 samples, got " + std::to_string(n)) {}
};

class DegenerateInput : public DataError {
 public:
  using DataError::DataError;
};

class KeyMismatch : public DataError {
 public:
  KeyMismatch(std::vector<std::string> missing, std::vector<std::string> extra)
      : DataError("study uid sets differ (" + std::to_string(missing.size()) + " missing, " +
                  std::to_string(extra.size()) + " extra)"),
        missing_(std::move(missing)),
        extra_(std::move(extra)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }
  const std::vector<std::string>& extra() const noexcept { return extra_; }

 private:
  std::vector<std::string> missing_;
  std::vector<std::string> extra_;
};

// Review store errors.
class StoreWriteFailed : public Error {
 public:
  using Error::Error;
};

class NotFound : public KeyedError {
 public:
  explicit NotFound(std::string id) : KeyedError("no such review item", std::move(id)) {}
};

class AlreadyResolved : public KeyedError {
 public:
  explicit AlreadyResolved(std::string id) : KeyedError("review item already resolved", std::move(id)) {}
};

class InvariantViolation : public DataError {
 public:
  using DataError::DataError;
};

class BindFailed : public Error {
 public:
  using Error::Error;
};

// Pipeline stage aborted. The CLI maps this to exit code 3.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace cxr
