#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lowfpr {

/** Base class for every error thrown by this library. */
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ===== Dataset errors =====

class MissingFieldError : public Error {
 public:
  MissingFieldError(std::size_t line, const std::string& field)
      : Error("line " + std::to_string(line) + ": missing field \"" + field + "\""),
        line_(line),
        field_(field) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class DuplicateIdError : public Error {
 public:
  explicit DuplicateIdError(const std::string& id)
      : Error("duplicate example id \"" + id + "\""), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class EmptyDatasetError : public Error {
 public:
  EmptyDatasetError() : Error("dataset contains no examples") {}
};

class LabelOutOfVocabularyError : public Error {
 public:
  LabelOutOfVocabularyError(std::size_t line, const std::string& label)
      : Error("line " + std::to_string(line) + ": label \"" + label +
              "\" is not in the task vocabulary"),
        line_(line),
        label_(label) {}
  std::size_t line() const { return line_; }
  const std::string& label() const { return label_; }

 private:
  std::size_t line_;
  std::string label_;
};

class MalformedLineError : public Error {
 public:
  MalformedLineError(std::size_t line, const std::string& detail)
      : Error("line " + std::to_string(line) + ": " + detail), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ===== Prompting errors =====

class UnsupportedCombinationError : public Error {
 public:
  explicit UnsupportedCombinationError(const std::string& what) : Error(what) {}
};

// ===== Backend errors =====

class BackendUnreachableError : public Error {
 public:
  explicit BackendUnreachableError(const std::string& what) : Error(what) {}
};

class BackendTimeoutError : public Error {
 public:
  explicit BackendTimeoutError(const std::string& what) : Error(what) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& detail) : Error("protocol error: " + detail) {}
};

class CandidateCollisionError : public Error {
 public:
  explicit CandidateCollisionError(const std::string& what) : Error(what) {}
};

// ===== Metrics errors =====

class DegenerateLabelsError : public Error {
 public:
  explicit DegenerateLabelsError(const std::string& what) : Error(what) {}
};

class LengthMismatchError : public Error {
 public:
  explicit LengthMismatchError(const std::string& what) : Error(what) {}
};

class IdMisalignmentError : public Error {
 public:
  explicit IdMisalignmentError(const std::string& what) : Error(what) {}
};

class KeyMismatchError : public Error {
 public:
  explicit KeyMismatchError(const std::string& what) : Error(what) {}
};

class ZeroVarianceError : public Error {
 public:
  explicit ZeroVarianceError(const std::string& what) : Error(what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what) : Error(what) {}
};

// ===== Runner errors =====

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/** A report or plot was requested for a cell that has no stored records. */
class MissingCellError : public Error {
 public:
  explicit MissingCellError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace lowfpr
