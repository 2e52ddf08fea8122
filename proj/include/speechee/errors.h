#ifndef SPEECHEE_ERRORS_H_
#define SPEECHEE_ERRORS_H_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace speechee {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SerializationError : public Error {
 public:
  using Error::Error;
};

// Strict-mode parse failure; `offset` is the character offset of the first
// offending token.
class MalformedInput : public Error {
 public:
  MalformedInput(std::size_t offset, const std::string &what)
      : Error("malformed input at offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class SchemaViolation : public Error {
 public:
  SchemaViolation(std::vector<std::size_t> lines, const std::string &what)
      : Error(what), lines_(std::move(lines)) {}
  // 1-based line numbers of offending records.
  const std::vector<std::size_t> &lines() const { return lines_; }

 private:
  std::vector<std::size_t> lines_;
};

class MissingMapping : public Error {
 public:
  explicit MissingMapping(std::vector<std::string> types)
      : Error(Describe(types)), types_(std::move(types)) {}
  const std::vector<std::string> &types() const { return types_; }

 private:
  static std::string Describe(const std::vector<std::string> &types) {
    std::string s = "label mapping does not cover:";
    for (const auto &t : types) s += " " + t;
    return s;
  }
  std::vector<std::string> types_;
};

class MismatchedCorpus : public Error {
 public:
  MismatchedCorpus(std::vector<std::string> missing, std::vector<std::string> extra)
      : Error("prediction/gold corpora not aligned (" + std::to_string(missing.size()) +
              " missing, " + std::to_string(extra.size()) + " extra ids)"),
        missing_(std::move(missing)),
        extra_(std::move(extra)) {}
  const std::vector<std::string> &missing() const { return missing_; }
  const std::vector<std::string> &extra() const { return extra_; }

 private:
  std::vector<std::string> missing_, extra_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace speechee

#endif  // SPEECHEE_ERRORS_H_
