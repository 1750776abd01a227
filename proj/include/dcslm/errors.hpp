#pragma once

#include <stdexcept>
#include <string>

namespace dcslm {

// Caller supplied something that violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file content. line() is 1-based, 0 when not line oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// An input file does not exist or cannot be opened.
class FileMissing : public std::runtime_error {
 public:
  explicit FileMissing(const std::string& path) : std::runtime_error("cannot open " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dcslm
