#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace surfelio {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Removal of statistics that were never merged, or of more points than a node holds.
class InvalidRemoval : public Error {
 public:
  using Error::Error;
};

class InsufficientPoints : public Error {
 public:
  using Error::Error;
};

class DegenerateSurfel : public Error {
 public:
  using Error::Error;
};

/// A timestamp falls outside the interval covered by the available data.
class OutOfRange : public Error {
 public:
  using Error::Error;
};

class DataGap : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace surfelio
