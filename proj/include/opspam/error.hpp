#pragma once

#include <stdexcept>
#include <string>

namespace opspam {

// Base class for every error raised by the toolkit. The CLI maps these to
// exit code 1; UsageError maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed corpus layout, unreadable or empty files.
class CorpusError : public Error {
 public:
  CorpusError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Malformed input file (embeddings, model, vocabulary, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or activation during training or inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace opspam
