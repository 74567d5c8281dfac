#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace osmalign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on arguments was violated (bad shapes, out-of-range counts).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure. The message carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed or inconsistent file content. `items` lists the offending
/// record ids (or a short description per problem).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::vector<std::string> items = {})
      : Error(compose(what, items)), items_(std::move(items)) {}

  const std::vector<std::string>& items() const noexcept { return items_; }

 private:
  static std::string compose(const std::string& what, const std::vector<std::string>& items) {
    std::string msg = what;
    if (!items.empty()) {
      msg += ": ";
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) msg += ", ";
        msg += items[i];
      }
    }
    return msg;
  }

  std::vector<std::string> items_;
};

/// Predictions and dataset disagree on the set of annotation ids.
class IdMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace osmalign
