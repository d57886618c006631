#pragma once

#include <stdexcept>
#include <string>

namespace afm {

// Malformed inputs, missing files, bad manifests, insufficient data.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced or received non-finite values.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace afm
