#pragma once

#include <stdexcept>
#include <string>

namespace nowcast {

/// Runtime failure inside the pipeline (bad data, I/O, numerical breakdown).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

inline void require_config(bool ok, const std::string& message) {
  if (!ok) throw UsageError(message);
}

}  // namespace detail
}  // namespace nowcast
