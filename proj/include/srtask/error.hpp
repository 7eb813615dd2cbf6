// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace srtask {

/// Broad failure categories. The C API maps these onto status codes and the
/// CLI onto process exit codes.
enum class ErrorKind {
  Usage,     // bad arguments or configuration
  Data,      // malformed or inconsistent input data
  Io,        // filesystem or subprocess failure
  Contract,  // an external component violated its declared I/O contract
  Numeric,   // divergence, NaN
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace srtask
