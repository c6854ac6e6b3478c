#pragma once

#include <stdexcept>
#include <string>

namespace cantus {

/// Root of the library's exception hierarchy.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad invocation: unknown option, invalid configuration. CLI exit code 1.
struct UsageError : Error {
  using Error::Error;
};

/// Bad input data: malformed files, misaligned inputs. CLI exit code 2.
struct DataError : Error {
  using Error::Error;
};

}  // namespace cantus
