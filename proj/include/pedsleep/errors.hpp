#pragma once

#include <stdexcept>
#include <string>

namespace pedsleep {

// Bad or inconsistent input data (files, labels, shapes). CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite activations or losses, undefined statistics. CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pedsleep
