#pragma once

#include <stdexcept>
#include <string>

namespace tinytrain {

// Bad shapes, malformed files, invalid configuration. Mapped to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem and format failures. Mapped to CLI exit code 1.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or gradients during optimization. Carries the loss trace
// recorded up to the point of failure (CSV, "step,lr,train_loss").
// Mapped to CLI exit code 2.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what, std::string trace_csv = "")
      : std::runtime_error(what), trace_csv_(std::move(trace_csv)) {}

  const std::string& trace_csv() const { return trace_csv_; }

 private:
  std::string trace_csv_;
};

}  // namespace tinytrain
