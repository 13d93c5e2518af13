#pragma once

#include <stdexcept>
#include <string>

namespace relprox {

// Error taxonomy, mapped to process exit codes at the CLI boundary:
// config_error -> 2, io_error -> 3, anything else escaping -> 1.
struct invalid_input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct invalid_batch_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when training must stop (non-finite loss or gradients); the trainer
// keeps the last good checkpoint and reports the reason.
struct training_abort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace relprox
