// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tlens {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad dimensions, ratios, schedules, malformed flags.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite activations, divergence during training.
struct NumericError : Error {
    using Error::Error;
};

struct TrainError : NumericError {
    TrainError(const std::string& msg, long step) : NumericError(msg), step_index(step) {}
    long step_index;
};

// Checkpoint / dataset / result file problems.
struct IoError : Error {
    using Error::Error;
};

}  // namespace tlens
