// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace petlab {

// Error taxonomy. The CLI maps ConfigError/InputError families to exit code 2
// and TrainingAbort to exit code 3.

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LengthError : std::length_error {
    using std::length_error::length_error;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Non-finite values or arguments outside a function's mathematical domain.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct SpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace petlab
