// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace paca {

// Bad arguments: shape mismatches, out-of-range values, malformed inputs.
struct InvalidInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values produced where finite math was expected.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required artifact (checkpoint, archive, dataset) is absent.
struct MissingPrerequisiteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint/archive deserialization failure.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Duplicate registration in the attack registry.
struct RegistrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace paca
