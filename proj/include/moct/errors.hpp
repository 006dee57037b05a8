// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moct {

// Dimension/shape violations (matmul mismatch, overlong sequence, non-scalar loss).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values; maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken caller contract (missing gradient, store/kind mismatch, suite mismatch).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint kind mismatch (dense vs MoE); maps to CLI exit code 4.
struct KindError : ContractError {
    explicit KindError(const std::string& msg) : ContractError(msg) {}
};

// Out-of-range index (token id past vocab, bad target position).
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or similar numeric breakdown; maps to CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or malformed checkpoint file.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace moct
