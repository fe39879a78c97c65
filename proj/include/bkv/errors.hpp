// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bkv {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration value is invalid (bad dims, l = 0, window too small, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller-side precondition was violated.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// A nested KV layout does not follow the interleaving pattern.
class StructuralError : public Error {
public:
    StructuralError(const std::string& what, std::size_t index)
        : Error(what + " (first offending index " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// A refill selection names an L1 index that does not exist or repeats one.
class SelectionError : public Error {
public:
    using Error::Error;
};

/// Malformed cache or checkpoint bytes.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Retained L1 entries alone no longer fit the working window.
class OverflowError : public Error {
public:
    using Error::Error;
};

/// Live KV entries exceed the configured hard cap (modelled out-of-memory).
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Loss became non-finite during training.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t step)
        : Error(what + " at step " + std::to_string(step)), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace bkv
