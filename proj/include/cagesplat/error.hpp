// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cagesplat {

/// Base class for all errors thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range content in a file we read.
class FormatError : public Error {
public:
    explicit FormatError(const std::string &what) : Error(what) {}
    FormatError(const std::string &what, std::size_t record)
        : Error(what + " (record " + std::to_string(record) + ")"), record_(record), has_record_(true) {}

    bool has_record() const { return has_record_; }
    std::size_t record() const { return record_; }

private:
    std::size_t record_ = 0;
    bool has_record_ = false;
};

/// File-system failures: missing inputs, unwritable outputs.
class IoError : public Error {
public:
    using Error::Error;
};

/// Arguments that violate an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Tensor or grid dimensions that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Solver failures, NaNs and similar numerical breakdowns.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace cagesplat
