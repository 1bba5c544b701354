#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cogload {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or matrix shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument violates a documented precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A class is missing from one side of a stratified split.
class StratificationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// NaN or infinity where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A requested time range is not covered by the data.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. line() is 1-based, 0 when the error is not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
          file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch, const std::string& what)
        : Error("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace cogload
