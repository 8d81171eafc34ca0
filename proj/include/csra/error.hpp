#pragma once

#include <stdexcept>
#include <string>

namespace csra {

/// Base class for all library errors. `code()` is a stable, machine-parseable
/// identifier used by the CLI as the error-line prefix.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Bad numeric input (non-finite values, out-of-range parameters).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("E_VALIDATION", what) {}
};

/// Shape or schema disagreement between data and configuration.
class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& what) : Error("E_SCHEMA", what) {}
};

/// Malformed or missing dataset / checkpoint files.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error("E_DATA", what) {}
};

/// Bad configuration keys or values, bad command-line usage.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("E_USAGE", what) {}
};

/// Non-finite loss during training.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what) : Error("E_DIVERGENCE", what) {}
};

}  // namespace csra
