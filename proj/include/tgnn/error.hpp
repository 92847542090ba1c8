#pragma once

#include <stdexcept>
#include <string>

namespace tgnn {

/// Broad failure classes; the CLI maps each to its own exit code.
enum class ErrorKind { Spec, Numeric, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Invalid input, configuration, or precondition violation.
class SpecError : public Error {
public:
    explicit SpecError(const std::string& what) : Error(ErrorKind::Spec, what) {}
};

/// Solver non-convergence, non-finite values, and similar.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace tgnn
