#pragma once

#include <stdexcept>
#include <string>

namespace fbmp {

/// Base of every error raised by the library.  Structural errors map to CLI
/// exit code 3; statistical verdicts are returned in reports, never thrown.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed input, violated precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "argument"; }
};

/// A coefficient returned a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "evaluation"; }
};

/// Grid too coarse for the requested operation.
class ResolutionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "resolution"; }
};

/// Singular or unstable linear algebra.
class SolverError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "solver"; }
};

/// Fixed-point iteration did not converge.
class ConvergenceError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "convergence"; }
};

/// Too few samples for the requested estimate.
class PowerError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "power"; }
};

/// Diffusion coefficient vanishes where it must be inverted.
class DegeneracyError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "degeneracy"; }
};

/// Not enough usable data points for a fit.
class InsufficientDataError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "insufficient_data"; }
};

/// Solution would not fit in the configured memory budget.
class BudgetError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "budget"; }
};

}  // namespace fbmp
