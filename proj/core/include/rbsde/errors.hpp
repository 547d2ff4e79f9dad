#pragma once

#include <stdexcept>
#include <string>

namespace rbsde {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user configuration (grid sizes, missing barriers, bad stopping time...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problem data violating a standing assumption, e.g. barrier ordering.
class DataError : public Error {
public:
    using Error::Error;
};

/// A model invariant failed on a sampled point.
class ModelError : public Error {
public:
    using Error::Error;
};

/// A coefficient returned a non-finite value.
class EvaluationError : public Error {
public:
    EvaluationError(std::string coefficient, const std::string& what)
        : Error(what), coefficient_(std::move(coefficient)) {}

    const std::string& coefficient() const noexcept { return coefficient_; }

private:
    std::string coefficient_;
};

/// Precondition of an algorithm not met (e.g. κη ≤ −1 for the adjoint).
class PreconditionError : public Error {
public:
    using Error::Error;
};

}  // namespace rbsde
