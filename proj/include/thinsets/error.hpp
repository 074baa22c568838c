#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace thinsets {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on the inputs does not hold (mismatched supports, bad ranges, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// An iterative method stopped before reaching its tolerance.
class NumericError : public Error {
public:
    using Error::Error;
};

/// An exhaustive enumeration would exceed its configured budget.
class BudgetExceeded : public Error {
public:
    using Error::Error;
};

/// No exponential tilt reaches the target set. `direction` separates the
/// target from the convex hull of the moment values.
class InfeasibleError : public NumericError {
public:
    InfeasibleError(const std::string& what, std::vector<double> direction)
        : NumericError(what), direction_(std::move(direction)) {}

    [[nodiscard]] const std::vector<double>& direction() const noexcept { return direction_; }

private:
    std::vector<double> direction_;
};

/// The conditioning event was never (or cannot be) observed.
/// `upper_bound` is the rule-of-three bound 3/trials on its probability
/// (0 for exact computations that proved the event empty).
class ZeroAcceptanceError : public Error {
public:
    ZeroAcceptanceError(const std::string& what, double upper_bound)
        : Error(what), upper_bound_(upper_bound) {}

    [[nodiscard]] double upper_bound() const noexcept { return upper_bound_; }

private:
    double upper_bound_;
};

}  // namespace thinsets
