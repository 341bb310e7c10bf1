#pragma once

#include <stdexcept>
#include <string>

namespace nusg {

/// Argument outside the documented domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A declared property (monotonicity, class membership) was contradicted by sampling.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A user-supplied function returned NaN or infinity.
class EvaluationError : public std::runtime_error {
public:
    EvaluationError(const std::string& what, double input)
        : std::runtime_error(what), input_(input) {}
    double input() const noexcept { return input_; }

private:
    double input_;
};

/// Missing or inconsistent configuration (absent constants, out-of-box parameters).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite derivative or state during integration.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double time)
        : std::runtime_error(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace nusg
