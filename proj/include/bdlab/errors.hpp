#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bdlab {

// Shape mismatch between operands.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class SingularityError : public std::runtime_error {
public:
    SingularityError(const std::string& what, double condition_estimate)
        : std::runtime_error(what), condition_estimate_(condition_estimate) {}
    double condition_estimate() const noexcept { return condition_estimate_; }

private:
    double condition_estimate_;
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what, std::int64_t step = -1)
        : std::runtime_error(what), step_(step) {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::int64_t iteration)
        : std::runtime_error(what), iteration_(iteration) {}
    std::int64_t iteration() const noexcept { return iteration_; }

private:
    std::int64_t iteration_;
};

}  // namespace bdlab
