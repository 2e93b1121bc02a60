#ifndef DPETS_ERRORS_HPP
#define DPETS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dpets {

// Invalid hyperparameters, shapes or architectures.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed data handed to an operation (non-finite inputs, bad transitions).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite values produced during a computation.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, long batch_index = -1)
        : std::runtime_error(what), batch_index_(batch_index) {}

    long batch_index() const noexcept { return batch_index_; }

private:
    long batch_index_;
};

// The planner could not score any candidate.
class PlanningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace dpets

#endif
