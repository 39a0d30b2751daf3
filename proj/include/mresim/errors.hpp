#pragma once

#include <stdexcept>
#include <string>

namespace mresim {

/// Bad argument, violated precondition, or malformed input data.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CG encountered p^T A p <= 0, so the system is not SPD.
class IndefiniteSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Time stepping hit max_steps before the velocity criterion was met.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, double last_vmax)
        : std::runtime_error(what), last_vmax_(last_vmax) {}

    double last_vmax() const noexcept { return last_vmax_; }

private:
    double last_vmax_;
};

}  // namespace mresim
