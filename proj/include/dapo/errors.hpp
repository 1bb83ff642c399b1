#pragma once

#include <stdexcept>
#include <string>

namespace dapo {

// Input outside the mathematical domain of an operation (negative entry
// fed to a log map, broken simplex constraint, absolute-continuity
// violation, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid run / schedule / experiment configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Linear solve hit a (near-)singular system. Cannot occur for discounted
// MDP systems with gamma < 1, guarded anyway.
struct SingularSystemError : std::runtime_error {
    explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

// Fixed-point iteration exhausted its sweep budget.
struct NonConvergenceError : std::runtime_error {
    explicit NonConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// A loss or iterate became non-finite during optimization.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct IndexError : std::out_of_range {
    explicit IndexError(const std::string& what) : std::out_of_range(what) {}
};

}  // namespace dapo
