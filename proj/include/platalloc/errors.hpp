#pragma once
#include <stdexcept>
#include <string>

namespace platalloc {

/// Input violates a documented precondition (bad plan, out-of-range fraction, ...).
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A formula was evaluated outside its numeric domain.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// An estimand has no usable information (no period with both arms present).
struct EstimandUndefined : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A numerical solve did not produce an admissible answer.
struct SolverFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace platalloc
