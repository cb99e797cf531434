#ifndef PILOTWAVE_ERRORS_HPP
#define PILOTWAVE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pilotwave {

// Base class for all numerical failures raised by this library. Precondition
// violations (bad arguments, malformed configs) throw std::invalid_argument
// instead and are not part of this hierarchy.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// velocity() evaluated where |psi|^2 is below the node threshold.
struct NodeError : Error {
    using Error::Error;
};

// A trajectory hit a node and the jitter retry failed too.
struct NodeEncountered : Error {
    using Error::Error;
};

// The adaptive integrator exceeded its step budget (pathological trajectory).
struct StepLimitExceeded : Error {
    using Error::Error;
};

// Too large a fraction of grid points failed to backtrack.
struct TooManyDrops : Error {
    using Error::Error;
};

// Coarse rho has support where coarse |psi|^2 vanishes.
struct SupportMismatch : Error {
    using Error::Error;
};

// Nonlinear least squares did not converge.
struct FitDiverged : Error {
    using Error::Error;
};

// Wave-function norm drifted beyond tolerance during grid evolution.
struct NormDrift : Error {
    using Error::Error;
};

// Adaptive quadrature failed to reach the requested tolerance.
struct QuadratureFailure : Error {
    using Error::Error;
};

// Tabulated CDF is not monotone (numerical noise in the density table).
struct TabulationError : Error {
    using Error::Error;
};

}  // namespace pilotwave

#endif
