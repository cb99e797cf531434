#ifndef PILOTWAVE_FITTING_HPP
#define PILOTWAVE_FITTING_HPP

#include <array>
#include <cstddef>
#include <functional>

namespace pilotwave {

// Residuals and (analytic) Jacobian of a model with P parameters evaluated
// at sample i: fn(params, i, &r_i, J_i[0..P-1]).
template <std::size_t P>
using ResidualFn =
    std::function<void(const std::array<double, P>&, std::size_t, double*, double*)>;

template <std::size_t P>
struct LmOptions {
    int max_iterations = 200;
    double step_tol = 1e-14;      // relative parameter change
    double gradient_tol = 1e-14;  // infinity norm of J^T r
};

template <std::size_t P>
struct LmResult {
    std::array<double, P> params{};
    double residual_norm = 0.0;  // sqrt(sum r_i^2)
    int iterations = 0;
    bool converged = false;
};

// Levenberg-Marquardt for very small parameter counts; the normal equations
// are solved densely with partial pivoting. Throws FitDiverged when the
// iteration fails to make progress or produces non-finite values.
LmResult<3> levenberg_marquardt3(const ResidualFn<3>& fn, std::size_t n_samples,
                                 const std::array<double, 3>& initial,
                                 const LmOptions<3>& opts = {});

}  // namespace pilotwave

#endif
