#include "pilotwave/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pilotwave/errors.hpp"

namespace pilotwave {

namespace {

constexpr std::size_t P = 3;

// Solve A x = b for a small dense system, in place, partial pivoting.
bool solve3(std::array<std::array<double, P>, P> a, std::array<double, P> b,
            std::array<double, P>& x) {
    for (std::size_t col = 0; col < P; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < P; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        if (std::fabs(a[piv][col]) < 1e-300) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < P; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < P; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t ri = P; ri-- > 0;) {
        double s = b[ri];
        for (std::size_t c = ri + 1; c < P; ++c) s -= a[ri][c] * x[c];
        x[ri] = s / a[ri][ri];
    }
    return true;
}

struct Evaluation {
    double chi2 = 0.0;
    std::array<std::array<double, P>, P> jtj{};
    std::array<double, P> jtr{};
    bool finite = true;
};

Evaluation evaluate(const ResidualFn<P>& fn, std::size_t n,
                    const std::array<double, P>& params) {
    Evaluation ev;
    double r;
    double jac[P];
    for (std::size_t i = 0; i < n; ++i) {
        fn(params, i, &r, jac);
        if (!std::isfinite(r)) {
            ev.finite = false;
            return ev;
        }
        ev.chi2 += r * r;
        for (std::size_t a = 0; a < P; ++a) {
            ev.jtr[a] += jac[a] * r;
            for (std::size_t b = a; b < P; ++b) ev.jtj[a][b] += jac[a] * jac[b];
        }
    }
    for (std::size_t a = 0; a < P; ++a)
        for (std::size_t b = 0; b < a; ++b) ev.jtj[a][b] = ev.jtj[b][a];
    return ev;
}

}  // namespace

LmResult<3> levenberg_marquardt3(const ResidualFn<3>& fn, std::size_t n_samples,
                                 const std::array<double, 3>& initial,
                                 const LmOptions<3>& opts) {
    if (n_samples < P) throw std::invalid_argument("levenberg_marquardt3: too few samples");

    std::array<double, P> params = initial;
    Evaluation ev = evaluate(fn, n_samples, params);
    if (!ev.finite) throw FitDiverged("non-finite residuals at the initial point");

    double lambda = 1e-3;
    bool converged = false;
    int iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        double gmax = 0.0;
        for (double g : ev.jtr) gmax = std::max(gmax, std::fabs(g));
        if (gmax < opts.gradient_tol) {
            converged = true;
            break;
        }

        bool stepped = false;
        for (int tries = 0; tries < 40; ++tries) {
            auto a = ev.jtj;
            for (std::size_t d = 0; d < P; ++d) a[d][d] += lambda * std::max(ev.jtj[d][d], 1e-12);
            std::array<double, P> delta{};
            std::array<double, P> rhs{};
            for (std::size_t d = 0; d < P; ++d) rhs[d] = -ev.jtr[d];
            if (!solve3(a, rhs, delta)) {
                lambda *= 10.0;
                continue;
            }
            std::array<double, P> trial;
            double rel_step = 0.0;
            for (std::size_t d = 0; d < P; ++d) {
                trial[d] = params[d] + delta[d];
                rel_step = std::max(rel_step,
                                    std::fabs(delta[d]) / std::max(1.0, std::fabs(params[d])));
            }
            Evaluation trial_ev = evaluate(fn, n_samples, trial);
            if (trial_ev.finite && trial_ev.chi2 <= ev.chi2) {
                params = trial;
                ev = trial_ev;
                lambda = std::max(lambda * 0.3, 1e-14);
                stepped = true;
                if (rel_step < opts.step_tol) converged = true;
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e14) break;
        }
        if (converged) break;
        if (!stepped) {
            // Cannot improve further; accept if the fit is already consistent.
            converged = true;
            break;
        }
    }

    if (!std::isfinite(ev.chi2)) throw FitDiverged("fit produced non-finite chi^2");
    LmResult<3> out;
    out.params = params;
    out.residual_norm = std::sqrt(ev.chi2);
    out.iterations = iter;
    out.converged = converged;
    return out;
}

}  // namespace pilotwave
