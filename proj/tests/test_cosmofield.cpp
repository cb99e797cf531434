#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "pilotwave/cosmofield.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/rng.hpp"

using namespace pilotwave;

namespace {
const double kPi = 3.14159265358979323846;

CosmoParams radiation_params(double k, double t_f = 4.0) {
    CosmoParams p;
    p.a_i = 1.0;
    p.t_i = 1.0;
    p.t_f = t_f;
    p.k = k;
    p.law = ExpansionLaw::radiation;
    return p;
}
}  // namespace

TEST_CASE("cosmo params: expansion law and wavelength regime") {
    CosmoParams p = radiation_params(2.0, 16.0);
    CHECK(p.scale_factor(1.0) == 1.0);
    CHECK(p.scale_factor(16.0) == doctest::Approx(4.0));
    CHECK(p.mass(4.0) == doctest::Approx(8.0));       // a^3 = 2^3
    CHECK(p.omega(4.0) == doctest::Approx(1.0));      // k/a = 2/2
    CHECK(p.hubble_radius(3.0) == doctest::Approx(6.0));
    // lambda_phys / H^{-1} at t_i = 2 pi a_i / (k * 2 t_i)
    CHECK(p.lambda_over_hubble_at_ti() == doctest::Approx(kPi / 2.0));

    p.law = ExpansionLaw::static_space;
    CHECK(p.scale_factor(16.0) == 1.0);
    CHECK(std::isinf(p.hubble_radius(1.0)));
}

TEST_CASE("static limit reproduces the eigen-expansion over one period") {
    CosmoParams params;
    params.a_i = 1.0;
    params.t_i = 1.0;
    params.t_f = 1.0 + 2.0 * kPi;
    params.k = 1.0;
    params.law = ExpansionLaw::static_space;

    auto psi0 = Superposition::equal_weight_random_phases(Superposition::mode_block(2), 3);
    PsiEvaluator exact(psi0);
    auto rho0 = equilibrium_mode_density(psi0, params);

    auto l2_error = [&](const ModeState& st) {
        double l2 = 0.0;
        const int n = st.grid.n;
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix) {
                const Point2 q{st.grid.node(ix), st.grid.node(iy)};
                l2 += std::norm(st.psi[static_cast<std::size_t>(iy) * n + ix] -
                                exact.psi(q, 2.0 * kPi));
            }
        return std::sqrt(l2) * st.grid.spacing();
    };

    // Full pipeline at a coarse step: second-order splitting error visible.
    StepControl coarse;
    coarse.dt = 2e-3;
    coarse.rho_stride = 4;
    const ModeState st_coarse = evolve_mode(params, psi0, rho0, coarse);
    CHECK(l2_error(st_coarse) < 1e-5);
    CHECK(xi_of_run(st_coarse) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(st_coarse.psi_norm == doctest::Approx(1.0).epsilon(1e-6));

    // Tight step: matches the constant-coefficient oscillator to 1e-8.
    StepControl tight;
    tight.dt = 1e-4;
    tight.grid_n = 64;
    tight.transport_rho = false;
    const ModeState st_tight = evolve_mode(params, psi0, rho0, tight);
    CHECK(l2_error(st_tight) < 1e-8);
}

TEST_CASE("xi: moment-scaling oracle on a synthetic state") {
    // Gaussian psi and rho contracted by w: xi must equal w^2 up to
    // quadrature roundoff.
    ModeState st;
    st.grid.n = 128;
    st.grid.half_width = 9.0;
    st.rho_stride = 2;
    const int n = st.grid.n;
    st.psi.resize(static_cast<std::size_t>(n) * n);
    const double w = 0.6;
    const int rn = n / 2;
    st.rho.resize(static_cast<std::size_t>(rn) * rn);
    st.rho_valid.assign(st.rho.size(), 1);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const double x = st.grid.node(ix), y = st.grid.node(iy);
            st.psi[static_cast<std::size_t>(iy) * n + ix] =
                std::exp(-0.25 * (x * x + y * y));  // |psi|^2 ~ e^{-r^2/2}
        }
    for (int iy = 0; iy < rn; ++iy)
        for (int ix = 0; ix < rn; ++ix) {
            const double x = st.grid.node(2 * ix), y = st.grid.node(2 * iy);
            st.rho[static_cast<std::size_t>(iy) * rn + ix] =
                std::exp(-0.5 * (x * x + y * y) / (w * w));
        }
    CHECK(xi_of_run(st) == doctest::Approx(w * w).epsilon(1e-10));
}

TEST_CASE("near-identity evolution keeps the contracted width") {
    // Over a very short interval the density cannot relax; xi stays at w^2.
    CosmoParams params = radiation_params(1.0, 1.02);
    CosmoInitial init;
    init.modes_per_axis = 3;
    init.seed = 4;
    init.width_factor = 0.5;
    const Superposition psi0 = init.build_state();
    StepControl ctl;
    ctl.dt = 1e-3;
    // The contracted density has features at half the psi scale; resolve them
    // fully so the mass diagnostic converges.
    ctl.grid_n = 192;
    ctl.rho_stride = 1;
    const ModeState st = evolve_mode(params, psi0, init.build_rho0(params, psi0), ctl);
    CHECK(xi_of_run(st) == doctest::Approx(0.25).epsilon(0.02));
    // The mass diagnostic carries subgrid-quadrature noise near wave nodes.
    CHECK(st.rho_mass == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("super-Hubble mode freezes; equilibrium stays equilibrium") {
    // lambda_phys = 10 H^{-1} at t_i -> k = pi/10.
    CosmoParams params = radiation_params(kPi / 10.0, 4.0);
    CHECK(params.lambda_over_hubble_at_ti() == doctest::Approx(10.0));

    CosmoInitial init;
    init.modes_per_axis = 4;
    init.seed = 11;
    init.width_factor = 0.5;
    const Superposition psi0 = init.build_state();

    const ModeState noneq = evolve_mode(params, psi0, init.build_rho0(params, psi0), {});
    const double xi = xi_of_run(noneq);
    // Final nonequilibrium width strictly below the equilibrium width, and
    // still close to the initial deficit (relaxation is suppressed).
    CHECK(xi < 0.9);
    CHECK(xi > 0.05);

    CosmoInitial eq = init;
    eq.equilibrium = true;
    const ModeState eq_state = evolve_mode(params, psi0, eq.build_rho0(params, psi0), {});
    CHECK(xi_of_run(eq_state) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("norm drift detected when the grid clips the state") {
    CosmoParams params = radiation_params(1.0, 2.0);
    CosmoInitial init;
    init.modes_per_axis = 3;
    init.seed = 1;
    const Superposition psi0 = init.build_state();
    StepControl ctl;
    ctl.grid_n = 16;  // far too coarse for the initial support
    CHECK_THROWS_AS(evolve_mode(params, psi0, init.build_rho0(params, psi0), ctl),
                    NormDrift);
}

TEST_CASE("deficit scan with equilibrium data returns xi = 1 everywhere") {
    CosmoParams tmpl = radiation_params(1.0, 2.0);
    CosmoInitial init;
    init.modes_per_axis = 3;
    init.seed = 9;
    init.equilibrium = true;
    const std::vector<double> ks{0.4, 0.9, 2.0, 4.5, 10.0, 20.0};
    StepControl ctl;
    ctl.rho_stride = 4;
    const DeficitCurve curve = deficit_scan(tmpl, ks, init, ctl);
    REQUIRE(curve.points.size() == ks.size());
    for (const auto& pt : curve.points) {
        CHECK(pt.xi == doctest::Approx(1.0).epsilon(0.01));
        CHECK(pt.lambda_over_hubble > 0);
    }
    // Points come back sorted by k and the regime label is decreasing in k.
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i].k > curve.points[i - 1].k);
        CHECK(curve.points[i].lambda_over_hubble < curve.points[i - 1].lambda_over_hubble);
    }
}

TEST_CASE("fit_deficit: exact recovery and noise robustness") {
    const ArctanDeficit truth{1.0, 0.0, 1.0};
    std::vector<double> ks, xis;
    for (double k : {0.3, 0.8, 1.5, 3.0, 6.0, 12.0, 25.0, 50.0}) {
        ks.push_back(k);
        xis.push_back(truth(k));
    }
    const DeficitFitResult fit = fit_deficit(ks, xis);
    CHECK(fit.params.c1 == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::fabs(fit.params.c2) < 1e-8);
    CHECK(fit.params.c3 == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(fit.residual < 1e-10);

    // 5% oscillatory perturbation: the shape parameters stay in range.
    std::vector<double> noisy = xis;
    for (std::size_t i = 0; i < noisy.size(); ++i)
        noisy[i] *= 1.0 + 0.05 * std::sin(3.0 * static_cast<double>(i));
    const DeficitFitResult nfit = fit_deficit(ks, noisy);
    CHECK(nfit.params.c1 == doctest::Approx(1.0).epsilon(0.35));
    CHECK(nfit.params.c3 == doctest::Approx(1.0).epsilon(0.10));

    // Large-k samples alone pin the asymptote c3.
    const std::vector<double> big_ks{60.0, 90.0, 140.0, 220.0};
    std::vector<double> big_xi;
    for (double k : big_ks) big_xi.push_back(truth(k));
    const DeficitFitResult tail = fit_deficit(big_ks, big_xi);
    CHECK(tail.params.c3 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("evolve_mode input validation") {
    CosmoParams good = radiation_params(1.0);
    CosmoParams bad = good;
    bad.t_f = 0.5;  // t_f < t_i
    CosmoInitial init;
    const Superposition psi0 = init.build_state();
    CHECK_THROWS_AS(evolve_mode(bad, psi0, init.build_rho0(good, psi0), {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(deficit_scan(good, std::vector<double>{1.0, 2.0}, init, {}),
                    std::invalid_argument);
}
