#ifndef PILOTWAVE_COSMOFIELD_HPP
#define PILOTWAVE_COSMOFIELD_HPP

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pilotwave/deficit.hpp"
#include "pilotwave/relaxation.hpp"
#include "pilotwave/wavefield.hpp"

namespace pilotwave {

enum class ExpansionLaw { radiation, static_space };

// A single field mode on radiation-dominated expanding space is a 2D
// oscillator with mass m = a^3 and angular frequency omega = k/a, where
// a(t) = a_i (t/t_i)^{1/2}. static_space freezes a at a_i for the
// flat-space comparison runs.
struct CosmoParams {
    double a_i = 1.0;
    double t_i = 1.0;
    double t_f = 4.0;
    double k = 1.0;
    ExpansionLaw law = ExpansionLaw::radiation;

    double scale_factor(double t) const;
    double mass(double t) const;        // a^3
    double omega(double t) const;       // k / a
    double hubble_radius(double t) const;  // a / a_dot (infinite when static)
    // lambda_phys / H^{-1} evaluated at t_i (the wavelength-regime label).
    double lambda_over_hubble_at_ti() const;
    // Ground-state length of the instantaneous oscillator, 1/sqrt(m omega).
    double eigenstate_scale(double t) const;

    void validate() const;
};

struct ModeGrid {
    int n = 0;              // points per axis
    double half_width = 0;  // Q; nodes at -Q + i * (2Q/n)
    double spacing() const { return 2.0 * half_width / n; }
    double node(int i) const { return -half_width + i * spacing(); }
};

struct ModeState {
    ModeGrid grid;
    std::vector<std::complex<double>> psi;  // row-major, x fastest
    double t = 0.0;
    double psi_norm = 0.0;  // grid quadrature of |psi|^2

    // Nonequilibrium density on the subgrid of every rho_stride-th node.
    int rho_stride = 1;
    std::vector<double> rho;
    std::vector<std::uint8_t> rho_valid;
    double rho_mass = 0.0;
    std::size_t dropped_points = 0;

    int rho_n() const { return grid.n / rho_stride; }
};

struct StepControl {
    double dt = 0.0;        // 0 = choose from the stiffest oscillation scale
    int grid_n = 0;         // 0 = choose from box size and momentum support
    int rho_stride = 2;     // rho subgrid = psi grid strided by this
    double refine_tol = 0;  // > 0: halve dt until xi and coarse H move less
    int max_refinements = 3;
    int threads = 0;
    bool transport_rho = true;  // false: evolve psi only (diagnostic runs)
};

// Initial densities on the mode plane for a state psi0 given over the
// instantaneous eigenbasis at t_i.
DensityFn equilibrium_mode_density(const Superposition& psi0, const CosmoParams& params);
// Equilibrium shape with coordinates contracted by w (subquantum width w < 1).
DensityFn contracted_mode_density(const Superposition& psi0, const CosmoParams& params,
                                  double w);

// Evolve psi by Strang-split spectral stepping (kinetic in transform space,
// potential in position space, mass and frequency at each step midpoint) and
// transport rho0 by backtracking grid nodes along Im(grad psi / psi) / m(t).
// Throws NormDrift and TooManyDrops.
ModeState evolve_mode(const CosmoParams& params, const Superposition& psi0,
                      const DensityFn& rho0, const StepControl& control = {});

// Variance ratio <r^2>_rho / <r^2>_{|psi|^2} on the final state's subgrid;
// 1 means the mode carries exactly the equilibrium width.
double xi_of_run(const ModeState& final_state);

struct DeficitPoint {
    double k = 0.0;
    double lambda_over_hubble = 0.0;  // at t_i
    double xi = 0.0;
};

struct DeficitCurve {
    std::vector<DeficitPoint> points;
    std::optional<ArctanDeficit> fit;
    double fit_residual = 0.0;
};

struct CosmoInitial {
    int modes_per_axis = 4;  // M = modes_per_axis^2 instantaneous eigenstates
    std::uint64_t seed = 1;
    double width_factor = 0.5;     // w, ignored when equilibrium is set
    bool equilibrium = false;      // rho0 = |psi0|^2
    Superposition build_state() const;
    DensityFn build_rho0(const CosmoParams& params, const Superposition& psi0) const;
};

// xi(k) over the given wavenumbers with shared initial data (same coefficient
// phases and initial width for every k). Deterministic per (seed, k).
DeficitCurve deficit_scan(const CosmoParams& params_template, std::span<const double> ks,
                          const CosmoInitial& initial, const StepControl& control = {});

// Least squares of the arctan deficit form through (k, xi) samples.
struct DeficitFitResult {
    ArctanDeficit params;
    double residual = 0.0;
};
DeficitFitResult fit_deficit(std::span<const double> ks, std::span<const double> xis);
DeficitFitResult fit_deficit(const DeficitCurve& curve);

}  // namespace pilotwave

#endif
