#ifndef PILOTWAVE_RELAXATION_HPP
#define PILOTWAVE_RELAXATION_HPP

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pilotwave/integrator.hpp"
#include "pilotwave/wavefield.hpp"

namespace pilotwave {

enum class Smoothing { none, overlapping };

// Square box [-L, L]^2 sampled at fine-cell centers, coarse-grained into
// cells of side epsilon. The fine grid must tile the coarse cells exactly.
struct GridSpec {
    double half_width = 8.0;   // L
    int fine_cells = 520;      // per axis
    double coarse_cell = 0.4;  // epsilon
    Smoothing smoothing = Smoothing::none;

    double fine_spacing() const { return 2.0 * half_width / fine_cells; }
    int coarse_per_axis() const;
    int fine_per_coarse() const;
    // Cell volume that normalizes the coarse representation produced by
    // coarse_grain(): epsilon^2 for disjoint cells, fine spacing^2 when the
    // sliding-window smoothing keeps the output at fine stride.
    double coarse_cell_volume() const;
    void validate() const;
};

struct DensityGrid {
    GridSpec spec;
    double t = 0.0;
    std::vector<double> fine;          // row-major, x fastest
    std::vector<std::uint8_t> valid;   // 0 where backtracking failed
    std::vector<double> coarse;        // per spec.smoothing
    std::size_t dropped_points = 0;
    double normalization = 0.0;        // sum over valid cells * spacing^2
    bool drops_flagged = false;        // dropped fraction >= 1e-4
};

struct DecayFit {
    double H0 = 0.0;
    double b = 0.0;
    double c = 0.0;
    double tau = 0.0;  // 2*pi / b
    double residual = 0.0;
};

struct HCurve {
    std::vector<double> times;
    std::vector<double> hbar;
    std::vector<double> err;                 // max pairwise spread across grids
    std::vector<double> l1_to_equilibrium;   // coarse L1 distance on the reference grid
    std::optional<DecayFit> fit;
};

using DensityFn = std::function<double(Point2)>;

// Initial density (1/pi) e^{-(x^2+y^2)/(2 sigma_sq)} ... sigma_sq = 1/2 gives
// the unit Gaussian used in the relaxation runs.
DensityFn gaussian_density(double variance_per_axis = 0.5);
// rho0 = |psi(.,0)|^2 of the given state (the equilibrium fixed point).
DensityFn equilibrium_density(const Superposition& state);

// Pull the initial density forward to time t by backtracking every fine-grid
// node and transporting f = rho0/|psi0|^2 along the trajectory. Nodes whose
// backtracking fails are dropped and excluded from coarse averages; a dropped
// fraction >= 1e-3 throws TooManyDrops, >= 1e-4 sets drops_flagged.
DensityGrid transport_density(const Superposition& state, const DensityFn& rho0,
                              double t, const GridSpec& grid,
                              const IntegratorConfig& cfg = {}, int threads = 0);

// |psi(.,t)|^2 sampled on the same grid (no transport involved).
DensityGrid sample_born_grid(const Superposition& state, double t, const GridSpec& grid);

// Cell means of a fine field; `valid` cells equal to 0 are excluded from the
// averages. Overlapping mode returns sliding-window means at fine stride.
std::vector<double> coarse_grain(const GridSpec& spec, std::span<const double> fine,
                                 std::span<const std::uint8_t> valid = {});

// Coarse-grained H function: sum over cells of rho ln(rho/psi2) * cell_volume,
// with the 0 ln 0 = 0 convention. Throws SupportMismatch where rho > 0 meets
// psi2 = 0.
double hbar(std::span<const double> rho_bar, std::span<const double> psi2_bar,
            double cell_volume);

// L1 distance sum |a-b| * cell_volume between two coarse fields.
double coarse_l1_distance(std::span<const double> a, std::span<const double> b,
                          double cell_volume);

// H-bar time series on grids[0], with err from the spread across all grids
// (>= 2 grids of different resolution, mirroring the multi-grid procedure).
HCurve hcurve(const Superposition& state, const DensityFn& rho0,
              std::span<const double> times, std::span<const GridSpec> grids,
              const IntegratorConfig& cfg = {}, int threads = 0);

// Nonlinear least squares of hbar(t) ~= H0 exp(-b t / 2pi) + c.
DecayFit fit_decay(std::span<const double> times, std::span<const double> hbar_values);
DecayFit fit_decay(const HCurve& curve);

// Density snapshot I/O: little-endian uint32 header length, JSON header
// (spec, t, normalization, dropped count), then row-major float64 payload
// with NaN at dropped cells.
void write_density_grid(const std::string& path, const DensityGrid& grid);
DensityGrid read_density_grid(const std::string& path);

}  // namespace pilotwave

#endif
