#include "pilotwave/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pilotwave/errors.hpp"
#include "pilotwave/fitting.hpp"
#include "pilotwave/parallel.hpp"

namespace pilotwave {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;

double cell_center(const GridSpec& spec, int i) {
    return -spec.half_width + (i + 0.5) * spec.fine_spacing();
}
}  // namespace

int GridSpec::coarse_per_axis() const {
    return static_cast<int>(std::llround(2.0 * half_width / coarse_cell));
}

int GridSpec::fine_per_coarse() const { return fine_cells / coarse_per_axis(); }

double GridSpec::coarse_cell_volume() const {
    if (smoothing == Smoothing::overlapping) {
        const double h = fine_spacing();
        return h * h;
    }
    return coarse_cell * coarse_cell;
}

void GridSpec::validate() const {
    if (!(half_width > 0)) throw std::invalid_argument("GridSpec: half_width must be positive");
    if (fine_cells < 2) throw std::invalid_argument("GridSpec: fine_cells must be >= 2");
    if (!(coarse_cell > 0)) throw std::invalid_argument("GridSpec: coarse_cell must be positive");
    const double n_coarse = 2.0 * half_width / coarse_cell;
    if (std::fabs(n_coarse - std::llround(n_coarse)) > 1e-9)
        throw std::invalid_argument("GridSpec: box width must be a multiple of coarse_cell");
    const int nc = static_cast<int>(std::llround(n_coarse));
    if (fine_cells % nc != 0)
        throw std::invalid_argument("GridSpec: fine grid must divide evenly into coarse cells");
    if (!(coarse_cell > fine_spacing() * (1.0 + 1e-12)))
        throw std::invalid_argument("GridSpec: coarse_cell must exceed the fine spacing");
}

DensityFn gaussian_density(double variance_per_axis) {
    if (!(variance_per_axis > 0))
        throw std::invalid_argument("gaussian_density: variance must be positive");
    const double inv2v = 1.0 / (2.0 * variance_per_axis);
    const double norm = inv2v / kPi;
    return [inv2v, norm](Point2 q) {
        return norm * std::exp(-(q.x * q.x + q.y * q.y) * inv2v);
    };
}

DensityFn equilibrium_density(const Superposition& state) {
    auto field = std::make_shared<PsiEvaluator>(state);
    return [field](Point2 q) { return field->density(q, 0.0); };
}

DensityGrid transport_density(const Superposition& state, const DensityFn& rho0,
                              double t, const GridSpec& grid, const IntegratorConfig& cfg,
                              int threads) {
    grid.validate();
    cfg.validate();

    const int n = grid.fine_cells;
    const std::size_t total = static_cast<std::size_t>(n) * n;
    DensityGrid out;
    out.spec = grid;
    out.t = t;
    out.fine.assign(total, 0.0);
    out.valid.assign(total, 1);

    PsiEvaluator field(state);

    if (t == 0.0) {
        parallel_for(
            total,
            [&](std::size_t begin, std::size_t end) {
                for (std::size_t idx = begin; idx < end; ++idx) {
                    const int ix = static_cast<int>(idx % n);
                    const int iy = static_cast<int>(idx / n);
                    out.fine[idx] = rho0({cell_center(grid, ix), cell_center(grid, iy)});
                }
            },
            threads);
    } else {
        parallel_for(
            total,
            [&](std::size_t begin, std::size_t end) {
                for (std::size_t idx = begin; idx < end; ++idx) {
                    const int ix = static_cast<int>(idx % n);
                    const int iy = static_cast<int>(idx / n);
                    const Point2 q{cell_center(grid, ix), cell_center(grid, iy)};
                    try {
                        const Point2 q0 = integrate(field, q, t, 0.0, cfg, idx);
                        const double w0 = field.density(q0, 0.0);
                        if (w0 < cfg.node_threshold)
                            throw NodeEncountered("backtracked into a node");
                        const double f = rho0(q0) / w0;
                        out.fine[idx] = field.density(q, t) * f;
                    } catch (const NodeEncountered&) {
                        out.valid[idx] = 0;
                    } catch (const StepLimitExceeded&) {
                        out.valid[idx] = 0;
                    }
                }
            },
            threads);
    }

    for (std::size_t idx = 0; idx < total; ++idx)
        if (!out.valid[idx]) ++out.dropped_points;

    const double dropped_fraction =
        static_cast<double>(out.dropped_points) / static_cast<double>(total);
    if (dropped_fraction >= 1e-3)
        throw TooManyDrops("transport_density: dropped fraction " +
                           std::to_string(dropped_fraction));
    out.drops_flagged = dropped_fraction >= 1e-4;

    const double h = grid.fine_spacing();
    double mass = 0.0;
    for (std::size_t idx = 0; idx < total; ++idx)
        if (out.valid[idx]) mass += out.fine[idx];
    out.normalization = mass * h * h;

    out.coarse = coarse_grain(grid, out.fine, out.valid);
    return out;
}

DensityGrid sample_born_grid(const Superposition& state, double t, const GridSpec& grid) {
    grid.validate();
    const int n = grid.fine_cells;
    const std::size_t total = static_cast<std::size_t>(n) * n;
    DensityGrid out;
    out.spec = grid;
    out.t = t;
    out.fine.assign(total, 0.0);
    out.valid.assign(total, 1);

    PsiEvaluator field(state);
    parallel_for(total, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const int ix = static_cast<int>(idx % n);
            const int iy = static_cast<int>(idx / n);
            out.fine[idx] = field.density({cell_center(grid, ix), cell_center(grid, iy)}, t);
        }
    });

    const double h = grid.fine_spacing();
    double mass = 0.0;
    for (double v : out.fine) mass += v;
    out.normalization = mass * h * h;
    out.coarse = coarse_grain(grid, out.fine, out.valid);
    return out;
}

namespace {

std::vector<double> coarse_disjoint(const GridSpec& spec, std::span<const double> fine,
                                    std::span<const std::uint8_t> valid) {
    const int n = spec.fine_cells;
    const int nc = spec.coarse_per_axis();
    const int fpc = spec.fine_per_coarse();
    std::vector<double> out(static_cast<std::size_t>(nc) * nc, 0.0);
    for (int cy = 0; cy < nc; ++cy) {
        for (int cx = 0; cx < nc; ++cx) {
            double sum = 0.0;
            long count = 0;
            for (int j = 0; j < fpc; ++j) {
                const int iy = cy * fpc + j;
                for (int i = 0; i < fpc; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(iy) * n + cx * fpc + i;
                    if (!valid.empty() && !valid[idx]) continue;
                    sum += fine[idx];
                    ++count;
                }
            }
            out[static_cast<std::size_t>(cy) * nc + cx] = count ? sum / count : 0.0;
        }
    }
    return out;
}

// Separable sliding-window sum with window w fine cells, truncated at the
// edges. For even w the window is trailing-biased by half a cell.
std::vector<double> sliding_sum_rows(const std::vector<double>& in, int n, int w) {
    std::vector<double> out(in.size());
    const int lo = -(w - 1) / 2 - ((w % 2 == 0) ? 1 : 0);
    const int hi = (w - 1) / 2;
    for (int row = 0; row < n; ++row) {
        const std::size_t base = static_cast<std::size_t>(row) * n;
        for (int i = 0; i < n; ++i) {
            const int a = std::max(0, i + lo);
            const int b = std::min(n - 1, i + hi);
            double s = 0.0;
            for (int k = a; k <= b; ++k) s += in[base + k];
            out[base + i] = s;
        }
    }
    return out;
}

std::vector<double> transpose(const std::vector<double>& in, int n) {
    std::vector<double> out(in.size());
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i) * n + j] = in[static_cast<std::size_t>(j) * n + i];
    return out;
}

std::vector<double> coarse_overlapping(const GridSpec& spec, std::span<const double> fine,
                                       std::span<const std::uint8_t> valid) {
    const int n = spec.fine_cells;
    const int w = spec.fine_per_coarse();
    std::vector<double> vals(fine.begin(), fine.end());
    std::vector<double> wts(fine.size(), 1.0);
    if (!valid.empty())
        for (std::size_t i = 0; i < fine.size(); ++i)
            if (!valid[i]) {
                vals[i] = 0.0;
                wts[i] = 0.0;
            }

    // out = (box sum of masked values) / (box sum of mask), both separable.
    auto num = transpose(sliding_sum_rows(transpose(sliding_sum_rows(vals, n, w), n), n, w), n);
    auto den = transpose(sliding_sum_rows(transpose(sliding_sum_rows(wts, n, w), n), n, w), n);
    for (std::size_t i = 0; i < num.size(); ++i) num[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
    return num;
}

}  // namespace

std::vector<double> coarse_grain(const GridSpec& spec, std::span<const double> fine,
                                 std::span<const std::uint8_t> valid) {
    spec.validate();
    if (fine.size() != static_cast<std::size_t>(spec.fine_cells) * spec.fine_cells)
        throw std::invalid_argument("coarse_grain: fine array size mismatch");
    if (!valid.empty() && valid.size() != fine.size())
        throw std::invalid_argument("coarse_grain: valid mask size mismatch");
    if (spec.smoothing == Smoothing::overlapping)
        return coarse_overlapping(spec, fine, valid);
    return coarse_disjoint(spec, fine, valid);
}

double hbar(std::span<const double> rho_bar, std::span<const double> psi2_bar,
            double cell_volume) {
    if (rho_bar.size() != psi2_bar.size())
        throw std::invalid_argument("hbar: array size mismatch");
    if (!(cell_volume > 0)) throw std::invalid_argument("hbar: cell_volume must be positive");
    double h = 0.0;
    for (std::size_t i = 0; i < rho_bar.size(); ++i) {
        const double r = rho_bar[i];
        const double w = psi2_bar[i];
        if (r < 0 || w < 0) throw std::invalid_argument("hbar: negative density");
        if (r == 0.0) continue;  // x ln x -> 0
        if (w == 0.0)
            throw SupportMismatch("hbar: rho > 0 on a cell where |psi|^2 vanishes");
        h += r * std::log(r / w);
    }
    return h * cell_volume;
}

double coarse_l1_distance(std::span<const double> a, std::span<const double> b,
                          double cell_volume) {
    if (a.size() != b.size()) throw std::invalid_argument("coarse_l1_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s * cell_volume;
}

HCurve hcurve(const Superposition& state, const DensityFn& rho0,
              std::span<const double> times, std::span<const GridSpec> grids,
              const IntegratorConfig& cfg, int threads) {
    if (grids.size() < 2)
        throw std::invalid_argument("hcurve: need at least two grids for error estimates");
    for (const auto& g : grids) g.validate();
    if (times.empty() || times.front() != 0.0)
        throw std::invalid_argument("hcurve: times must start at 0");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw std::invalid_argument("hcurve: times must be increasing");

    HCurve curve;
    curve.times.assign(times.begin(), times.end());
    curve.hbar.assign(times.size(), 0.0);
    curve.err.assign(times.size(), 0.0);
    curve.l1_to_equilibrium.assign(times.size(), 0.0);

    std::vector<std::vector<double>> h_by_grid(grids.size());
    for (std::size_t g = 0; g < grids.size(); ++g) {
        const GridSpec& spec = grids[g];
        for (std::size_t ti = 0; ti < times.size(); ++ti) {
            const double t = times[ti];
            DensityGrid rho = transport_density(state, rho0, t, spec, cfg, threads);
            DensityGrid eq = sample_born_grid(state, t, spec);
            // Exclude the same dropped cells from the equilibrium average.
            eq.coarse = coarse_grain(spec, eq.fine, rho.valid);
            const double h = hbar(rho.coarse, eq.coarse, spec.coarse_cell_volume());
            h_by_grid[g].push_back(h);
            if (g == 0)
                curve.l1_to_equilibrium[ti] =
                    coarse_l1_distance(rho.coarse, eq.coarse, spec.coarse_cell_volume());
        }
    }

    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        curve.hbar[ti] = h_by_grid[0][ti];
        double spread = 0.0;
        for (std::size_t a = 0; a < grids.size(); ++a)
            for (std::size_t b = a + 1; b < grids.size(); ++b)
                spread = std::max(spread, std::fabs(h_by_grid[a][ti] - h_by_grid[b][ti]));
        curve.err[ti] = spread;
    }
    return curve;
}

DecayFit fit_decay(std::span<const double> times, std::span<const double> hbar_values) {
    if (times.size() != hbar_values.size())
        throw std::invalid_argument("fit_decay: size mismatch");
    if (times.size() < 5) throw std::invalid_argument("fit_decay: need at least 5 points");
    const std::size_t n = times.size();

    // Starting point: residue from the tail, rate from a log-linear slope.
    double cmin = *std::min_element(hbar_values.begin(), hbar_values.end());
    double c0 = std::min(cmin, hbar_values.back());
    double h00 = hbar_values.front() - c0;
    if (h00 <= 0) h00 = std::max(1e-12, std::fabs(hbar_values.front()));
    double b0 = 1.0;
    {
        // Slope of ln(max(y-c0,eps)) vs t/2pi via least squares.
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = times[i] / kTwoPi;
            const double y = std::log(std::max(hbar_values[i] - c0, 1e-12 * (1 + h00)));
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double denom = n * sxx - sx * sx;
        if (std::fabs(denom) > 1e-300) {
            const double slope = (n * sxy - sx * sy) / denom;
            if (slope < -1e-12) b0 = -slope;
        }
    }

    auto residual = [&](const std::array<double, 3>& p, std::size_t i, double* r,
                        double* jac) {
        const double H0 = p[0], b = p[1], c = p[2];
        const double x = times[i] / kTwoPi;
        const double e = std::exp(-b * x);
        *r = H0 * e + c - hbar_values[i];
        jac[0] = e;
        jac[1] = -H0 * x * e;
        jac[2] = 1.0;
    };

    const auto lm = levenberg_marquardt3(residual, n, {h00, b0, c0});
    if (!lm.converged || !std::isfinite(lm.params[1]))
        throw FitDiverged("fit_decay: no convergence");
    DecayFit fit;
    fit.H0 = lm.params[0];
    fit.b = lm.params[1];
    fit.c = lm.params[2];
    if (fit.b == 0.0) throw FitDiverged("fit_decay: zero decay rate");
    fit.tau = kTwoPi / fit.b;
    fit.residual = lm.residual_norm;
    return fit;
}

DecayFit fit_decay(const HCurve& curve) { return fit_decay(curve.times, curve.hbar); }

void write_density_grid(const std::string& path, const DensityGrid& grid) {
    nlohmann::json header;
    header["kind"] = "density_grid";
    header["layout"] = "row-major-float64";
    header["spec"] = {
        {"half_width", grid.spec.half_width},
        {"fine_cells", grid.spec.fine_cells},
        {"coarse_cell", grid.spec.coarse_cell},
        {"smoothing", grid.spec.smoothing == Smoothing::overlapping ? "overlapping" : "none"}};
    header["t"] = grid.t;
    header["normalization"] = grid.normalization;
    header["dropped_points"] = grid.dropped_points;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), hlen);
    std::vector<double> payload = grid.fine;
    for (std::size_t i = 0; i < payload.size(); ++i)
        if (!grid.valid.empty() && !grid.valid[i])
            payload[i] = std::numeric_limits<double>::quiet_NaN();
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write to " + path);
}

DensityGrid read_density_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    const nlohmann::json header = nlohmann::json::parse(htext);

    DensityGrid grid;
    grid.spec.half_width = header.at("spec").at("half_width").get<double>();
    grid.spec.fine_cells = header.at("spec").at("fine_cells").get<int>();
    grid.spec.coarse_cell = header.at("spec").at("coarse_cell").get<double>();
    grid.spec.smoothing = header.at("spec").at("smoothing").get<std::string>() == "overlapping"
                              ? Smoothing::overlapping
                              : Smoothing::none;
    grid.t = header.at("t").get<double>();
    grid.normalization = header.at("normalization").get<double>();
    grid.dropped_points = header.at("dropped_points").get<std::size_t>();

    const std::size_t total =
        static_cast<std::size_t>(grid.spec.fine_cells) * grid.spec.fine_cells;
    grid.fine.assign(total, 0.0);
    in.read(reinterpret_cast<char*>(grid.fine.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw std::runtime_error("short read from " + path);
    grid.valid.assign(total, 1);
    for (std::size_t i = 0; i < total; ++i)
        if (std::isnan(grid.fine[i])) {
            grid.valid[i] = 0;
            grid.fine[i] = 0.0;
        }
    grid.coarse = coarse_grain(grid.spec, grid.fine, grid.valid);
    return grid;
}

}  // namespace pilotwave
