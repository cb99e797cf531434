#include "pilotwave/typicality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pilotwave/errors.hpp"
#include "pilotwave/parallel.hpp"
#include "pilotwave/rng.hpp"
#include "pilotwave/wavefield.hpp"

namespace pilotwave {

namespace {

constexpr int kTableSize = 8192;

struct CdfTable {
    double lo = 0.0, hi = 0.0, dx = 0.0;
    std::vector<double> cdf;  // cdf[i] at lo + i*dx, normalized to [0,1]

    double invert(double u) const {
        // Binary search then linear interpolation inside the segment.
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        std::size_t i = static_cast<std::size_t>(std::distance(cdf.begin(), it));
        if (i == 0) return lo;
        if (i >= cdf.size()) return hi;
        const double c0 = cdf[i - 1], c1 = cdf[i];
        const double f = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
        return lo + (static_cast<double>(i - 1) + f) * dx;
    }

    // Probability mass of [a, b] by linear interpolation of the CDF.
    double mass(double a, double b) const {
        auto eval = [&](double x) {
            if (x <= lo) return 0.0;
            if (x >= hi) return 1.0;
            const double u = (x - lo) / dx;
            const std::size_t i = static_cast<std::size_t>(u);
            const double f = u - static_cast<double>(i);
            return cdf[i] * (1.0 - f) + cdf[i + 1] * f;
        };
        return eval(b) - eval(a);
    }
};

double support_half_width(const Superposition1D& psi) {
    // Classical turning point of the highest mode plus a generous Gaussian
    // tail; |psi|^p for p >= ~0.5 is negligible beyond this.
    return std::sqrt(2.0 * psi.max_degree() + 1.0) + 8.0;
}

CdfTable tabulate_power_density(const Superposition1D& psi, double exponent) {
    const double L = support_half_width(psi);
    CdfTable table;
    table.lo = -L;
    table.hi = L;
    table.dx = 2.0 * L / (kTableSize - 1);
    table.cdf.resize(kTableSize);

    std::vector<double> dens(kTableSize);
    for (int i = 0; i < kTableSize; ++i) {
        const double q = table.lo + i * table.dx;
        dens[i] = std::pow(psi.abs_psi(q), exponent);
    }
    // Trapezoid cumulative sum.
    table.cdf[0] = 0.0;
    for (int i = 1; i < kTableSize; ++i)
        table.cdf[i] = table.cdf[i - 1] + 0.5 * (dens[i - 1] + dens[i]) * table.dx;
    const double total = table.cdf.back();
    if (!(total > 0) || !std::isfinite(total))
        throw TabulationError("density tabulation has no mass");
    for (double& c : table.cdf) c /= total;
    for (int i = 1; i < kTableSize; ++i)
        if (table.cdf[i] < table.cdf[i - 1])
            throw TabulationError("tabulated CDF is not monotone");
    return table;
}

}  // namespace

Superposition1D Superposition1D::ground() { return {{0}, {1.0}}; }

Superposition1D Superposition1D::single(int mode) { return {{mode}, {1.0}}; }

void Superposition1D::validate() const {
    if (modes.empty() || modes.size() != coeffs.size())
        throw std::invalid_argument("Superposition1D: modes/coeffs size mismatch");
    double norm2 = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (modes[i] < 0) throw std::invalid_argument("Superposition1D: negative mode");
        for (std::size_t j = i + 1; j < modes.size(); ++j)
            if (modes[j] == modes[i])
                throw std::invalid_argument("Superposition1D: duplicate mode");
        norm2 += std::norm(coeffs[i]);
    }
    if (std::fabs(norm2 - 1.0) > 1e-12)
        throw std::invalid_argument("Superposition1D: coefficients not normalized");
}

double Superposition1D::abs_psi(double q) const {
    const int kmax = max_degree();
    std::vector<double> table(static_cast<std::size_t>(kmax) + 1);
    hermite_poly_table(kmax, q, table);
    std::complex<double> s = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i)
        s += coeffs[i] * table[static_cast<std::size_t>(modes[i])];
    return std::abs(s) * std::exp(-0.5 * q * q);
}

int Superposition1D::max_degree() const {
    int k = 0;
    for (int m : modes) k = std::max(k, m);
    return k;
}

void ProductUniverse::validate() const {
    psi.validate();
    if (n < 1) throw std::invalid_argument("ProductUniverse: n must be >= 1");
    if (!(p > 0)) throw std::invalid_argument("ProductUniverse: p must be positive");
}

std::vector<double> sample_universe(const ProductUniverse& universe, std::uint64_t seed) {
    universe.validate();
    const CdfTable table = tabulate_power_density(universe.psi, universe.p);
    std::vector<double> draws(static_cast<std::size_t>(universe.n));
    parallel_for(draws.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto rng = substream(seed, i);
            draws[i] = table.invert(uniform01(rng));
        }
    });
    return draws;
}

double induced_distribution_divergence(std::span<const double> samples,
                                       const Superposition1D& psi,
                                       double target_exponent) {
    if (samples.size() < 1000)
        throw std::invalid_argument(
            "induced_distribution_divergence: need at least 10^3 samples");
    psi.validate();
    if (!(target_exponent > 0))
        throw std::invalid_argument("induced_distribution_divergence: exponent must be > 0");

    const CdfTable table = tabulate_power_density(psi, target_exponent);
    const std::size_t n = samples.size();
    const int bins =
        std::max(8, static_cast<int>(std::lround(2.0 * std::cbrt(static_cast<double>(n)))));
    const double lo = table.lo, hi = table.hi;
    const double bin_w = (hi - lo) / bins;

    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double s : samples) {
        int b = static_cast<int>((s - lo) / bin_w);
        b = std::clamp(b, 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
    }

    double kl = 0.0;
    for (int b = 0; b < bins; ++b) {
        if (!counts[static_cast<std::size_t>(b)]) continue;
        const double p_hat =
            static_cast<double>(counts[static_cast<std::size_t>(b)]) / static_cast<double>(n);
        const double p_target = table.mass(lo + b * bin_w, lo + (b + 1) * bin_w);
        if (p_target <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p_hat * std::log(p_hat / p_target);
    }
    return std::max(kl, 0.0);
}

NestingResult nesting_check(const Superposition1D& first, const Superposition1D& second,
                            int n_samples, std::uint64_t seed) {
    if (n_samples < 1000)
        throw std::invalid_argument("nesting_check: need at least 10^3 samples");
    // |Psi(x,y)|^2 = |psi_a(x)|^2 |psi_b(y)|^2 factorizes, so the joint draw
    // is an independent pair; distinct substreams keep the pair uncorrelated.
    const auto xs = sample_universe({first, n_samples, 2.0}, splitmix64(seed));
    const auto ys = sample_universe({second, n_samples, 2.0}, splitmix64(seed ^ 0x9e3779b9ULL));
    NestingResult out;
    out.kl_first = induced_distribution_divergence(xs, first, 2.0);
    out.kl_second = induced_distribution_divergence(ys, second, 2.0);
    return out;
}

}  // namespace pilotwave
