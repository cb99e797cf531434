#include "pilotwave/cmb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pilotwave/errors.hpp"
#include "pilotwave/rng.hpp"

namespace pilotwave {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

double PrimordialSpectrum::operator()(double k) const {
    double p = amplitude * std::pow(k / k_pivot, tilt - 1.0);
    if (deficit) p *= (*deficit)(k);
    return p;
}

void PrimordialSpectrum::validate() const {
    if (!(amplitude > 0))
        throw std::invalid_argument("PrimordialSpectrum: amplitude must be positive");
    if (!(k_pivot > 0))
        throw std::invalid_argument("PrimordialSpectrum: k_pivot must be positive");
}

double sph_bessel_j(int l, double x) {
    if (l < 0) throw std::invalid_argument("sph_bessel_j: negative order");
    if (x < 0) throw std::invalid_argument("sph_bessel_j: negative argument");
    if (x == 0.0) return l == 0 ? 1.0 : 0.0;
    if (l == 0) return std::sin(x) / x;

    // Small arguments: leading series term x^l/(2l+1)!! with the first
    // correction; avoids the underflow-prone recurrence region.
    if (x < 1e-3 * (l + 1)) {
        double dfact = 1.0;
        for (int i = 1; i <= l; ++i) dfact *= (2.0 * i + 1.0);
        const double xl = std::pow(x, l);
        return xl / dfact * (1.0 - x * x / (2.0 * (2.0 * l + 3.0)));
    }

    if (x > static_cast<double>(l) * 1.5 + 20.0) {
        // Upward recurrence is stable once x dominates the order.
        double jm = std::sin(x) / x;
        double j0 = jm / x - std::cos(x) / x;
        for (int i = 1; i < l; ++i) {
            const double jp = (2.0 * i + 1.0) / x * j0 - jm;
            jm = j0;
            j0 = jp;
        }
        return j0;
    }

    // Miller's algorithm: downward recurrence from a padded start order,
    // normalized against j_0.
    const int start = l + 20 +
                      static_cast<int>(std::ceil(std::sqrt(40.0 * (l + 1)))) +
                      static_cast<int>(x);
    double jp = 0.0;
    double jc = 1e-305;
    double result = 0.0;
    for (int i = start; i >= 1; --i) {
        const double jm = (2.0 * i + 1.0) / x * jc - jp;
        jp = jc;
        jc = jm;
        if (i - 1 == l) result = jc;
        // Rescale to dodge overflow; relative values are all that matter.
        if (std::fabs(jc) > 1e250) {
            jc *= 1e-250;
            jp *= 1e-250;
            result *= 1e-250;
        }
    }
    return result * (std::sin(x) / x) / jc;
}

double transfer_value(const TransferSpec& transfer, double k, int l) {
    if (const auto* box = std::get_if<BoxTransfer>(&transfer))
        return (k >= box->k1 && k <= box->k2) ? 1.0 : 0.0;
    const auto& sw = std::get<SachsWolfeTransfer>(transfer);
    return sph_bessel_j(l, k * sw.chi_star);
}

double cl_integral(const PrimordialSpectrum& spectrum, const TransferSpec& transfer,
                   int l, double rel_tol) {
    spectrum.validate();
    if (l < 0) throw std::invalid_argument("cl_integral: negative multipole");
    if (!(rel_tol > 0)) throw std::invalid_argument("cl_integral: rel_tol must be positive");

    double log_lo, log_hi;
    if (const auto* box = std::get_if<BoxTransfer>(&transfer)) {
        if (!(0 < box->k1 && box->k1 < box->k2))
            throw std::invalid_argument("cl_integral: need 0 < k1 < k2");
        log_lo = std::log(box->k1);
        log_hi = std::log(box->k2);
    } else {
        const auto& sw = std::get<SachsWolfeTransfer>(transfer);
        if (!(sw.chi_star > 0))
            throw std::invalid_argument("cl_integral: chi_star must be positive");
        // j_l^2 rises like x^{2l} below the turning point and decays like
        // x^{-2}; this window keeps both truncation tails below ~1e-9.
        const double x_lo = std::max(1e-8, 0.02 * l);
        const double x_hi = std::max(6000.0, 12.0 * l);
        log_lo = std::log(x_lo / sw.chi_star);
        log_hi = std::log(x_hi / sw.chi_star);
    }

    auto integrand = [&](double logk) {
        const double k = std::exp(logk);
        const double t = transfer_value(transfer, k, l);
        return t * t * spectrum(k);
    };

    double error = 0.0;
    double value = 0.0;
    try {
        value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
            integrand, log_lo, log_hi, 18, rel_tol, &error);
    } catch (const std::exception& e) {
        throw QuadratureFailure(std::string("cl_integral: ") + e.what());
    }
    if (!std::isfinite(value))
        throw QuadratureFailure("cl_integral: non-finite result");
    if (std::fabs(value) > 0 && error > 10.0 * rel_tol * std::fabs(value))
        throw QuadratureFailure("cl_integral: tolerance not reached");
    return value / (2.0 * kPi * kPi);
}

double AngularSpectrum::at(int l) const {
    if (l < l_min || l > l_max()) throw std::invalid_argument("AngularSpectrum: l out of range");
    return cl[static_cast<std::size_t>(l - l_min)];
}

void AngularSpectrum::validate() const {
    if (l_min < 0) throw std::invalid_argument("AngularSpectrum: l_min must be >= 0");
    if (cl.empty()) throw std::invalid_argument("AngularSpectrum: empty");
    for (double v : cl)
        if (!(v >= 0) || !std::isfinite(v))
            throw std::invalid_argument("AngularSpectrum: C_l must be finite and >= 0");
}

SkyRealization::SkyRealization(int l_min, int l_max, std::uint64_t seed)
    : l_min_(l_min), l_max_(l_max), seed_(seed) {
    if (l_min < 0 || l_max < l_min) throw std::invalid_argument("SkyRealization: bad l range");
    alm_.resize(static_cast<std::size_t>(l_max - l_min) + 1);
    for (int l = l_min; l <= l_max; ++l)
        alm_[static_cast<std::size_t>(l - l_min)].assign(static_cast<std::size_t>(l) + 1, 0.0);
}

std::complex<double> SkyRealization::alm(int l, int m) const {
    if (l < l_min_ || l > l_max_ || std::abs(m) > l)
        throw std::invalid_argument("SkyRealization: (l, m) out of range");
    if (m >= 0) return alm_[static_cast<std::size_t>(l - l_min_)][static_cast<std::size_t>(m)];
    const std::complex<double> a =
        alm_[static_cast<std::size_t>(l - l_min_)][static_cast<std::size_t>(-m)];
    return (((-m) % 2) ? -1.0 : 1.0) * std::conj(a);
}

std::complex<double>& SkyRealization::alm_ref(int l, int m_nonneg) {
    return alm_[static_cast<std::size_t>(l - l_min_)][static_cast<std::size_t>(m_nonneg)];
}

SkyRealization sample_sky(const AngularSpectrum& cl, std::uint64_t seed) {
    cl.validate();
    SkyRealization sky(cl.l_min, cl.l_max(), seed);
    for (int l = cl.l_min; l <= cl.l_max(); ++l) {
        // Per-l substream: realizations stay deterministic however callers
        // slice the l range.
        GaussianStream gauss(substream(seed, static_cast<std::uint64_t>(l)));
        const double c = cl.at(l);
        const double sd_full = std::sqrt(c);
        const double sd_half = std::sqrt(0.5 * c);
        sky.alm_ref(l, 0) = sd_full * gauss.next();  // m = 0 is real
        for (int m = 1; m <= l; ++m) {
            const double re = sd_half * gauss.next();
            const double im = sd_half * gauss.next();
            sky.alm_ref(l, m) = {re, im};
        }
    }
    return sky;
}

double cl_sky(const SkyRealization& sky, int l) {
    if (l < sky.l_min() || l > sky.l_max())
        throw std::invalid_argument("cl_sky: l out of range");
    double sum = std::norm(sky.alm(l, 0));
    for (int m = 1; m <= l; ++m) sum += 2.0 * std::norm(sky.alm(l, m));
    return sum / (2.0 * l + 1.0);
}

CosmicVarianceCheck cosmic_variance_check(const AngularSpectrum& cl, int l,
                                          int n_realizations, std::uint64_t seed) {
    cl.validate();
    if (n_realizations < 1000)
        throw std::invalid_argument("cosmic_variance_check: need at least 10^3 realizations");
    const double c = cl.at(l);
    if (!(c > 0)) throw std::invalid_argument("cosmic_variance_check: C_l must be positive");

    // Only multipole l matters; draw just its coefficients per realization.
    std::vector<double> estimates(static_cast<std::size_t>(n_realizations));
    const double sd_full = std::sqrt(c);
    const double sd_half = std::sqrt(0.5 * c);
    for (int r = 0; r < n_realizations; ++r) {
        GaussianStream gauss(substream(seed, static_cast<std::uint64_t>(r)));
        double sum = 0.0;
        const double a0 = sd_full * gauss.next();
        sum += a0 * a0;
        for (int m = 1; m <= l; ++m) {
            const double re = sd_half * gauss.next();
            const double im = sd_half * gauss.next();
            sum += 2.0 * (re * re + im * im);
        }
        estimates[static_cast<std::size_t>(r)] = sum / (2.0 * l + 1.0);
    }

    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= n_realizations;
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= (n_realizations - 1);

    CosmicVarianceCheck out;
    out.l = l;
    out.n_realizations = n_realizations;
    out.empirical_ratio = std::sqrt(var) / c;
    out.expected_ratio = std::sqrt(2.0 / (2.0 * l + 1.0));
    // C_l^sky is C_l chi^2_nu / nu, so Var(S^2) = sigma^4 (2 + 12/nu)/n and
    // the delta method gives the standard error of the sample sd.
    const double nu = 2.0 * l + 1.0;
    const double sigma = out.expected_ratio;  // in units of C_l
    out.standard_error = 0.5 * sigma * std::sqrt((2.0 + 12.0 / nu) / n_realizations);
    return out;
}

}  // namespace pilotwave
