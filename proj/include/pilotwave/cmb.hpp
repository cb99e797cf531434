#ifndef PILOTWAVE_CMB_HPP
#define PILOTWAVE_CMB_HPP

#include <complex>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "pilotwave/deficit.hpp"

namespace pilotwave {

// P_R(k) = A (k/k_pivot)^{n_s - 1}, optionally multiplied by the arctan
// deficit xi(k).
struct PrimordialSpectrum {
    double amplitude = 1.0;
    double tilt = 0.96;
    double k_pivot = 0.05;
    std::optional<ArctanDeficit> deficit;

    double operator()(double k) const;
    void validate() const;
};

// T = 1 on [k1, k2], 0 elsewhere; every C_l integral is then analytic for a
// power-law spectrum.
struct BoxTransfer {
    double k1 = 1.0;
    double k2 = 2.718281828459045;
};

// Sachs-Wolfe style toy transfer T(k,l) = j_l(k chi_star).
struct SachsWolfeTransfer {
    double chi_star = 1.0;
};

using TransferSpec = std::variant<BoxTransfer, SachsWolfeTransfer>;

double transfer_value(const TransferSpec& transfer, double k, int l);

// C_l = (1/2pi^2) integral dk/k T^2(k,l) P_R(k), by adaptive Gauss-Kronrod
// on log k to the given relative tolerance. Throws QuadratureFailure.
double cl_integral(const PrimordialSpectrum& spectrum, const TransferSpec& transfer,
                   int l, double rel_tol = 1e-8);

struct AngularSpectrum {
    int l_min = 2;
    std::vector<double> cl;  // cl[i] is C_{l_min + i}

    int l_max() const { return l_min + static_cast<int>(cl.size()) - 1; }
    double at(int l) const;
    void validate() const;
};

// a_lm stored for m >= 0 only; the m < 0 half is fixed by the reality
// constraint a_{l,-m} = (-1)^m conj(a_{lm}).
class SkyRealization {
public:
    SkyRealization(int l_min, int l_max, std::uint64_t seed);

    int l_min() const { return l_min_; }
    int l_max() const { return l_max_; }
    std::uint64_t seed() const { return seed_; }

    std::complex<double> alm(int l, int m) const;
    std::complex<double>& alm_ref(int l, int m_nonneg);

private:
    int l_min_, l_max_;
    std::uint64_t seed_;
    std::vector<std::vector<std::complex<double>>> alm_;  // [l - l_min][m]
};

// Zero-mean Gaussian a_lm with <|a_lm|^2> = C_l, independent across (l,m) up
// to the reality constraint; bit-deterministic per seed.
SkyRealization sample_sky(const AngularSpectrum& cl, std::uint64_t seed);

// Single-sky estimator (1/(2l+1)) sum_m |a_lm|^2.
double cl_sky(const SkyRealization& sky, int l);

struct CosmicVarianceCheck {
    int l = 0;
    int n_realizations = 0;
    double empirical_ratio = 0.0;  // std(C_l^sky) / C_l
    double expected_ratio = 0.0;   // sqrt(2/(2l+1))
    double standard_error = 0.0;   // of the empirical ratio
};

CosmicVarianceCheck cosmic_variance_check(const AngularSpectrum& cl, int l,
                                          int n_realizations, std::uint64_t seed);

// Spherical Bessel j_l by downward recurrence, accurate to ~1e-10 for
// l <= 200 over the quadrature range.
double sph_bessel_j(int l, double x);

}  // namespace pilotwave

#endif
