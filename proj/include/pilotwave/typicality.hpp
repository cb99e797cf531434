#ifndef PILOTWAVE_TYPICALITY_HPP
#define PILOTWAVE_TYPICALITY_HPP

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace pilotwave {

// One-dimensional oscillator superposition (mode k has energy k + 1/2); only
// t = 0 values matter here.
struct Superposition1D {
    std::vector<int> modes;
    std::vector<std::complex<double>> coeffs;

    static Superposition1D ground();
    static Superposition1D single(int mode);
    void validate() const;
    // |psi(q, 0)|
    double abs_psi(double q) const;
    int max_degree() const;
};

// A model universe of n unentangled sub-systems sharing the wave function
// psi, weighted by the measure |Psi_univ|^p = prod |psi(q_j)|^p.
struct ProductUniverse {
    Superposition1D psi;
    int n = 1;
    double p = 2.0;

    void validate() const;
};

// n i.i.d. draws from the density proportional to |psi|^p via inverse-CDF on
// a dense tabulation; deterministic per seed, independent of thread count.
// Throws TabulationError if the tabulated CDF fails to be monotone.
std::vector<double> sample_universe(const ProductUniverse& universe, std::uint64_t seed);

// KL divergence of the sample histogram from the density proportional to
// |psi|^q, with the bin count scaling like n^{1/3}. Requires >= 10^3 samples.
double induced_distribution_divergence(std::span<const double> samples,
                                       const Superposition1D& psi, double target_exponent);

struct NestingResult {
    double kl_first = 0.0;
    double kl_second = 0.0;
};

// Sample the two-component product state from |Psi|^2 and check that each
// marginal matches its own Born density.
NestingResult nesting_check(const Superposition1D& first, const Superposition1D& second,
                            int n_samples, std::uint64_t seed);

}  // namespace pilotwave

#endif
