#ifndef PILOTWAVE_WAVEFIELD_HPP
#define PILOTWAVE_WAVEFIELD_HPP

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace pilotwave {

// Units are hbar = mass = omega = 1 throughout, so mode (m,n) of the 2D
// oscillator has energy m + n + 1 and every superposition is 2*pi periodic
// up to a global phase.

struct ModeIndex {
    int m = 0;
    int n = 0;
    int energy() const { return m + n + 1; }
    friend bool operator==(const ModeIndex&, const ModeIndex&) = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Default |psi|^2 node cutoff below which velocity() refuses to evaluate.
inline constexpr double kNodeThreshold = 1e-300;

class Superposition {
public:
    // Requires distinct modes and sum |c_i|^2 = 1 within 1e-12.
    Superposition(std::vector<ModeIndex> modes, std::vector<std::complex<double>> coeffs);

    // Rescales the coefficients to unit norm before constructing.
    static Superposition normalized(std::vector<ModeIndex> modes,
                                    std::vector<std::complex<double>> coeffs);

    // |c_i| = 1/sqrt(M), phases uniform in [0,2pi) from the seeded generator.
    static Superposition equal_weight_random_phases(std::vector<ModeIndex> modes,
                                                    std::uint64_t seed);

    // The (m,n) block with 0 <= m,n < side, e.g. side=5 gives the M=25 set.
    static std::vector<ModeIndex> mode_block(int side);

    const std::vector<ModeIndex>& modes() const { return modes_; }
    const std::vector<std::complex<double>>& coeffs() const { return coeffs_; }
    int max_degree() const { return max_degree_; }
    int max_energy() const { return max_energy_; }

    nlohmann::json to_json() const;
    static Superposition from_json(const nlohmann::json& j);

private:
    std::vector<ModeIndex> modes_;
    std::vector<std::complex<double>> coeffs_;
    int max_degree_ = 0;
    int max_energy_ = 1;
};

// Normalized 1D Hermite-Gaussian eigenfunction phi_k(x) (value) and the
// polynomial part p_k(x) = phi_k(x) e^{x^2/2}, both by stable three-term
// recurrence on the orthonormal family.
double hermite_function(int k, double x);
void hermite_poly_table(int k_max, double x, std::span<double> out);

std::complex<double> eval_psi(const Superposition& state, Point2 q, double t);
double born_density(const Superposition& state, Point2 q, double t);

// de Broglie velocity Im(grad psi / psi). Throws NodeError when |psi(q,t)|^2
// falls below node_threshold.
Point2 velocity(const Superposition& state, Point2 q, double t,
                double node_threshold = kNodeThreshold);

// Reusable evaluator for hot loops: precomputed mode layout plus scratch-free
// evaluation. Methods are const and safe to call from many threads at once.
class PsiEvaluator {
public:
    explicit PsiEvaluator(const Superposition& state);

    std::complex<double> psi(Point2 q, double t) const;
    double density(Point2 q, double t) const;
    // log |psi(q,t)|^2, safe against underflow of the Gaussian envelope.
    double log_density(Point2 q, double t) const;
    Point2 velocity(Point2 q, double t, double node_threshold = kNodeThreshold) const;

    int max_degree() const { return degree_; }

private:
    struct Term {
        int m, n, phase_index;  // phase_index = m + n - base_phase
        std::complex<double> c;
    };
    // Polynomial part and gradient of psi * e^{+r^2/2} * e^{+i(min E)t},
    // i.e. everything that matters for the phase gradient.
    void reduced_parts(Point2 q, double t, std::complex<double>& s,
                       std::complex<double>& sx, std::complex<double>& sy) const;

    std::vector<Term> terms_;
    int degree_ = 0;
    int max_phase_ = 0;
    int base_phase_ = 0;  // smallest m+n, factored out as a global phase
};

}  // namespace pilotwave

#endif
