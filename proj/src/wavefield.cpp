#include "pilotwave/wavefield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pilotwave/errors.hpp"
#include "pilotwave/rng.hpp"

namespace pilotwave {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kInvQuarterRootPi = 0.75112554446494248285870300477623;  // pi^{-1/4}
constexpr int kMaxModeDegree = 63;

void hermite_tables(int k_max, double x, double* val, double* deriv) {
    // Orthonormal polynomial parts p_k under weight e^{-x^2}:
    //   p_0 = pi^{-1/4},  p_k = sqrt(2/k) x p_{k-1} - sqrt((k-1)/k) p_{k-2},
    // with p_k' = sqrt(2k) p_{k-1}.
    val[0] = kInvQuarterRootPi;
    if (deriv) deriv[0] = 0.0;
    if (k_max == 0) return;
    val[1] = std::sqrt(2.0) * x * val[0];
    if (deriv) deriv[1] = std::sqrt(2.0) * val[0];
    for (int k = 2; k <= k_max; ++k) {
        val[k] = std::sqrt(2.0 / k) * x * val[k - 1] -
                 std::sqrt((k - 1.0) / k) * val[k - 2];
        if (deriv) deriv[k] = std::sqrt(2.0 * k) * val[k - 1];
    }
}

}  // namespace

double hermite_function(int k, double x) {
    if (k < 0) throw std::invalid_argument("hermite_function: negative index");
    std::vector<double> p(static_cast<std::size_t>(k) + 1);
    hermite_tables(k, x, p.data(), nullptr);
    return p[static_cast<std::size_t>(k)] * std::exp(-0.5 * x * x);
}

void hermite_poly_table(int k_max, double x, std::span<double> out) {
    if (k_max < 0 || out.size() < static_cast<std::size_t>(k_max) + 1)
        throw std::invalid_argument("hermite_poly_table: bad arguments");
    hermite_tables(k_max, x, out.data(), nullptr);
}

Superposition::Superposition(std::vector<ModeIndex> modes,
                             std::vector<std::complex<double>> coeffs)
    : modes_(std::move(modes)), coeffs_(std::move(coeffs)) {
    if (modes_.empty() || modes_.size() != coeffs_.size())
        throw std::invalid_argument("Superposition: modes/coeffs size mismatch");
    double norm2 = 0.0;
    for (std::size_t i = 0; i < modes_.size(); ++i) {
        const auto& mi = modes_[i];
        if (mi.m < 0 || mi.n < 0)
            throw std::invalid_argument("Superposition: negative mode index");
        if (mi.m > kMaxModeDegree || mi.n > kMaxModeDegree)
            throw std::invalid_argument("Superposition: mode index too large");
        for (std::size_t j = i + 1; j < modes_.size(); ++j)
            if (modes_[j] == mi)
                throw std::invalid_argument("Superposition: duplicate mode");
        norm2 += std::norm(coeffs_[i]);
        max_degree_ = std::max({max_degree_, mi.m, mi.n});
        max_energy_ = std::max(max_energy_, mi.energy());
    }
    if (std::fabs(norm2 - 1.0) > 1e-12)
        throw std::invalid_argument("Superposition: coefficients not normalized");
}

Superposition Superposition::normalized(std::vector<ModeIndex> modes,
                                        std::vector<std::complex<double>> coeffs) {
    double norm2 = 0.0;
    for (const auto& c : coeffs) norm2 += std::norm(c);
    if (norm2 <= 0.0) throw std::invalid_argument("Superposition: zero state");
    const double s = 1.0 / std::sqrt(norm2);
    for (auto& c : coeffs) c *= s;
    return Superposition(std::move(modes), std::move(coeffs));
}

Superposition Superposition::equal_weight_random_phases(std::vector<ModeIndex> modes,
                                                        std::uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed));
    const double amp = 1.0 / std::sqrt(static_cast<double>(modes.size()));
    std::vector<std::complex<double>> coeffs(modes.size());
    for (auto& c : coeffs) {
        const double phase = 2.0 * kPi * uniform01(rng);
        c = std::polar(amp, phase);
    }
    return Superposition(std::move(modes), std::move(coeffs));
}

std::vector<ModeIndex> Superposition::mode_block(int side) {
    if (side < 1) throw std::invalid_argument("mode_block: side must be >= 1");
    std::vector<ModeIndex> modes;
    modes.reserve(static_cast<std::size_t>(side) * side);
    for (int m = 0; m < side; ++m)
        for (int n = 0; n < side; ++n) modes.push_back({m, n});
    return modes;
}

nlohmann::json Superposition::to_json() const {
    nlohmann::json j;
    auto& jm = j["modes"] = nlohmann::json::array();
    auto& jc = j["coeffs"] = nlohmann::json::array();
    for (const auto& mi : modes_) jm.push_back({mi.m, mi.n});
    for (const auto& c : coeffs_) jc.push_back({c.real(), c.imag()});
    return j;
}

Superposition Superposition::from_json(const nlohmann::json& j) {
    std::vector<ModeIndex> modes;
    std::vector<std::complex<double>> coeffs;
    for (const auto& jm : j.at("modes"))
        modes.push_back({jm.at(0).get<int>(), jm.at(1).get<int>()});
    for (const auto& jc : j.at("coeffs"))
        coeffs.emplace_back(jc.at(0).get<double>(), jc.at(1).get<double>());
    return Superposition(std::move(modes), std::move(coeffs));
}

PsiEvaluator::PsiEvaluator(const Superposition& state) {
    degree_ = state.max_degree();
    // Subtract the smallest mode phase: the common factor is a global phase,
    // and removing it keeps single-mode states in real arithmetic (their
    // velocity is then exactly zero instead of roundoff noise over |psi|^2).
    int min_phase = state.modes().front().m + state.modes().front().n;
    for (const auto& mi : state.modes()) min_phase = std::min(min_phase, mi.m + mi.n);
    base_phase_ = min_phase;
    terms_.reserve(state.modes().size());
    for (std::size_t i = 0; i < state.modes().size(); ++i) {
        const auto& mi = state.modes()[i];
        terms_.push_back({mi.m, mi.n, mi.m + mi.n - min_phase, state.coeffs()[i]});
        max_phase_ = std::max(max_phase_, mi.m + mi.n - min_phase);
    }
}

void PsiEvaluator::reduced_parts(Point2 q, double t, std::complex<double>& s,
                                 std::complex<double>& sx,
                                 std::complex<double>& sy) const {
    double hx[kMaxModeDegree + 1], dhx[kMaxModeDegree + 1];
    double hy[kMaxModeDegree + 1], dhy[kMaxModeDegree + 1];
    hermite_tables(degree_, q.x, hx, dhx);
    hermite_tables(degree_, q.y, hy, dhy);

    // e^{-i s t} for s = 0..max_phase_; the common e^{-it} ground phase is
    // factored out of every term and irrelevant to |psi| and to grad(arg psi).
    std::complex<double> phase[2 * kMaxModeDegree + 1];
    const std::complex<double> u(std::cos(t), -std::sin(t));
    phase[0] = 1.0;
    for (int k = 1; k <= max_phase_; ++k) phase[k] = phase[k - 1] * u;

    s = sx = sy = 0.0;
    for (const Term& term : terms_) {
        const std::complex<double> w = term.c * phase[term.phase_index];
        s += w * (hx[term.m] * hy[term.n]);
        sx += w * (dhx[term.m] * hy[term.n]);
        sy += w * (hx[term.m] * dhy[term.n]);
    }
}

std::complex<double> PsiEvaluator::psi(Point2 q, double t) const {
    std::complex<double> s, sx, sy;
    reduced_parts(q, t, s, sx, sy);
    const double envelope = std::exp(-0.5 * (q.x * q.x + q.y * q.y));
    // Restore the global phase e^{-i E_min t} stripped from the mode sum.
    const double ph = -(base_phase_ + 1.0) * t;
    return s * envelope * std::complex<double>(std::cos(ph), std::sin(ph));
}

double PsiEvaluator::density(Point2 q, double t) const {
    std::complex<double> s, sx, sy;
    reduced_parts(q, t, s, sx, sy);
    return std::norm(s) * std::exp(-(q.x * q.x + q.y * q.y));
}

double PsiEvaluator::log_density(Point2 q, double t) const {
    std::complex<double> s, sx, sy;
    reduced_parts(q, t, s, sx, sy);
    const double n = std::norm(s);
    if (n == 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(n) - (q.x * q.x + q.y * q.y);
}

Point2 PsiEvaluator::velocity(Point2 q, double t, double node_threshold) const {
    std::complex<double> s, sx, sy;
    reduced_parts(q, t, s, sx, sy);
    const double n = std::norm(s);
    // Node test on the true density e^{-r^2} |s|^2, done in log space so the
    // Gaussian envelope cannot underflow the comparison.
    const double r2 = q.x * q.x + q.y * q.y;
    if (n == 0.0 || std::log(n) - r2 < std::log(node_threshold))
        throw NodeError("velocity evaluated at a wave-function node");
    // grad psi / psi = grad s / s - (x, y); only the imaginary part survives.
    const double inv = 1.0 / n;
    const std::complex<double> cs = std::conj(s);
    return {std::imag(sx * cs) * inv, std::imag(sy * cs) * inv};
}

std::complex<double> eval_psi(const Superposition& state, Point2 q, double t) {
    return PsiEvaluator(state).psi(q, t);
}

double born_density(const Superposition& state, Point2 q, double t) {
    return PsiEvaluator(state).density(q, t);
}

Point2 velocity(const Superposition& state, Point2 q, double t, double node_threshold) {
    return PsiEvaluator(state).velocity(q, t, node_threshold);
}

}  // namespace pilotwave
