#include "pilotwave/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pilotwave/errors.hpp"
#include "pilotwave/parallel.hpp"

namespace pilotwave {

namespace {

// Dormand-Prince 5(4) tableau (FSAL).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b_hat (5th minus embedded 4th order weights), for the error estimate.
constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695,
                 e4 = b4 - 393.0 / 640, e5 = b5 + 92097.0 / 339200,
                 e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

constexpr double kGoldenAngle = 2.39996322972865332;

struct Vec2 {
    double x, y;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

}  // namespace

void IntegratorConfig::validate() const {
    if (!(rel_tol > 0) || !(abs_tol > 0))
        throw std::invalid_argument("IntegratorConfig: tolerances must be positive");
    if (!(max_step > 0)) throw std::invalid_argument("IntegratorConfig: max_step must be positive");
    if (max_steps < 1) throw std::invalid_argument("IntegratorConfig: max_steps must be >= 1");
    if (!(node_retry_jitter >= 0))
        throw std::invalid_argument("IntegratorConfig: node_retry_jitter must be >= 0");
}

Point2 integrate(const PsiEvaluator& field, Point2 q0, double t0, double t1,
                 const IntegratorConfig& cfg, std::uint64_t point_index,
                 const StepObserver* observer) {
    cfg.validate();
    if (t0 == t1) {
        if (observer) (*observer)({t0, q0});
        return q0;
    }

    const double dir = t1 > t0 ? 1.0 : -1.0;
    const double span = std::fabs(t1 - t0);

    auto eval = [&](Vec2 y, double t) -> Vec2 {
        const Point2 v = field.velocity({y.x, y.y}, t, cfg.node_threshold);
        return {v.x, v.y};
    };

    Vec2 y{q0.x, q0.y};
    double t = t0;
    bool node_retry_used = false;
    if (observer) (*observer)({t0, q0});

    // Node hits restart the trajectory loop from the last accepted state,
    // shifted once by the deterministic jitter; a second hit is fatal.
    for (;;) {
        try {
            Vec2 k1 = eval(y, t);

            // Initial step size from the local velocity scale.
            const double v0 = std::hypot(k1.x, k1.y);
            const double q0s = std::hypot(y.x, y.y);
            double h = 0.01 * (cfg.abs_tol + cfg.rel_tol * std::max(q0s, 1.0)) /
                       std::max(v0 * cfg.rel_tol, 1e-14);
            h = std::min({h, cfg.max_step, span});
            h = std::max(h, 1e-12);
            h *= dir;

            double err_prev = 1.0;
            long steps = 0;
            for (;;) {
                if ((t - t1) * dir >= 0.0) return {y.x, y.y};
                if (++steps > cfg.max_steps)
                    throw StepLimitExceeded("integrate: step budget exhausted");
                if ((t + h - t1) * dir > 0.0) h = t1 - t;

                const Vec2 k2 = eval(y + (h * a21) * k1, t + c2 * h);
                const Vec2 k3 = eval(y + h * (a31 * k1 + a32 * k2), t + c3 * h);
                const Vec2 k4 = eval(y + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
                const Vec2 k5 =
                    eval(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
                const Vec2 k6 = eval(
                    y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
                const Vec2 y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
                const Vec2 k7 = eval(y5, t + h);

                const Vec2 ev =
                    h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
                const double scx =
                    cfg.abs_tol + cfg.rel_tol * std::max(std::fabs(y.x), std::fabs(y5.x));
                const double scy =
                    cfg.abs_tol + cfg.rel_tol * std::max(std::fabs(y.y), std::fabs(y5.y));
                // Error per unit step: the effective order drops to 4, but
                // the global error becomes proportional to the tolerance.
                const double err = std::sqrt(0.5 * ((ev.x / scx) * (ev.x / scx) +
                                                    (ev.y / scy) * (ev.y / scy))) /
                                   std::fabs(h);

                if (err <= 1.0) {
                    t += h;
                    y = y5;
                    k1 = k7;  // FSAL
                    if (observer) (*observer)({t, {y.x, y.y}});
                    const double safe = std::max(err, 1e-10);
                    double fac = 0.9 * std::pow(safe, -0.21) * std::pow(err_prev, 0.04);
                    fac = std::clamp(fac, 0.2, 10.0);
                    err_prev = safe;
                    h *= fac;
                    if (std::fabs(h) > cfg.max_step) h = dir * cfg.max_step;
                } else {
                    double fac = std::max(0.2, 0.9 * std::pow(err, -0.25));
                    h *= std::min(fac, 1.0);
                    if (std::fabs(h) < 64.0 * 2.22e-16 * std::max(1.0, std::fabs(t)))
                        throw StepLimitExceeded("integrate: step size underflow");
                }
            }
        } catch (const NodeError&) {
            if (node_retry_used)
                throw NodeEncountered("integrate: node hit again after jitter retry");
            node_retry_used = true;
            const double angle = kGoldenAngle * static_cast<double>(point_index + 1);
            y.x += cfg.node_retry_jitter * std::cos(angle);
            y.y += cfg.node_retry_jitter * std::sin(angle);
        }
    }
}

Point2 integrate(const Superposition& state, Point2 q0, double t0, double t1,
                 const IntegratorConfig& cfg, std::uint64_t point_index,
                 const StepObserver* observer) {
    PsiEvaluator field(state);
    return integrate(field, q0, t0, t1, cfg, point_index, observer);
}

BatchResult integrate_batch(const PsiEvaluator& field, std::span<const Point2> points,
                            double t0, double t1, const IntegratorConfig& cfg,
                            int threads) {
    cfg.validate();
    BatchResult result;
    result.points.assign(points.begin(), points.end());
    result.status.assign(points.size(), PointStatus::ok);

    parallel_for(
        points.size(),
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                try {
                    result.points[i] = integrate(field, points[i], t0, t1, cfg, i);
                } catch (const NodeEncountered&) {
                    result.status[i] = PointStatus::node_encountered;
                } catch (const StepLimitExceeded&) {
                    result.status[i] = PointStatus::step_limit;
                }
            }
        },
        threads);

    for (auto s : result.status)
        if (s != PointStatus::ok) ++result.failures;
    return result;
}

BatchResult integrate_batch(const Superposition& state, std::span<const Point2> points,
                            double t0, double t1, const IntegratorConfig& cfg,
                            int threads) {
    PsiEvaluator field(state);
    return integrate_batch(field, points, t0, t1, cfg, threads);
}

}  // namespace pilotwave
