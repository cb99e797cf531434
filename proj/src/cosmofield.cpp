#include "pilotwave/cosmofield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/fitting.hpp"
#include "pilotwave/parallel.hpp"

namespace pilotwave {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// FFTW plan creation is not thread safe; execution on per-run arrays is.
std::mutex g_fftw_mutex;

struct FftwBuffer {
    fftw_complex* data = nullptr;
    explicit FftwBuffer(std::size_t n) {
        data = fftw_alloc_complex(n);
        if (!data) throw std::bad_alloc();
    }
    ~FftwBuffer() { fftw_free(data); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;
    std::complex<double>* cplx() { return reinterpret_cast<std::complex<double>*>(data); }
};

class Fft2D {
public:
    explicit Fft2D(int n) : n_(n), work_(static_cast<std::size_t>(n) * n) {
        std::lock_guard<std::mutex> lock(g_fftw_mutex);
        forward_ = fftw_plan_dft_2d(n, n, work_.data, work_.data, FFTW_FORWARD, FFTW_ESTIMATE);
        backward_ = fftw_plan_dft_2d(n, n, work_.data, work_.data, FFTW_BACKWARD, FFTW_ESTIMATE);
        if (!forward_ || !backward_) throw std::runtime_error("FFTW plan creation failed");
    }
    ~Fft2D() {
        std::lock_guard<std::mutex> lock(g_fftw_mutex);
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
    }
    Fft2D(const Fft2D&) = delete;
    Fft2D& operator=(const Fft2D&) = delete;

    std::complex<double>* work() { return work_.cplx(); }
    std::size_t size() const { return static_cast<std::size_t>(n_) * n_; }
    void forward() { fftw_execute(forward_); }
    void backward() { fftw_execute(backward_); }

private:
    int n_;
    FftwBuffer work_;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

int good_fft_size(int minimum) {
    static const int sizes[] = {32,  48,  64,  80,  96,  112, 128, 144, 160,
                                192, 224, 256, 320, 384, 448, 512, 640, 768};
    for (int s : sizes)
        if (s >= minimum) return s;
    throw std::invalid_argument("requested mode grid is too large");
}

}  // namespace

double CosmoParams::scale_factor(double t) const {
    return law == ExpansionLaw::radiation ? a_i * std::sqrt(t / t_i) : a_i;
}

double CosmoParams::mass(double t) const {
    const double a = scale_factor(t);
    return a * a * a;
}

double CosmoParams::omega(double t) const { return k / scale_factor(t); }

double CosmoParams::hubble_radius(double t) const {
    return law == ExpansionLaw::radiation ? 2.0 * t
                                          : std::numeric_limits<double>::infinity();
}

double CosmoParams::lambda_over_hubble_at_ti() const {
    // lambda_phys = 2 pi a / k against H^{-1} = 2 t, both at t_i.
    return 2.0 * kPi * a_i / (k * 2.0 * t_i);
}

double CosmoParams::eigenstate_scale(double t) const {
    return 1.0 / std::sqrt(mass(t) * omega(t));
}

void CosmoParams::validate() const {
    if (!(0 < t_i && t_i < t_f)) throw std::invalid_argument("CosmoParams: need 0 < t_i < t_f");
    if (!(a_i > 0)) throw std::invalid_argument("CosmoParams: a_i must be positive");
    if (!(k > 0)) throw std::invalid_argument("CosmoParams: k must be positive");
}

DensityFn equilibrium_mode_density(const Superposition& psi0, const CosmoParams& params) {
    params.validate();
    auto field = std::make_shared<PsiEvaluator>(psi0);
    const double ell = params.eigenstate_scale(params.t_i);
    return [field, ell](Point2 q) {
        return field->density({q.x / ell, q.y / ell}, 0.0) / (ell * ell);
    };
}

DensityFn contracted_mode_density(const Superposition& psi0, const CosmoParams& params,
                                  double w) {
    if (!(w > 0)) throw std::invalid_argument("contracted_mode_density: w must be positive");
    params.validate();
    auto field = std::make_shared<PsiEvaluator>(psi0);
    const double ell = params.eigenstate_scale(params.t_i);
    const double s = 1.0 / (w * ell);
    return [field, s, w, ell](Point2 q) {
        return field->density({q.x * s, q.y * s}, 0.0) / (w * w * ell * ell);
    };
}

namespace {

struct RunSetup {
    ModeGrid grid;
    double dt = 0.0;
    long n_steps = 0;
    long traj_half = 0;  // trajectory RK4 stage spacing, in psi steps (u)
    double ell_i = 0.0;
};

RunSetup plan_run(const CosmoParams& params, const Superposition& psi0,
                  const StepControl& control) {
    RunSetup setup;
    const int n_max = psi0.max_degree();
    const double margin = std::sqrt(2.0 * n_max + 1.0) + 5.5;
    setup.ell_i = params.eigenstate_scale(params.t_i);
    setup.grid.half_width = margin * setup.ell_i;

    // The momentum support grows like sqrt(m omega); the grid must keep the
    // final support under the Nyquist wavenumber pi / spacing.
    const double mw_f = std::max(params.mass(params.t_f) * params.omega(params.t_f),
                                 params.mass(params.t_i) * params.omega(params.t_i));
    const double p_max = margin * std::sqrt(mw_f);
    int need = static_cast<int>(std::ceil(2.0 * setup.grid.half_width * p_max / kPi * 1.15));
    setup.grid.n = control.grid_n > 0 ? control.grid_n : good_fft_size(std::max(need, 96));

    double dt = control.dt;
    if (!(dt > 0)) {
        const double w_fast = std::max(params.omega(params.t_i), params.omega(params.t_f));
        const double e_scale = (2.0 * n_max + 1.0) * w_fast;
        dt = 0.08 / e_scale;
        dt = std::min(dt, (params.t_f - params.t_i) / 400.0);
    }

    const double duration = params.t_f - params.t_i;
    // Trajectory step 2u*dt, capped so RK4 resolves the fastest oscillation.
    const double w_fast = std::max(params.omega(params.t_i), params.omega(params.t_f));
    const double traj_dt_target = std::min(0.25 / std::max(w_fast, 1e-12), duration / 60.0);
    long u = std::max(1L, std::lround(traj_dt_target / (2.0 * dt)));
    long n_steps = static_cast<long>(std::ceil(duration / dt));
    n_steps = ((n_steps + 2 * u - 1) / (2 * u)) * (2 * u);
    setup.dt = duration / static_cast<double>(n_steps);
    setup.n_steps = n_steps;
    setup.traj_half = u;
    return setup;
}

// One Strang step t -> t + dt with coefficients at the midpoint.
void strang_step(Fft2D& fft, const ModeGrid& grid, const CosmoParams& params, double t,
                 double dt, std::vector<std::complex<double>>& vhalf,
                 std::vector<std::complex<double>>& kfull) {
    const int n = grid.n;
    const double t_mid = t + 0.5 * dt;
    const double m = params.mass(t_mid);
    const double w = params.omega(t_mid);

    if (vhalf.size() != static_cast<std::size_t>(n) ||
        kfull.size() != static_cast<std::size_t>(n)) {
        vhalf.resize(n);
        kfull.resize(n);
    }
    const double vc = 0.5 * dt * 0.5 * m * w * w;  // half step of V = m w^2 r^2 / 2
    const double kc = dt * 0.5 / m;
    const double dp = kPi / grid.half_width;
    const double inv_n2 = 1.0 / (static_cast<double>(n) * n);
    for (int i = 0; i < n; ++i) {
        const double x = grid.node(i);
        vhalf[i] = std::polar(1.0, -vc * x * x);
        const int j = i <= n / 2 ? i : i - n;
        const double p = dp * j;
        // 1/n^2 folds the FFT normalization into the kinetic factor.
        kfull[i] = std::polar(std::sqrt(inv_n2), -kc * p * p);
    }

    std::complex<double>* psi = fft.work();
    for (int iy = 0; iy < n; ++iy) {
        const std::complex<double> fy = vhalf[iy];
        std::complex<double>* row = psi + static_cast<std::size_t>(iy) * n;
        for (int ix = 0; ix < n; ++ix) row[ix] *= fy * vhalf[ix];
    }
    fft.forward();
    for (int iy = 0; iy < n; ++iy) {
        const std::complex<double> fy = kfull[iy];
        std::complex<double>* row = psi + static_cast<std::size_t>(iy) * n;
        for (int ix = 0; ix < n; ++ix) row[ix] *= fy * kfull[ix];
    }
    fft.backward();
    for (int iy = 0; iy < n; ++iy) {
        const std::complex<double> fy = vhalf[iy];
        std::complex<double>* row = psi + static_cast<std::size_t>(iy) * n;
        for (int ix = 0; ix < n; ++ix) row[ix] *= fy * vhalf[ix];
    }
}

double grid_norm(const ModeGrid& grid, std::span<const std::complex<double>> psi) {
    double s = 0.0;
    for (const auto& c : psi) s += std::norm(c);
    const double h = grid.spacing();
    return s * h * h;
}

// Spectral gradient of a stored slice (one forward, two inverse transforms).
void spectral_gradient(Fft2D& fft, const ModeGrid& grid,
                       std::span<const std::complex<double>> psi,
                       std::complex<double>* gx, std::complex<double>* gy) {
    const int n = grid.n;
    const std::size_t total = fft.size();
    const double dp = kPi / grid.half_width;
    const double inv_n2 = 1.0 / static_cast<double>(total);

    std::complex<double>* work = fft.work();
    std::copy(psi.begin(), psi.end(), work);
    fft.forward();
    std::vector<std::complex<double>> hat(work, work + total);

    auto wavenumber = [&](int i) {
        const int j = i <= n / 2 ? i : i - n;
        return dp * j;
    };

    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const std::size_t idx = static_cast<std::size_t>(iy) * n + ix;
            work[idx] = hat[idx] * std::complex<double>(0.0, wavenumber(ix) * inv_n2);
        }
    fft.backward();
    std::copy(work, work + total, gx);

    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const std::size_t idx = static_cast<std::size_t>(iy) * n + ix;
            work[idx] = hat[idx] * std::complex<double>(0.0, wavenumber(iy) * inv_n2);
        }
    fft.backward();
    std::copy(work, work + total, gy);
}

// Catmull-Rom weights for fractional offset f in [0,1).
inline void cubic_weights(double f, double* w) {
    const double f2 = f * f, f3 = f2 * f;
    w[0] = 0.5 * (-f3 + 2 * f2 - f);
    w[1] = 0.5 * (3 * f3 - 5 * f2 + 2);
    w[2] = 0.5 * (-3 * f3 + 4 * f2 + f);
    w[3] = 0.5 * (f3 - f2);
}

struct SliceSet {
    // Slices indexed 0..count-1 covering psi(t_a + j dt); each slice holds
    // psi, dpsi/dx, dpsi/dy contiguously.
    int n = 0;
    std::size_t field_size = 0;
    std::vector<std::complex<double>> storage;
    long first_step = 0;
    int count = 0;

    const std::complex<double>* psi(int slice) const {
        return storage.data() + static_cast<std::size_t>(slice) * 3 * field_size;
    }
    const std::complex<double>* gx(int slice) const { return psi(slice) + field_size; }
    const std::complex<double>* gy(int slice) const { return psi(slice) + 2 * field_size; }
};

struct TrajectoryState {
    Point2 q;
    bool alive = true;
};

// Velocity Im(grad psi / psi)/m at an off-grid point of one stored slice.
bool slice_velocity(const SliceSet& slices, const ModeGrid& grid, int slice, double inv_mass,
                    Point2 q, Point2& v_out) {
    const int n = grid.n;
    const double h = grid.spacing();
    const double ux = (q.x + grid.half_width) / h;
    const double uy = (q.y + grid.half_width) / h;
    const int ix = static_cast<int>(std::floor(ux));
    const int iy = static_cast<int>(std::floor(uy));
    if (ix < 1 || ix + 2 >= n || iy < 1 || iy + 2 >= n) return false;

    double wx[4], wy[4];
    cubic_weights(ux - ix, wx);
    cubic_weights(uy - iy, wy);

    const std::complex<double>* ps = slices.psi(slice);
    const std::complex<double>* gx = slices.gx(slice);
    const std::complex<double>* gy = slices.gy(slice);

    std::complex<double> s = 0.0, sx = 0.0, sy = 0.0;
    for (int j = 0; j < 4; ++j) {
        const std::size_t row = static_cast<std::size_t>(iy - 1 + j) * n + (ix - 1);
        std::complex<double> rs = 0.0, rx = 0.0, ry = 0.0;
        for (int i = 0; i < 4; ++i) {
            rs += wx[i] * ps[row + i];
            rx += wx[i] * gx[row + i];
            ry += wx[i] * gy[row + i];
        }
        s += wy[j] * rs;
        sx += wy[j] * rx;
        sy += wy[j] * ry;
    }

    const double dens = std::norm(s);
    if (!(dens > 1e-280)) return false;
    const std::complex<double> cs = std::conj(s);
    v_out.x = std::imag(sx * cs) / dens * inv_mass;
    v_out.y = std::imag(sy * cs) / dens * inv_mass;
    return true;
}

}  // namespace

Superposition CosmoInitial::build_state() const {
    return Superposition::equal_weight_random_phases(
        Superposition::mode_block(modes_per_axis), seed);
}

DensityFn CosmoInitial::build_rho0(const CosmoParams& params,
                                   const Superposition& psi0) const {
    if (equilibrium) return equilibrium_mode_density(psi0, params);
    return contracted_mode_density(psi0, params, width_factor);
}

namespace {

ModeState evolve_mode_once(const CosmoParams& params, const Superposition& psi0,
                           const DensityFn& rho0, const StepControl& control,
                           const RunSetup& setup) {
    const ModeGrid grid = setup.grid;
    const int n = grid.n;
    const std::size_t total = static_cast<std::size_t>(n) * n;
    const double dt = setup.dt;
    const long n_steps = setup.n_steps;
    const long u = setup.traj_half;

    PsiEvaluator initial_field(psi0);
    const double ell = setup.ell_i;

    ModeState state;
    state.grid = grid;
    state.t = params.t_f;
    state.psi.resize(total);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const Point2 q{grid.node(ix) / ell, grid.node(iy) / ell};
            state.psi[static_cast<std::size_t>(iy) * n + ix] =
                initial_field.psi(q, 0.0) / ell;
        }

    const double norm0 = grid_norm(grid, state.psi);
    if (std::fabs(norm0 - 1.0) > 1e-6)
        throw NormDrift("evolve_mode: initial grid norm off by " +
                        std::to_string(norm0 - 1.0));

    // --- forward pass with checkpoints --- //
    const long checkpoint_stride = ((std::max(32L, 2 * u) + 2 * u - 1) / (2 * u)) * (2 * u);
    Fft2D fft(n);
    std::vector<std::complex<double>> vhalf, kfull;
    std::copy(state.psi.begin(), state.psi.end(), fft.work());

    std::vector<std::vector<std::complex<double>>> checkpoints;
    checkpoints.reserve(static_cast<std::size_t>(n_steps / checkpoint_stride) + 2);
    if (control.transport_rho) checkpoints.emplace_back(state.psi);

    for (long step = 0; step < n_steps; ++step) {
        strang_step(fft, grid, params, params.t_i + step * dt, dt, vhalf, kfull);
        if (control.transport_rho && (step + 1) % checkpoint_stride == 0 &&
            step + 1 < n_steps)
            checkpoints.emplace_back(fft.work(), fft.work() + total);
    }
    state.psi.assign(fft.work(), fft.work() + total);
    state.psi_norm = grid_norm(grid, state.psi);
    if (std::fabs(state.psi_norm - norm0) > 1e-5)
        throw NormDrift("evolve_mode: norm drifted by " +
                        std::to_string(state.psi_norm - norm0));
    if (!control.transport_rho) return state;

    // --- rho subgrid at t_f --- //
    const int stride = std::max(1, control.rho_stride);
    const int rho_n = n / stride;
    const std::size_t rho_total = static_cast<std::size_t>(rho_n) * rho_n;
    state.rho_stride = stride;
    state.rho.assign(rho_total, 0.0);
    state.rho_valid.assign(rho_total, 1);

    double peak = 0.0;
    for (const auto& c : state.psi) peak = std::max(peak, std::norm(c));
    const double mass_cutoff = 1e-18 * peak;

    std::vector<TrajectoryState> traj(rho_total);
    std::vector<std::size_t> active;
    for (int ry = 0; ry < rho_n; ++ry)
        for (int rx = 0; rx < rho_n; ++rx) {
            const std::size_t ridx = static_cast<std::size_t>(ry) * rho_n + rx;
            const std::size_t gidx =
                static_cast<std::size_t>(ry) * stride * n + static_cast<std::size_t>(rx) * stride;
            traj[ridx].q = {grid.node(rx * stride), grid.node(ry * stride)};
            if (std::norm(state.psi[gidx]) < mass_cutoff) {
                traj[ridx].alive = false;  // negligible mass, rho stays 0
            }
            active.push_back(ridx);
        }

    // --- backward replay over checkpoint segments --- //
    SliceSet slices;
    slices.n = n;
    slices.field_size = total;

    std::vector<std::uint8_t> failed(rho_total, 0);
    Fft2D grad_fft(n);

    long seg_end = n_steps;
    for (long ck = static_cast<long>(checkpoints.size()) - 1; ck >= 0; --ck) {
        const long seg_begin = ck * checkpoint_stride;
        const int seg_len = static_cast<int>(seg_end - seg_begin);
        slices.first_step = seg_begin;
        slices.count = seg_len + 1;
        slices.storage.resize(static_cast<std::size_t>(slices.count) * 3 * total);

        // Re-propagate the segment, storing psi and its gradient per step.
        std::copy(checkpoints[ck].begin(), checkpoints[ck].end(), fft.work());
        for (int s = 0; s <= seg_len; ++s) {
            std::complex<double>* dst =
                slices.storage.data() + static_cast<std::size_t>(s) * 3 * total;
            std::copy(fft.work(), fft.work() + total, dst);
            spectral_gradient(grad_fft, grid, {dst, total}, dst + total, dst + 2 * total);
            if (s < seg_len)
                strang_step(fft, grid, params, params.t_i + (seg_begin + s) * dt, dt, vhalf,
                            kfull);
        }

        // March every live trajectory from seg_end down to seg_begin with RK4
        // steps of 2u psi-steps; stages land exactly on stored slices.
        parallel_for(
            active.size(),
            [&](std::size_t lo, std::size_t hi) {
                for (std::size_t ai = lo; ai < hi; ++ai) {
                    TrajectoryState& tr = traj[active[ai]];
                    if (!tr.alive || failed[active[ai]]) continue;
                    for (long step = seg_end; step > seg_begin; step -= 2 * u) {
                        const int s_hi = static_cast<int>(step - seg_begin);
                        const int s_mid = static_cast<int>(s_hi - u);
                        const int s_lo = static_cast<int>(s_hi - 2 * u);
                        const double h = -2.0 * static_cast<double>(u) * dt;
                        const double t_hi = params.t_i + step * dt;
                        const double inv_m_hi = 1.0 / params.mass(t_hi);
                        const double inv_m_mid = 1.0 / params.mass(t_hi + 0.5 * h);
                        const double inv_m_lo = 1.0 / params.mass(t_hi + h);
                        Point2 k1, k2, k3, k4;
                        bool ok = slice_velocity(slices, grid, s_hi, inv_m_hi, tr.q, k1);
                        Point2 p2{tr.q.x + 0.5 * h * k1.x, tr.q.y + 0.5 * h * k1.y};
                        ok = ok && slice_velocity(slices, grid, s_mid, inv_m_mid, p2, k2);
                        Point2 p3{tr.q.x + 0.5 * h * k2.x, tr.q.y + 0.5 * h * k2.y};
                        ok = ok && slice_velocity(slices, grid, s_mid, inv_m_mid, p3, k3);
                        Point2 p4{tr.q.x + h * k3.x, tr.q.y + h * k3.y};
                        ok = ok && slice_velocity(slices, grid, s_lo, inv_m_lo, p4, k4);
                        if (!ok) {
                            failed[active[ai]] = 1;
                            break;
                        }
                        tr.q.x += h / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
                        tr.q.y += h / 6.0 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
                    }
                }
            },
            control.threads);

        seg_end = seg_begin;
    }

    // --- pull f = rho0/|psi0|^2 forward (both factors analytic at t_i) --- //
    for (int ry = 0; ry < rho_n; ++ry)
        for (int rx = 0; rx < rho_n; ++rx) {
            const std::size_t ridx = static_cast<std::size_t>(ry) * rho_n + rx;
            const std::size_t gidx =
                static_cast<std::size_t>(ry) * stride * n + static_cast<std::size_t>(rx) * stride;
            if (failed[ridx]) {
                state.rho_valid[ridx] = 0;
                ++state.dropped_points;
                continue;
            }
            if (!traj[ridx].alive) continue;  // skipped by the mass cutoff
            const Point2 q0 = traj[ridx].q;
            const double born0 =
                initial_field.density({q0.x / ell, q0.y / ell}, 0.0) / (ell * ell);
            if (!(born0 > 1e-280)) {
                state.rho_valid[ridx] = 0;
                ++state.dropped_points;
                continue;
            }
            state.rho[ridx] = std::norm(state.psi[gidx]) * rho0(q0) / born0;
        }

    const double dropped_fraction =
        static_cast<double>(state.dropped_points) / static_cast<double>(rho_total);
    if (dropped_fraction >= 1e-3)
        throw TooManyDrops("evolve_mode: dropped fraction " +
                           std::to_string(dropped_fraction));

    const double hr = grid.spacing() * stride;
    double mass = 0.0;
    for (std::size_t i = 0; i < rho_total; ++i)
        if (state.rho_valid[i]) mass += state.rho[i];
    state.rho_mass = mass * hr * hr;
    return state;
}

// Scalar pair used by the step-halving control: xi plus a coarse H value.
std::pair<double, double> run_observables(const ModeState& st) {
    const int rho_n = st.rho_n();
    std::vector<double> psi2(st.rho.size());
    for (int ry = 0; ry < rho_n; ++ry)
        for (int rx = 0; rx < rho_n; ++rx)
            psi2[static_cast<std::size_t>(ry) * rho_n + rx] = std::norm(
                st.psi[static_cast<std::size_t>(ry) * st.rho_stride * st.grid.n +
                       static_cast<std::size_t>(rx) * st.rho_stride]);
    // Block means over 4x4 patches of the subgrid stand in for coarse cells.
    const int block = std::max(1, rho_n / 32);
    const int nb = rho_n / block;
    std::vector<double> rb(static_cast<std::size_t>(nb) * nb, 0.0),
        pb(static_cast<std::size_t>(nb) * nb, 0.0);
    for (int by = 0; by < nb; ++by)
        for (int bx = 0; bx < nb; ++bx) {
            double sr = 0, sp = 0;
            long cnt = 0;
            for (int j = 0; j < block; ++j)
                for (int i = 0; i < block; ++i) {
                    const std::size_t idx =
                        static_cast<std::size_t>(by * block + j) * rho_n + bx * block + i;
                    if (!st.rho_valid[idx]) continue;
                    sr += st.rho[idx];
                    sp += psi2[idx];
                    ++cnt;
                }
            if (cnt) {
                rb[static_cast<std::size_t>(by) * nb + bx] = sr / cnt;
                pb[static_cast<std::size_t>(by) * nb + bx] = sp / cnt;
            }
        }
    double sum_r = 0, sum_p = 0;
    for (std::size_t i = 0; i < rb.size(); ++i) {
        sum_r += rb[i];
        sum_p += pb[i];
    }
    double h = 0.0;
    if (sum_r > 0 && sum_p > 0)
        for (std::size_t i = 0; i < rb.size(); ++i) {
            const double r = rb[i] / sum_r;
            const double p = pb[i] / sum_p;
            if (r > 0 && p > 0) h += r * std::log(r / p);
        }
    return {xi_of_run(st), h};
}

}  // namespace

ModeState evolve_mode(const CosmoParams& params, const Superposition& psi0,
                      const DensityFn& rho0, const StepControl& control) {
    params.validate();
    RunSetup setup = plan_run(params, psi0, control);
    ModeState state = evolve_mode_once(params, psi0, rho0, control, setup);
    if (control.refine_tol > 0) {
        auto prev = run_observables(state);
        for (int r = 0; r < control.max_refinements; ++r) {
            StepControl finer = control;
            finer.dt = setup.dt * 0.5;
            finer.grid_n = setup.grid.n;
            setup = plan_run(params, psi0, finer);
            ModeState next = evolve_mode_once(params, psi0, rho0, finer, setup);
            const auto cur = run_observables(next);
            const bool settled = std::fabs(cur.first - prev.first) < control.refine_tol &&
                                 std::fabs(cur.second - prev.second) <
                                     control.refine_tol * std::max(1.0, prev.second);
            state = std::move(next);
            prev = cur;
            if (settled) break;
        }
    }
    return state;
}

double xi_of_run(const ModeState& st) {
    const int rho_n = st.rho_n();
    double num_r = 0, den_r = 0, num_p = 0, den_p = 0;
    for (int ry = 0; ry < rho_n; ++ry)
        for (int rx = 0; rx < rho_n; ++rx) {
            const std::size_t ridx = static_cast<std::size_t>(ry) * rho_n + rx;
            if (!st.rho_valid[ridx]) continue;
            const double x = st.grid.node(rx * st.rho_stride);
            const double y = st.grid.node(ry * st.rho_stride);
            const double r2 = x * x + y * y;
            const double p = std::norm(
                st.psi[static_cast<std::size_t>(ry) * st.rho_stride * st.grid.n +
                       static_cast<std::size_t>(rx) * st.rho_stride]);
            num_r += st.rho[ridx] * r2;
            den_r += st.rho[ridx];
            num_p += p * r2;
            den_p += p;
        }
    if (!(den_r > 0) || !(den_p > 0))
        throw std::invalid_argument("xi_of_run: empty state");
    return (num_r / den_r) / (num_p / den_p);
}

DeficitCurve deficit_scan(const CosmoParams& params_template, std::span<const double> ks,
                          const CosmoInitial& initial, const StepControl& control) {
    if (ks.size() < 6)
        throw std::invalid_argument("deficit_scan: need at least 6 wavenumbers");
    const Superposition psi0 = initial.build_state();
    DeficitCurve curve;
    std::vector<double> sorted(ks.begin(), ks.end());
    std::sort(sorted.begin(), sorted.end());
    for (double k : sorted) {
        CosmoParams params = params_template;
        params.k = k;
        params.validate();
        const DensityFn rho0 = initial.build_rho0(params, psi0);
        const ModeState st = evolve_mode(params, psi0, rho0, control);
        curve.points.push_back({k, params.lambda_over_hubble_at_ti(), xi_of_run(st)});
    }
    return curve;
}

DeficitFitResult fit_deficit(std::span<const double> ks, std::span<const double> xis) {
    if (ks.size() != xis.size()) throw std::invalid_argument("fit_deficit: size mismatch");
    if (ks.size() < 4) throw std::invalid_argument("fit_deficit: need at least 4 points");
    const std::size_t n = ks.size();

    // c3 from the large-k tail, c2/c1 from the small-k end and mid slope.
    double xi_max = -1e300, xi_min = 1e300;
    for (double x : xis) {
        xi_max = std::max(xi_max, x);
        xi_min = std::min(xi_min, x);
    }
    double c3 = xi_max;
    double arg_min = std::clamp(xi_min - c3 + kPi / 2, 1e-3, kPi - 1e-3);
    double c2 = std::tan(arg_min - kPi / 2);
    double kmid = ks[n / 2];
    double c1 = kmid > 0 ? kPi / kmid : 1.0;

    auto residual = [&](const std::array<double, 3>& p, std::size_t i, double* r,
                        double* jac) {
        const double uarg = p[0] * ks[i] / kPi + p[1];
        *r = std::atan(uarg) - kPi / 2 + p[2] - xis[i];
        const double d = 1.0 / (1.0 + uarg * uarg);
        jac[0] = d * ks[i] / kPi;
        jac[1] = d;
        jac[2] = 1.0;
    };
    const auto lm = levenberg_marquardt3(residual, n, {c1, c2, c3});
    if (!lm.converged) throw FitDiverged("fit_deficit: no convergence");
    DeficitFitResult out;
    out.params = {lm.params[0], lm.params[1], lm.params[2]};
    out.residual = lm.residual_norm;
    return out;
}

DeficitFitResult fit_deficit(const DeficitCurve& curve) {
    std::vector<double> ks, xis;
    for (const auto& p : curve.points) {
        ks.push_back(p.k);
        xis.push_back(p.xi);
    }
    return fit_deficit(ks, xis);
}

}  // namespace pilotwave
