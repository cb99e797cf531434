#include <cstring>

#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "pilotwave/cmb.hpp"
#include "pilotwave/cosmofield.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/integrator.hpp"
#include "pilotwave/parallel.hpp"
#include "pilotwave/relaxation.hpp"
#include "pilotwave/typicality.hpp"
#include "pilotwave/wavefield.hpp"

namespace py = pybind11;
using namespace pilotwave;

namespace {

// Opaque holder so Python can pass initial densities without per-point
// callbacks crossing the language boundary.
struct InitialDensity {
    DensityFn fn;
    double operator()(double x, double y) const { return fn({x, y}); }
};

Superposition make_superposition(const std::vector<std::pair<int, int>>& modes,
                                 const std::vector<std::complex<double>>& coeffs) {
    std::vector<ModeIndex> ms;
    ms.reserve(modes.size());
    for (const auto& [m, n] : modes) ms.push_back({m, n});
    return Superposition(ms, coeffs);
}

py::array_t<double> vector_to_numpy(const std::vector<double>& values,
                                    std::vector<py::ssize_t> shape) {
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), values.data(), values.size() * sizeof(double));
    return out;
}

py::array_t<double> grid_to_numpy(const std::vector<double>& values, int n) {
    return vector_to_numpy(values, {n, n});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "pilot-wave relaxation simulations: trajectories, coarse-grained "
              "H curves, expanding-space modes, C_l spectra, typicality sampling";

    py::register_exception<NodeError>(m, "NodeError");
    py::register_exception<NodeEncountered>(m, "NodeEncountered");
    py::register_exception<StepLimitExceeded>(m, "StepLimitExceeded");
    py::register_exception<TooManyDrops>(m, "TooManyDrops");
    py::register_exception<SupportMismatch>(m, "SupportMismatch");
    py::register_exception<FitDiverged>(m, "FitDiverged");
    py::register_exception<NormDrift>(m, "NormDrift");
    py::register_exception<QuadratureFailure>(m, "QuadratureFailure");
    py::register_exception<TabulationError>(m, "TabulationError");

    m.def("set_default_threads", &set_default_threads, py::arg("n"));

    // --- wavefield --- //
    py::class_<Superposition>(m, "Superposition")
        .def(py::init(&make_superposition), py::arg("modes"), py::arg("coeffs"))
        .def_static(
            "equal_weight_random_phases",
            [](int modes_per_axis, std::uint64_t seed) {
                return Superposition::equal_weight_random_phases(
                    Superposition::mode_block(modes_per_axis), seed);
            },
            py::arg("modes_per_axis"), py::arg("seed"))
        .def_property_readonly("modes",
                               [](const Superposition& s) {
                                   std::vector<std::pair<int, int>> out;
                                   for (const auto& mi : s.modes())
                                       out.emplace_back(mi.m, mi.n);
                                   return out;
                               })
        .def_property_readonly("coeffs",
                               [](const Superposition& s) { return s.coeffs(); })
        .def("to_json", [](const Superposition& s) { return s.to_json().dump(); })
        .def_static("from_json", [](const std::string& text) {
            return Superposition::from_json(nlohmann::json::parse(text));
        });

    m.def(
        "eval_psi",
        [](const Superposition& s, double x, double y, double t) {
            return eval_psi(s, {x, y}, t);
        },
        py::arg("state"), py::arg("x"), py::arg("y"), py::arg("t"));
    m.def(
        "born_density",
        [](const Superposition& s, double x, double y, double t) {
            return born_density(s, {x, y}, t);
        },
        py::arg("state"), py::arg("x"), py::arg("y"), py::arg("t"));
    m.def(
        "velocity",
        [](const Superposition& s, double x, double y, double t) {
            const Point2 v = velocity(s, {x, y}, t);
            return std::make_pair(v.x, v.y);
        },
        py::arg("state"), py::arg("x"), py::arg("y"), py::arg("t"));

    // --- integrator --- //
    py::class_<IntegratorConfig>(m, "IntegratorConfig")
        .def(py::init<>())
        .def_readwrite("rel_tol", &IntegratorConfig::rel_tol)
        .def_readwrite("abs_tol", &IntegratorConfig::abs_tol)
        .def_readwrite("max_step", &IntegratorConfig::max_step)
        .def_readwrite("max_steps", &IntegratorConfig::max_steps)
        .def_readwrite("node_retry_jitter", &IntegratorConfig::node_retry_jitter);

    m.def(
        "integrate",
        [](const Superposition& s, double x, double y, double t0, double t1,
           const IntegratorConfig& cfg) {
            const Point2 q = integrate(s, {x, y}, t0, t1, cfg);
            return std::make_pair(q.x, q.y);
        },
        py::arg("state"), py::arg("x"), py::arg("y"), py::arg("t0"), py::arg("t1"),
        py::arg("config") = IntegratorConfig{});

    m.def(
        "integrate_batch",
        [](const Superposition& s, py::array_t<double, py::array::c_style> points,
           double t0, double t1, const IntegratorConfig& cfg, int threads) {
            const auto buf = points.request();
            if (buf.ndim != 2 || buf.shape[1] != 2)
                throw std::invalid_argument("points must have shape (n, 2)");
            const auto n = static_cast<std::size_t>(buf.shape[0]);
            std::vector<Point2> pts(n);
            const double* src = static_cast<const double*>(buf.ptr);
            for (std::size_t i = 0; i < n; ++i) pts[i] = {src[2 * i], src[2 * i + 1]};
            BatchResult res;
            {
                py::gil_scoped_release release;
                res = integrate_batch(s, pts, t0, t1, cfg, threads);
            }
            std::vector<double> flat(2 * n);
            std::vector<std::uint8_t> st(n);
            for (std::size_t i = 0; i < n; ++i) {
                flat[2 * i] = res.points[i].x;
                flat[2 * i + 1] = res.points[i].y;
                st[i] = static_cast<std::uint8_t>(res.status[i]);
            }
            py::array_t<double> out = vector_to_numpy(
                flat, {static_cast<py::ssize_t>(n), py::ssize_t(2)});
            py::array_t<std::uint8_t> status(
                std::vector<py::ssize_t>{static_cast<py::ssize_t>(n)});
            std::memcpy(status.mutable_data(), st.data(), st.size());
            return std::make_pair(out, status);
        },
        py::arg("state"), py::arg("points"), py::arg("t0"), py::arg("t1"),
        py::arg("config") = IntegratorConfig{}, py::arg("threads") = 0);

    // --- relaxation --- //
    py::enum_<Smoothing>(m, "Smoothing")
        .value("none", Smoothing::none)
        .value("overlapping", Smoothing::overlapping);

    py::class_<GridSpec>(m, "GridSpec")
        .def(py::init<>())
        .def_readwrite("half_width", &GridSpec::half_width)
        .def_readwrite("fine_cells", &GridSpec::fine_cells)
        .def_readwrite("coarse_cell", &GridSpec::coarse_cell)
        .def_readwrite("smoothing", &GridSpec::smoothing)
        .def("validate", &GridSpec::validate);

    py::class_<InitialDensity>(m, "InitialDensity").def("__call__", &InitialDensity::operator());
    m.def("gaussian_rho0",
          [](double variance) { return InitialDensity{gaussian_density(variance)}; },
          py::arg("variance") = 0.5);
    m.def("equilibrium_rho0",
          [](const Superposition& s) { return InitialDensity{equilibrium_density(s)}; });

    py::class_<DensityGrid>(m, "DensityGrid")
        .def_property_readonly(
            "fine", [](const DensityGrid& g) { return grid_to_numpy(g.fine, g.spec.fine_cells); })
        .def_property_readonly("coarse",
                               [](const DensityGrid& g) {
                                   const int n = g.spec.smoothing == Smoothing::overlapping
                                                     ? g.spec.fine_cells
                                                     : g.spec.coarse_per_axis();
                                   return grid_to_numpy(g.coarse, n);
                               })
        .def_readonly("t", &DensityGrid::t)
        .def_readonly("dropped_points", &DensityGrid::dropped_points)
        .def_readonly("normalization", &DensityGrid::normalization)
        .def_readonly("drops_flagged", &DensityGrid::drops_flagged);

    m.def(
        "transport_density",
        [](const Superposition& s, const InitialDensity& rho0, double t, const GridSpec& g,
           const IntegratorConfig& cfg, int threads) {
            py::gil_scoped_release release;
            return transport_density(s, rho0.fn, t, g, cfg, threads);
        },
        py::arg("state"), py::arg("rho0"), py::arg("t"), py::arg("grid"),
        py::arg("config") = IntegratorConfig{}, py::arg("threads") = 0);

    m.def("sample_born_grid", &sample_born_grid, py::arg("state"), py::arg("t"),
          py::arg("grid"));

    m.def(
        "hbar",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> rho,
           py::array_t<double, py::array::c_style | py::array::forcecast> psi2,
           double cell_volume) {
            return hbar({rho.data(), static_cast<std::size_t>(rho.size())},
                        {psi2.data(), static_cast<std::size_t>(psi2.size())}, cell_volume);
        },
        py::arg("rho_bar"), py::arg("psi2_bar"), py::arg("cell_volume"));

    py::class_<DecayFit>(m, "DecayFit")
        .def_readonly("H0", &DecayFit::H0)
        .def_readonly("b", &DecayFit::b)
        .def_readonly("c", &DecayFit::c)
        .def_readonly("tau", &DecayFit::tau)
        .def_readonly("residual", &DecayFit::residual);

    py::class_<HCurve>(m, "HCurve")
        .def_readonly("times", &HCurve::times)
        .def_readonly("hbar", &HCurve::hbar)
        .def_readonly("err", &HCurve::err)
        .def_readonly("l1_to_equilibrium", &HCurve::l1_to_equilibrium);

    m.def(
        "hcurve",
        [](const Superposition& s, const InitialDensity& rho0, std::vector<double> times,
           std::vector<GridSpec> grids, const IntegratorConfig& cfg, int threads) {
            py::gil_scoped_release release;
            return hcurve(s, rho0.fn, times, grids, cfg, threads);
        },
        py::arg("state"), py::arg("rho0"), py::arg("times"), py::arg("grids"),
        py::arg("config") = IntegratorConfig{}, py::arg("threads") = 0);

    m.def(
        "fit_decay",
        [](std::vector<double> times, std::vector<double> values) {
            return fit_decay(times, values);
        },
        py::arg("times"), py::arg("hbar"));

    // --- cosmofield --- //
    py::enum_<ExpansionLaw>(m, "ExpansionLaw")
        .value("radiation", ExpansionLaw::radiation)
        .value("static_space", ExpansionLaw::static_space);

    py::class_<CosmoParams>(m, "CosmoParams")
        .def(py::init<>())
        .def_readwrite("a_i", &CosmoParams::a_i)
        .def_readwrite("t_i", &CosmoParams::t_i)
        .def_readwrite("t_f", &CosmoParams::t_f)
        .def_readwrite("k", &CosmoParams::k)
        .def_readwrite("law", &CosmoParams::law)
        .def("scale_factor", &CosmoParams::scale_factor)
        .def("hubble_radius", &CosmoParams::hubble_radius)
        .def("lambda_over_hubble_at_ti", &CosmoParams::lambda_over_hubble_at_ti);

    py::class_<StepControl>(m, "StepControl")
        .def(py::init<>())
        .def_readwrite("dt", &StepControl::dt)
        .def_readwrite("grid_n", &StepControl::grid_n)
        .def_readwrite("rho_stride", &StepControl::rho_stride)
        .def_readwrite("refine_tol", &StepControl::refine_tol)
        .def_readwrite("threads", &StepControl::threads);

    m.def("equilibrium_mode_density",
          [](const Superposition& psi0, const CosmoParams& p) {
              return InitialDensity{equilibrium_mode_density(psi0, p)};
          });
    m.def("contracted_mode_density",
          [](const Superposition& psi0, const CosmoParams& p, double w) {
              return InitialDensity{contracted_mode_density(psi0, p, w)};
          });

    py::class_<ModeState>(m, "ModeState")
        .def_property_readonly(
            "psi",
            [](const ModeState& st) {
                py::array_t<std::complex<double>> out(
                    std::vector<py::ssize_t>{st.grid.n, st.grid.n});
                std::memcpy(out.mutable_data(), st.psi.data(),
                            st.psi.size() * sizeof(std::complex<double>));
                return out;
            })
        .def_property_readonly(
            "rho", [](const ModeState& st) { return grid_to_numpy(st.rho, st.rho_n()); })
        .def_readonly("t", &ModeState::t)
        .def_readonly("psi_norm", &ModeState::psi_norm)
        .def_readonly("rho_mass", &ModeState::rho_mass)
        .def_readonly("dropped_points", &ModeState::dropped_points);

    m.def(
        "evolve_mode",
        [](const CosmoParams& p, const Superposition& psi0, const InitialDensity& rho0,
           const StepControl& ctl) {
            py::gil_scoped_release release;
            return evolve_mode(p, psi0, rho0.fn, ctl);
        },
        py::arg("params"), py::arg("psi0"), py::arg("rho0"),
        py::arg("control") = StepControl{});

    m.def("xi_of_run", &xi_of_run, py::arg("final_state"));

    py::class_<ArctanDeficit>(m, "ArctanDeficit")
        .def(py::init([](double c1, double c2, double c3) {
                 return ArctanDeficit{c1, c2, c3};
             }),
             py::arg("c1"), py::arg("c2"), py::arg("c3"))
        .def_readwrite("c1", &ArctanDeficit::c1)
        .def_readwrite("c2", &ArctanDeficit::c2)
        .def_readwrite("c3", &ArctanDeficit::c3)
        .def("__call__", &ArctanDeficit::operator());

    py::class_<DeficitPoint>(m, "DeficitPoint")
        .def_readonly("k", &DeficitPoint::k)
        .def_readonly("lambda_over_hubble", &DeficitPoint::lambda_over_hubble)
        .def_readonly("xi", &DeficitPoint::xi);

    py::class_<DeficitCurve>(m, "DeficitCurve")
        .def_readonly("points", &DeficitCurve::points);

    py::class_<CosmoInitial>(m, "CosmoInitial")
        .def(py::init<>())
        .def_readwrite("modes_per_axis", &CosmoInitial::modes_per_axis)
        .def_readwrite("seed", &CosmoInitial::seed)
        .def_readwrite("width_factor", &CosmoInitial::width_factor)
        .def_readwrite("equilibrium", &CosmoInitial::equilibrium);

    m.def(
        "deficit_scan",
        [](const CosmoParams& tmpl, std::vector<double> ks, const CosmoInitial& init,
           const StepControl& ctl) {
            py::gil_scoped_release release;
            return deficit_scan(tmpl, ks, init, ctl);
        },
        py::arg("params"), py::arg("ks"), py::arg("initial"),
        py::arg("control") = StepControl{});

    m.def(
        "fit_deficit",
        [](std::vector<double> ks, std::vector<double> xis) {
            const auto fit = fit_deficit(ks, xis);
            return py::make_tuple(fit.params.c1, fit.params.c2, fit.params.c3, fit.residual);
        },
        py::arg("ks"), py::arg("xis"));

    // --- cmb --- //
    py::class_<PrimordialSpectrum>(m, "PrimordialSpectrum")
        .def(py::init<>())
        .def_readwrite("amplitude", &PrimordialSpectrum::amplitude)
        .def_readwrite("tilt", &PrimordialSpectrum::tilt)
        .def_readwrite("k_pivot", &PrimordialSpectrum::k_pivot)
        .def_readwrite("deficit", &PrimordialSpectrum::deficit)
        .def("__call__", &PrimordialSpectrum::operator());

    py::class_<BoxTransfer>(m, "BoxTransfer")
        .def(py::init([](double k1, double k2) {
                 return BoxTransfer{k1, k2};
             }),
             py::arg("k1"), py::arg("k2"));
    py::class_<SachsWolfeTransfer>(m, "SachsWolfeTransfer")
        .def(py::init([](double chi_star) { return SachsWolfeTransfer{chi_star}; }),
             py::arg("chi_star"));

    m.def("cl_integral", &cl_integral, py::arg("spectrum"), py::arg("transfer"), py::arg("l"),
          py::arg("rel_tol") = 1e-8);
    m.def("sph_bessel_j", &sph_bessel_j, py::arg("l"), py::arg("x"));

    py::class_<AngularSpectrum>(m, "AngularSpectrum")
        .def(py::init([](int l_min, std::vector<double> cl) {
                 AngularSpectrum spec;
                 spec.l_min = l_min;
                 spec.cl = std::move(cl);
                 spec.validate();
                 return spec;
             }),
             py::arg("l_min"), py::arg("cl"))
        .def_readonly("l_min", &AngularSpectrum::l_min)
        .def_readonly("cl", &AngularSpectrum::cl)
        .def("at", &AngularSpectrum::at);

    py::class_<SkyRealization>(m, "SkyRealization")
        .def_property_readonly("l_min", &SkyRealization::l_min)
        .def_property_readonly("l_max", &SkyRealization::l_max)
        .def_property_readonly("seed", &SkyRealization::seed)
        .def("alm", &SkyRealization::alm, py::arg("l"), py::arg("m"));

    m.def("sample_sky", &sample_sky, py::arg("cl"), py::arg("seed"));
    m.def("cl_sky", &cl_sky, py::arg("sky"), py::arg("l"));

    py::class_<CosmicVarianceCheck>(m, "CosmicVarianceCheck")
        .def_readonly("l", &CosmicVarianceCheck::l)
        .def_readonly("n_realizations", &CosmicVarianceCheck::n_realizations)
        .def_readonly("empirical_ratio", &CosmicVarianceCheck::empirical_ratio)
        .def_readonly("expected_ratio", &CosmicVarianceCheck::expected_ratio)
        .def_readonly("standard_error", &CosmicVarianceCheck::standard_error);

    m.def("cosmic_variance_check", &cosmic_variance_check, py::arg("cl"), py::arg("l"),
          py::arg("n_realizations"), py::arg("seed"));

    // --- typicality --- //
    py::class_<Superposition1D>(m, "Superposition1D")
        .def(py::init([](std::vector<int> modes, std::vector<std::complex<double>> coeffs) {
                 Superposition1D psi{std::move(modes), std::move(coeffs)};
                 psi.validate();
                 return psi;
             }),
             py::arg("modes"), py::arg("coeffs"))
        .def_static("ground", &Superposition1D::ground)
        .def_static("single", &Superposition1D::single, py::arg("mode"))
        .def("abs_psi", &Superposition1D::abs_psi, py::arg("q"));

    m.def(
        "sample_universe",
        [](const Superposition1D& psi, int n, double p, std::uint64_t seed) {
            std::vector<double> draws;
            {
                py::gil_scoped_release release;
                draws = sample_universe({psi, n, p}, seed);
            }
            return vector_to_numpy(draws, {static_cast<py::ssize_t>(draws.size())});
        },
        py::arg("psi"), py::arg("n"), py::arg("p"), py::arg("seed"));

    m.def(
        "induced_distribution_divergence",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> samples,
           const Superposition1D& psi, double q) {
            return induced_distribution_divergence(
                {samples.data(), static_cast<std::size_t>(samples.size())}, psi, q);
        },
        py::arg("samples"), py::arg("psi"), py::arg("target_exponent"));

    py::class_<NestingResult>(m, "NestingResult")
        .def_readonly("kl_first", &NestingResult::kl_first)
        .def_readonly("kl_second", &NestingResult::kl_second);

    m.def("nesting_check", &nesting_check, py::arg("first"), py::arg("second"),
          py::arg("n_samples"), py::arg("seed"));

#ifdef VERSION_INFO
    m.attr("__version__") = VERSION_INFO;
#else
    m.attr("__version__") = "0.1.0";
#endif
}
