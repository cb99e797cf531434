#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pilotwave/cmb.hpp"
#include "pilotwave/cosmofield.hpp"
#include "pilotwave/csv.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/parallel.hpp"
#include "pilotwave/relaxation.hpp"
#include "pilotwave/typicality.hpp"
#include "pilotwave/wavefield.hpp"

namespace pwcli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pilotwave;

constexpr const char* kVersion = "0.1.0";
constexpr double kPi = 3.14159265358979323846264338327950288;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Strict block reader: every key must be consumed, "_note" keys are ignored.
void reject_unknown(const json& block, const std::set<std::string>& allowed,
                    const std::string& where) {
    if (!block.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : block.items()) {
        if (key.rfind("_note", 0) == 0) continue;
        if (!allowed.count(key))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T require(const json& block, const std::string& key, const std::string& where) {
    if (!block.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
    try {
        return block.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": key '" + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const json& block, const std::string& key, T fallback, const std::string& where) {
    if (!block.contains(key)) return fallback;
    try {
        return block.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": key '" + key + "' has the wrong type");
    }
}

Superposition parse_superposition(const json& block, std::uint64_t seed,
                                  const std::string& where) {
    reject_unknown(block, {"modes_per_axis", "modes", "coeffs"}, where);
    if (block.contains("modes_per_axis")) {
        if (block.contains("modes") || block.contains("coeffs"))
            throw ConfigError(where + ": give either modes_per_axis or explicit modes");
        const int side = require<int>(block, "modes_per_axis", where);
        if (side < 1 || side > 16) throw ConfigError(where + ": modes_per_axis out of range");
        return Superposition::equal_weight_random_phases(Superposition::mode_block(side),
                                                         seed);
    }
    if (!block.contains("modes") || !block.contains("coeffs"))
        throw ConfigError(where + ": need modes_per_axis, or modes plus coeffs");
    try {
        return Superposition::from_json(block);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    } catch (const json::exception&) {
        throw ConfigError(where + ": malformed modes or coeffs");
    }
}

Superposition1D parse_superposition_1d(const json& block, const std::string& where) {
    reject_unknown(block, {"kind", "modes", "coeffs"}, where);
    if (block.contains("kind")) {
        const auto kind = require<std::string>(block, "kind", where);
        if (kind == "ground") return Superposition1D::ground();
        throw ConfigError(where + ": unknown kind '" + kind + "'");
    }
    Superposition1D psi;
    psi.modes = require<std::vector<int>>(block, "modes", where);
    for (const auto& jc : block.at("coeffs")) {
        if (!jc.is_array() || jc.size() != 2)
            throw ConfigError(where + ": coeffs must be [re, im] pairs");
        psi.coeffs.emplace_back(jc.at(0).get<double>(), jc.at(1).get<double>());
    }
    try {
        psi.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return psi;
}

IntegratorConfig parse_integrator(const json& block, const std::string& where) {
    reject_unknown(block,
                   {"rel_tol", "abs_tol", "max_step", "max_steps", "node_retry_jitter"},
                   where);
    IntegratorConfig cfg;
    cfg.rel_tol = get_or(block, "rel_tol", cfg.rel_tol, where);
    cfg.abs_tol = get_or(block, "abs_tol", cfg.abs_tol, where);
    cfg.max_step = get_or(block, "max_step", cfg.max_step, where);
    cfg.max_steps = get_or<long>(block, "max_steps", cfg.max_steps, where);
    cfg.node_retry_jitter = get_or(block, "node_retry_jitter", cfg.node_retry_jitter, where);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return cfg;
}

GridSpec parse_grid(const json& block, const std::string& where) {
    reject_unknown(block, {"half_width", "fine_cells", "coarse_cell", "smoothing"}, where);
    GridSpec g;
    g.half_width = get_or(block, "half_width", g.half_width, where);
    g.fine_cells = get_or(block, "fine_cells", g.fine_cells, where);
    g.coarse_cell = get_or(block, "coarse_cell", g.coarse_cell, where);
    const auto smoothing = get_or<std::string>(block, "smoothing", "none", where);
    if (smoothing == "none")
        g.smoothing = Smoothing::none;
    else if (smoothing == "overlapping")
        g.smoothing = Smoothing::overlapping;
    else
        throw ConfigError(where + ": smoothing must be 'none' or 'overlapping'");
    try {
        g.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return g;
}

DensityFn parse_rho0(const json& block, const Superposition& state, const std::string& where) {
    reject_unknown(block, {"kind", "variance"}, where);
    const auto kind = require<std::string>(block, "kind", where);
    if (kind == "gaussian") {
        const double variance = get_or(block, "variance", 0.5, where);
        if (!(variance > 0)) throw ConfigError(where + ": variance must be positive");
        return gaussian_density(variance);
    }
    if (kind == "equilibrium") return equilibrium_density(state);
    throw ConfigError(where + ": rho0 kind must be 'gaussian' or 'equilibrium'");
}

PrimordialSpectrum parse_spectrum(const json& block, const std::string& where) {
    reject_unknown(block, {"amplitude", "tilt", "k_pivot", "deficit"}, where);
    PrimordialSpectrum spec;
    spec.amplitude = get_or(block, "amplitude", 1.0, where);
    spec.tilt = get_or(block, "tilt", 0.96, where);
    spec.k_pivot = get_or(block, "k_pivot", 0.05, where);
    if (block.contains("deficit")) {
        const json& d = block.at("deficit");
        reject_unknown(d, {"c1", "c2", "c3"}, where + ".deficit");
        spec.deficit = ArctanDeficit{require<double>(d, "c1", where),
                                     require<double>(d, "c2", where),
                                     require<double>(d, "c3", where)};
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return spec;
}

TransferSpec parse_transfer(const json& block, const std::string& where) {
    reject_unknown(block, {"kind", "k1", "k2", "chi_star"}, where);
    const auto kind = require<std::string>(block, "kind", where);
    if (kind == "box") {
        BoxTransfer box{require<double>(block, "k1", where),
                        require<double>(block, "k2", where)};
        if (!(0 < box.k1 && box.k1 < box.k2))
            throw ConfigError(where + ": need 0 < k1 < k2");
        return box;
    }
    if (kind == "sachs_wolfe") {
        SachsWolfeTransfer sw{require<double>(block, "chi_star", where)};
        if (!(sw.chi_star > 0)) throw ConfigError(where + ": chi_star must be positive");
        return sw;
    }
    throw ConfigError(where + ": transfer kind must be 'box' or 'sachs_wolfe'");
}

CosmoParams parse_cosmology(const json& block, const std::string& where) {
    reject_unknown(block, {"a_i", "t_i", "t_f", "expansion"}, where);
    CosmoParams p;
    p.a_i = get_or(block, "a_i", 1.0, where);
    p.t_i = get_or(block, "t_i", 1.0, where);
    p.t_f = get_or(block, "t_f", 4.0, where);
    const auto law = get_or<std::string>(block, "expansion", "radiation", where);
    if (law == "radiation")
        p.law = ExpansionLaw::radiation;
    else if (law == "static")
        p.law = ExpansionLaw::static_space;
    else
        throw ConfigError(where + ": expansion must be 'radiation' or 'static'");
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return p;
}

// --- run context: config loading, artifact bookkeeping, run.json --- //

struct RunContext {
    std::string subcommand;
    json config;
    std::uint64_t seed = 0;
    fs::path output_dir;
    int threads = 0;
    std::vector<std::string> artifacts;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    fs::path artifact(const std::string& name) {
        artifacts.push_back(name);
        return output_dir / name;
    }

    void write_run_json() {
        json run;
        run["subcommand"] = subcommand;
        run["seed"] = seed;
        run["threads"] = effective_threads(threads);
        run["config"] = config;
        run["artifacts"] = artifacts;
        run["versions"] = {{"pilotwave", kVersion}};
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                .count();
        run["timing"] = {{"wall_seconds", wall}};
        std::ofstream out(output_dir / "run.json", std::ios::binary);
        out << run.dump(2) << "\n";
        if (!out) throw std::runtime_error("cannot write run.json");
    }
};

RunContext make_context(const std::string& subcommand, const std::string& config_path,
                        const std::string& output_dir, int threads,
                        const std::set<std::string>& allowed_keys) {
    RunContext ctx;
    ctx.subcommand = subcommand;
    ctx.threads = threads;

    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    try {
        ctx.config = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    std::set<std::string> keys = allowed_keys;
    keys.insert("seed");
    keys.insert("output_dir");
    reject_unknown(ctx.config, keys, "config");
    if (!ctx.config.contains("seed"))
        throw ConfigError("config: 'seed' is mandatory (no wall-clock seeding)");
    ctx.seed = require<std::uint64_t>(ctx.config, "seed", "config");

    std::string dir = output_dir;
    if (dir.empty()) dir = get_or<std::string>(ctx.config, "output_dir", ".", "config");
    ctx.output_dir = dir;
    return ctx;
}

std::string grid_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%08.3f", t);
    std::string s(buf);
    for (auto& c : s)
        if (c == '.') c = 'p';
    return s;
}

// --- subcommands --- //

int cmd_relax(RunContext& ctx) {
    const json& cfg = ctx.config;
    const auto state =
        parse_superposition(cfg.contains("superposition") ? cfg.at("superposition") : json::object(),
                            ctx.seed, "superposition");
    const GridSpec grid = parse_grid(cfg.contains("grid") ? cfg.at("grid") : json::object(), "grid");
    const auto rho0 = parse_rho0(
        cfg.contains("rho0") ? cfg.at("rho0") : json{{"kind", "gaussian"}}, state, "rho0");
    IntegratorConfig icfg;
    if (cfg.contains("integrator")) icfg = parse_integrator(cfg.at("integrator"), "integrator");

    // Times: either explicit values or a uniform schedule over n periods.
    std::vector<double> times;
    if (!cfg.contains("times")) throw ConfigError("config: 'times' is required");
    const json& jt = cfg.at("times");
    reject_unknown(jt, {"values", "t_max", "count"}, "times");
    if (jt.contains("values")) {
        times = require<std::vector<double>>(jt, "values", "times");
    } else {
        const double t_max = require<double>(jt, "t_max", "times");
        const int count = require<int>(jt, "count", "times");
        if (count < 2 || !(t_max > 0)) throw ConfigError("times: bad schedule");
        for (int i = 0; i < count; ++i)
            times.push_back(t_max * static_cast<double>(i) / (count - 1));
    }
    if (times.empty() || times.front() != 0.0)
        throw ConfigError("times: must start at 0 and increase");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw ConfigError("times: must be increasing");

    // Error-estimate grids: same spec at different fine resolutions.
    std::vector<GridSpec> grids{grid};
    const auto error_cells = get_or<std::vector<int>>(cfg, "error_grids",
                                                      std::vector<int>{}, "config");
    for (int cells : error_cells) {
        GridSpec g = grid;
        g.fine_cells = cells;
        try {
            g.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("error_grids: ") + e.what());
        }
        grids.push_back(g);
    }
    if (grids.size() < 2)
        throw ConfigError("config: at least one entry in 'error_grids' is required");

    std::vector<double> snapshot_times;
    Smoothing snap_smoothing = Smoothing::overlapping;
    if (cfg.contains("snapshots")) {
        const json& js = cfg.at("snapshots");
        reject_unknown(js, {"times", "smoothing"}, "snapshots");
        snapshot_times = get_or<std::vector<double>>(js, "times", {}, "snapshots");
        const auto sm = get_or<std::string>(js, "smoothing", "overlapping", "snapshots");
        if (sm == "none")
            snap_smoothing = Smoothing::none;
        else if (sm != "overlapping")
            throw ConfigError("snapshots: smoothing must be 'none' or 'overlapping'");
    }

    std::vector<Point2> dump_points;
    if (cfg.contains("trajectory_dump")) {
        const json& jd = cfg.at("trajectory_dump");
        reject_unknown(jd, {"points"}, "trajectory_dump");
        for (const auto& jp : jd.at("points")) {
            if (!jp.is_array() || jp.size() != 2)
                throw ConfigError("trajectory_dump: points must be [x, y] pairs");
            dump_points.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
        }
    }

    // --- compute --- //
    const HCurve curve = hcurve(state, rho0, times, grids, icfg, ctx.threads);

    std::vector<DensityGrid> snapshots;
    for (double t : snapshot_times) {
        GridSpec g = grid;
        g.smoothing = snap_smoothing;
        snapshots.push_back(transport_density(state, rho0, t, g, icfg, ctx.threads));
        snapshots.push_back(sample_born_grid(state, t, g));
    }

    std::vector<std::vector<TrajectorySample>> dumps(dump_points.size());
    if (!dump_points.empty()) {
        PsiEvaluator field(state);
        for (std::size_t i = 0; i < dump_points.size(); ++i) {
            StepObserver obs = [&](const TrajectorySample& s) { dumps[i].push_back(s); };
            integrate(field, dump_points[i], 0.0, times.back(), icfg, i, &obs);
        }
    }

    // --- artifacts --- //
    {
        CsvWriter csv(ctx.artifact("hcurve.csv").string(), {"t", "hbar", "err"});
        for (std::size_t i = 0; i < curve.times.size(); ++i)
            csv.row({curve.times[i], curve.hbar[i], curve.err[i]});
    }
    {
        CsvWriter csv(ctx.artifact("coarse_l1.csv").string(), {"t", "l1_to_equilibrium"});
        for (std::size_t i = 0; i < curve.times.size(); ++i)
            csv.row({curve.times[i], curve.l1_to_equilibrium[i]});
    }
    for (std::size_t i = 0; i < snapshots.size(); i += 2) {
        const std::string tag = grid_tag(snapshots[i].t);
        write_density_grid(ctx.artifact("rho_t" + tag + ".grid").string(), snapshots[i]);
        write_density_grid(ctx.artifact("born_t" + tag + ".grid").string(), snapshots[i + 1]);
    }
    for (std::size_t i = 0; i < dumps.size(); ++i) {
        char name[48];
        std::snprintf(name, sizeof(name), "trajectory_%03zu.csv", i);
        CsvWriter csv(ctx.artifact(name).string(), {"t", "x", "y"});
        for (const auto& s : dumps[i]) csv.row({s.t, s.q.x, s.q.y});
    }
    return 0;
}

int cmd_fit(RunContext& ctx) {
    const auto input = require<std::string>(ctx.config, "input", "config");

    std::ifstream in(input, std::ios::binary);
    if (!in) throw ConfigError("cannot open input: " + input);
    std::string header;
    if (!std::getline(in, header) || header.rfind("t,hbar", 0) != 0)
        throw ConfigError("input does not look like an hcurve.csv");
    std::vector<double> ts, hs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double t, h, e;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &h, &e) != 3)
            throw ConfigError("malformed row in " + input);
        ts.push_back(t);
        hs.push_back(h);
    }
    if (ts.size() < 5) throw ConfigError("fit needs at least 5 samples");

    const DecayFit fit = fit_decay(ts, hs);
    json out = {{"H0", fit.H0},   {"b", fit.b},        {"c", fit.c},
                {"tau", fit.tau}, {"residual", fit.residual}};
    std::ofstream os(ctx.artifact("fit.json"), std::ios::binary);
    os << out.dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write fit.json");
    return 0;
}

int cmd_cosmo_scan(RunContext& ctx) {
    const json& cfg = ctx.config;
    const CosmoParams tmpl =
        parse_cosmology(cfg.contains("cosmology") ? cfg.at("cosmology") : json::object(),
                        "cosmology");

    std::vector<double> ks;
    if (!cfg.contains("wavenumbers")) throw ConfigError("config: 'wavenumbers' is required");
    const json& jk = cfg.at("wavenumbers");
    reject_unknown(jk, {"values", "lambda_over_hubble"}, "wavenumbers");
    if (jk.contains("values")) {
        ks = require<std::vector<double>>(jk, "values", "wavenumbers");
    } else {
        const auto ratios =
            require<std::vector<double>>(jk, "lambda_over_hubble", "wavenumbers");
        for (double r : ratios) {
            if (!(r > 0)) throw ConfigError("wavenumbers: ratios must be positive");
            ks.push_back(kPi * tmpl.a_i / (r * tmpl.t_i));
        }
    }
    if (ks.size() < 6) throw ConfigError("wavenumbers: need at least 6 entries");

    CosmoInitial initial;
    if (cfg.contains("initial")) {
        const json& ji = cfg.at("initial");
        reject_unknown(ji, {"modes_per_axis", "width_factor", "equilibrium"}, "initial");
        initial.modes_per_axis = get_or(ji, "modes_per_axis", 4, "initial");
        initial.width_factor = get_or(ji, "width_factor", 0.5, "initial");
        initial.equilibrium = get_or(ji, "equilibrium", false, "initial");
        if (initial.modes_per_axis < 1 || initial.modes_per_axis > 8)
            throw ConfigError("initial: modes_per_axis out of range");
        if (!(initial.width_factor > 0))
            throw ConfigError("initial: width_factor must be positive");
    }
    initial.seed = ctx.seed;

    StepControl control;
    if (cfg.contains("evolve")) {
        const json& je = cfg.at("evolve");
        reject_unknown(je, {"dt", "grid_n", "rho_stride", "refine_tol"}, "evolve");
        control.dt = get_or(je, "dt", 0.0, "evolve");
        control.grid_n = get_or(je, "grid_n", 0, "evolve");
        control.rho_stride = get_or(je, "rho_stride", 2, "evolve");
        control.refine_tol = get_or(je, "refine_tol", 0.0, "evolve");
        if (control.rho_stride < 1) throw ConfigError("evolve: rho_stride must be >= 1");
    }
    control.threads = ctx.threads;
    const bool do_fit = get_or(cfg, "fit", true, "config");

    DeficitCurve curve = deficit_scan(tmpl, ks, initial, control);
    std::optional<DeficitFitResult> fit;
    if (do_fit) fit = fit_deficit(curve);

    {
        CsvWriter csv(ctx.artifact("deficit.csv").string(),
                      {"k", "lambda_over_hubble_at_ti", "xi"});
        for (const auto& p : curve.points) csv.row({p.k, p.lambda_over_hubble, p.xi});
    }
    if (fit) {
        json out = {{"c1", fit->params.c1},
                    {"c2", fit->params.c2},
                    {"c3", fit->params.c3},
                    {"residual", fit->residual}};
        std::ofstream os(ctx.artifact("deficit_fit.json"), std::ios::binary);
        os << out.dump(2) << "\n";
        if (!os) throw std::runtime_error("cannot write deficit_fit.json");
    }
    return 0;
}

int cmd_cmb(RunContext& ctx) {
    const json& cfg = ctx.config;
    const PrimordialSpectrum corrected =
        parse_spectrum(cfg.contains("spectrum") ? cfg.at("spectrum") : json::object(),
                       "spectrum");
    PrimordialSpectrum plain = corrected;
    plain.deficit.reset();
    const TransferSpec transfer = parse_transfer(
        cfg.contains("transfer") ? cfg.at("transfer") : json{{"kind", "box"}, {"k1", 1.0},
                                                             {"k2", 2.718281828459045}},
        "transfer");
    const int l_min = get_or(cfg, "l_min", 2, "config");
    const int l_max = get_or(cfg, "l_max", 32, "config");
    const double rel_tol = get_or(cfg, "rel_tol", 1e-8, "config");
    if (l_min < 0 || l_max < l_min) throw ConfigError("config: bad multipole range");
    if (!(rel_tol > 0)) throw ConfigError("config: rel_tol must be positive");

    std::vector<double> uncorrected(static_cast<std::size_t>(l_max - l_min) + 1);
    std::vector<double> with_deficit(uncorrected.size());
    for (int l = l_min; l <= l_max; ++l) {
        const std::size_t i = static_cast<std::size_t>(l - l_min);
        uncorrected[i] = cl_integral(plain, transfer, l, rel_tol);
        with_deficit[i] =
            corrected.deficit ? cl_integral(corrected, transfer, l, rel_tol) : uncorrected[i];
    }

    CsvWriter csv(ctx.artifact("cl.csv").string(),
                  {"l", "Cl_uncorrected", "Cl_corrected", "ratio"});
    for (int l = l_min; l <= l_max; ++l) {
        const std::size_t i = static_cast<std::size_t>(l - l_min);
        const double ratio = uncorrected[i] != 0.0 ? with_deficit[i] / uncorrected[i] : 0.0;
        csv.row({static_cast<double>(l), uncorrected[i], with_deficit[i], ratio});
    }
    return 0;
}

int cmd_cosmic_variance(RunContext& ctx) {
    const json& cfg = ctx.config;
    const PrimordialSpectrum spectrum =
        parse_spectrum(cfg.contains("spectrum") ? cfg.at("spectrum") : json::object(),
                       "spectrum");
    const TransferSpec transfer = parse_transfer(
        cfg.contains("transfer") ? cfg.at("transfer") : json{{"kind", "box"}, {"k1", 1.0},
                                                             {"k2", 2.718281828459045}},
        "transfer");
    const auto ls = get_or<std::vector<int>>(cfg, "multipoles", std::vector<int>{2, 10, 100},
                                             "config");
    const int n_real = get_or(cfg, "n_realizations", 10000, "config");
    if (ls.empty()) throw ConfigError("config: multipoles must be non-empty");
    if (n_real < 1000) throw ConfigError("config: n_realizations must be >= 1000");

    int l_top = 0;
    for (int l : ls) {
        if (l < 2) throw ConfigError("config: multipoles must be >= 2");
        l_top = std::max(l_top, l);
    }
    AngularSpectrum cl;
    cl.l_min = 2;
    for (int l = 2; l <= l_top; ++l)
        cl.cl.push_back(cl_integral(spectrum, transfer, l));

    CsvWriter csv(ctx.artifact("cv.csv").string(), {"l", "expected", "empirical", "stderr"});
    for (int l : ls) {
        const CosmicVarianceCheck check =
            cosmic_variance_check(cl, l, n_real, ctx.seed + static_cast<std::uint64_t>(l));
        csv.row({static_cast<double>(l), check.expected_ratio, check.empirical_ratio,
                 check.standard_error});
    }
    return 0;
}

int cmd_typicality(RunContext& ctx) {
    const json& cfg = ctx.config;
    const Superposition1D psi = parse_superposition_1d(
        cfg.contains("psi") ? cfg.at("psi") : json{{"kind", "ground"}}, "psi");
    const int n_samples = get_or(cfg, "n_samples", 100000, "config");
    if (n_samples < 1000) throw ConfigError("config: n_samples must be >= 1000");

    std::vector<std::pair<double, double>> pairs{{2, 2}, {2, 4}, {4, 4}, {4, 2}};
    if (cfg.contains("exponents")) {
        pairs.clear();
        for (const auto& jp : cfg.at("exponents")) {
            if (!jp.is_array() || jp.size() != 2)
                throw ConfigError("exponents: entries must be [p, q] pairs");
            pairs.emplace_back(jp.at(0).get<double>(), jp.at(1).get<double>());
            if (!(pairs.back().first > 0) || !(pairs.back().second > 0))
                throw ConfigError("exponents: must be positive");
        }
        if (pairs.empty()) throw ConfigError("exponents: must be non-empty");
    }

    std::optional<Superposition1D> nesting_psi;
    int nesting_samples = n_samples;
    if (cfg.contains("nesting")) {
        const json& jn = cfg.at("nesting");
        reject_unknown(jn, {"psi_b", "n_samples"}, "nesting");
        nesting_psi = parse_superposition_1d(
            jn.contains("psi_b") ? jn.at("psi_b") : json{{"kind", "ground"}}, "nesting.psi_b");
        nesting_samples = get_or(jn, "n_samples", n_samples, "nesting");
        if (nesting_samples < 1000) throw ConfigError("nesting: n_samples must be >= 1000");
    }

    // One sample set per distinct p, shared across the target exponents.
    std::vector<double> ps;
    for (const auto& pq : pairs)
        if (std::find(ps.begin(), ps.end(), pq.first) == ps.end()) ps.push_back(pq.first);
    std::vector<std::vector<double>> draws;
    for (double p : ps)
        draws.push_back(sample_universe({psi, n_samples, p},
                                        ctx.seed + static_cast<std::uint64_t>(ps.size()) +
                                            static_cast<std::uint64_t>(p * 16)));

    std::vector<double> kls;
    for (const auto& pq : pairs) {
        const std::size_t pi = static_cast<std::size_t>(
            std::find(ps.begin(), ps.end(), pq.first) - ps.begin());
        kls.push_back(induced_distribution_divergence(draws[pi], psi, pq.second));
    }

    std::optional<NestingResult> nesting;
    if (nesting_psi) nesting = nesting_check(psi, *nesting_psi, nesting_samples, ctx.seed ^ 0xabcdULL);

    {
        CsvWriter csv(ctx.artifact("typicality.csv").string(), {"n", "p", "q", "kl"});
        for (std::size_t i = 0; i < pairs.size(); ++i)
            csv.row({static_cast<double>(n_samples), pairs[i].first, pairs[i].second, kls[i]});
    }
    {
        std::ofstream rep(ctx.artifact("report.txt"), std::ios::binary);
        rep << "typicality sampling report (n = " << n_samples << ")\n\n";
        rep << "Sampling the universal configuration from |Psi|^p yields an\n"
               "induced sub-system distribution close to |psi|^p -- for every p.\n"
               "The Born rule emerges for p = 2 exactly because p = 2 was assumed:\n\n";
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            char line[128];
            std::snprintf(line, sizeof(line),
                          "  draws from |psi|^%g vs target |psi|^%g : KL = %.6f\n",
                          pairs[i].first, pairs[i].second, kls[i]);
            rep << line;
        }
        if (nesting) {
            rep << "\nnesting check (joint Born sampling, per-component marginals):\n";
            char line[128];
            std::snprintf(line, sizeof(line), "  KL(first) = %.6f, KL(second) = %.6f\n",
                          nesting->kl_first, nesting->kl_second);
            rep << line;
        }
        if (!rep) throw std::runtime_error("cannot write report.txt");
    }
    return 0;
}

int dispatch(const std::string& name, RunContext& ctx) {
    fs::create_directories(ctx.output_dir);
    int rc = 0;
    if (name == "relax")
        rc = cmd_relax(ctx);
    else if (name == "fit")
        rc = cmd_fit(ctx);
    else if (name == "cosmo-scan")
        rc = cmd_cosmo_scan(ctx);
    else if (name == "cmb")
        rc = cmd_cmb(ctx);
    else if (name == "cosmic-variance")
        rc = cmd_cosmic_variance(ctx);
    else if (name == "typicality")
        rc = cmd_typicality(ctx);
    else
        throw ConfigError("unknown subcommand: " + name);
    ctx.write_run_json();
    return rc;
}

const std::set<std::string>& allowed_keys(const std::string& sub) {
    static const std::map<std::string, std::set<std::string>> table{
        {"relax",
         {"superposition", "grid", "error_grids", "rho0", "times", "integrator", "snapshots",
          "trajectory_dump"}},
        {"fit", {"input"}},
        {"cosmo-scan", {"cosmology", "wavenumbers", "initial", "evolve", "fit"}},
        {"cmb", {"spectrum", "transfer", "l_min", "l_max", "rel_tol"}},
        {"cosmic-variance", {"spectrum", "transfer", "multipoles", "n_realizations"}},
        {"typicality", {"psi", "n_samples", "exponents", "nesting"}},
    };
    const auto it = table.find(sub);
    if (it == table.end()) {
        static const std::set<std::string> empty;
        return empty;
    }
    return it->second;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"pilotwave: quantum relaxation and Born-rule experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_dir;
    int threads = 0;

    const std::vector<std::string> names{"relax",           "fit",
                                         "cosmo-scan",      "cmb",
                                         "cosmic-variance", "typicality"};
    const std::map<std::string, std::string> blurbs{
        {"relax", "density transport, coarse-grained H curve, snapshots"},
        {"fit", "exponential-decay fit of an existing hcurve.csv"},
        {"cosmo-scan", "xi(k) deficit scan on expanding space"},
        {"cmb", "angular power spectrum with optional deficit correction"},
        {"cosmic-variance", "Monte Carlo check of the C_l estimator spread"},
        {"typicality", "|Psi|^p product-measure sampling demonstration"},
    };
    for (const auto& name : names) {
        auto* sub = app.add_subcommand(name, blurbs.at(name));
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--output-dir", output_dir, "artifact directory (default from config)");
        sub->add_option("--threads", threads, "worker thread cap (0 = hardware)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    set_default_threads(threads);

    try {
        RunContext ctx = make_context(sub, config_path, output_dir, threads, allowed_keys(sub));
        return dispatch(sub, ctx);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const pilotwave::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace pwcli
