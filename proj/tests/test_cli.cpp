#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"

#ifdef __unix__
#include <sys/wait.h>
#endif

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* cli_path() { return std::getenv("PILOTWAVE_CLI"); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
#ifdef __unix__
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
#else
    return rc;
#endif
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "pw_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli: config validation failures exit 2 without artifacts") {
    if (!cli_path()) {
        MESSAGE("PILOTWAVE_CLI not set; skipping CLI tests");
        return;
    }
    const fs::path dir = fresh_dir("validation");

    CHECK(run_cli("cmb --config " + (dir / "missing.json").string()) == 2);

    write_file(dir / "bad.json", "{ not json");
    CHECK(run_cli("cmb --config " + (dir / "bad.json").string() + " --output-dir " +
                  (dir / "out_a").string()) == 2);

    write_file(dir / "unknown.json", R"({"seed": 1, "surprise": true})");
    CHECK(run_cli("cmb --config " + (dir / "unknown.json").string() + " --output-dir " +
                  (dir / "out_b").string()) == 2);

    write_file(dir / "noseed.json", R"({"l_min": 2, "l_max": 4})");
    CHECK(run_cli("cmb --config " + (dir / "noseed.json").string() + " --output-dir " +
                  (dir / "out_c").string()) == 2);

    for (const char* out : {"out_a", "out_b", "out_c"}) {
        CHECK(!fs::exists(dir / out / "cl.csv"));
        CHECK(!fs::exists(dir / out / "run.json"));
    }
}

TEST_CASE("cli: cmb box run matches the analytic value and echoes run.json") {
    if (!cli_path()) return;
    const fs::path dir = fresh_dir("cmb");
    write_file(dir / "box.json", R"({
        "seed": 1,
        "spectrum": {"amplitude": 19.739208802178716, "tilt": 1.0,
                     "deficit": {"c1": 0.8, "c2": 0.0, "c3": 1.0}},
        "transfer": {"kind": "box", "k1": 1.0, "k2": 2.718281828459045},
        "l_min": 2, "l_max": 5
    })");
    REQUIRE(run_cli("cmb --config " + (dir / "box.json").string() + " --output-dir " +
                    (dir / "out").string()) == 0);

    std::ifstream csv(dir / "out" / "cl.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "l,Cl_uncorrected,Cl_corrected,ratio");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
        double l, plain, corr, ratio;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &l, &plain, &corr, &ratio) == 4);
        CHECK(plain == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(corr < plain);  // xi < 1 on the window
        CHECK(ratio == doctest::Approx(corr / plain).epsilon(1e-12));
        ++rows;
    }
    CHECK(rows == 4);

    const json run = json::parse(slurp(dir / "out" / "run.json"));
    CHECK(run.at("subcommand") == "cmb");
    CHECK(run.at("seed") == 1);
    CHECK(run.at("config").contains("spectrum"));
    CHECK(run.at("timing").contains("wall_seconds"));
}

TEST_CASE("cli: fit recovers a synthetic decay from CSV") {
    if (!cli_path()) return;
    const fs::path dir = fresh_dir("fit");
    std::ostringstream csv;
    csv << "t,hbar,err\n";
    csv.precision(17);
    for (int i = 0; i < 14; ++i) {
        const double t = 0.7 * i;
        const double h = 2.0 * std::exp(-0.9 * t / (2.0 * 3.14159265358979323846)) + 0.05;
        csv << t << "," << h << ",0\n";
    }
    write_file(dir / "hcurve.csv", csv.str());
    write_file(dir / "fit.cfg.json",
               std::string(R"({"seed": 1, "input": ")") + (dir / "hcurve.csv").string() +
                   "\"}");
    REQUIRE(run_cli("fit --config " + (dir / "fit.cfg.json").string() + " --output-dir " +
                    (dir / "out").string()) == 0);

    const json fit = json::parse(slurp(dir / "out" / "fit.json"));
    CHECK(fit.at("H0").get<double>() == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(fit.at("b").get<double>() == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(fit.at("c").get<double>() == doctest::Approx(0.05).epsilon(1e-4));
    CHECK(fit.at("tau").get<double>() ==
          doctest::Approx(2.0 * 3.14159265358979323846 / 0.9).epsilon(1e-6));
}

TEST_CASE("cli: reproducibility across reruns and thread counts") {
    if (!cli_path()) return;
    const fs::path dir = fresh_dir("determinism");
    write_file(dir / "typ.json",
               R"({"seed": 77, "n_samples": 20000, "nesting": {"n_samples": 20000}})");
    write_file(dir / "relax.json", R"({
        "seed": 5,
        "superposition": {"modes_per_axis": 3},
        "grid": {"half_width": 6.0, "fine_cells": 60, "coarse_cell": 0.6},
        "error_grids": [40],
        "rho0": {"kind": "gaussian"},
        "times": {"t_max": 1.5, "count": 3},
        "integrator": {"rel_tol": 1e-6, "abs_tol": 1e-9}
    })");

    REQUIRE(run_cli("typicality --config " + (dir / "typ.json").string() + " --output-dir " +
                    (dir / "t1").string()) == 0);
    REQUIRE(run_cli("typicality --config " + (dir / "typ.json").string() + " --output-dir " +
                    (dir / "t2").string()) == 0);
    CHECK(slurp(dir / "t1" / "typicality.csv") == slurp(dir / "t2" / "typicality.csv"));
    CHECK(slurp(dir / "t1" / "report.txt") == slurp(dir / "t2" / "report.txt"));

    // run.json matches except for wall-clock timing.
    json r1 = json::parse(slurp(dir / "t1" / "run.json"));
    json r2 = json::parse(slurp(dir / "t2" / "run.json"));
    r1.erase("timing");
    r2.erase("timing");
    CHECK(r1 == r2);

    REQUIRE(run_cli("relax --config " + (dir / "relax.json").string() +
                    " --threads 1 --output-dir " + (dir / "r1").string()) == 0);
    REQUIRE(run_cli("relax --config " + (dir / "relax.json").string() +
                    " --threads 4 --output-dir " + (dir / "r4").string()) == 0);
    CHECK(slurp(dir / "r1" / "hcurve.csv") == slurp(dir / "r4" / "hcurve.csv"));
    CHECK(slurp(dir / "r1" / "coarse_l1.csv") == slurp(dir / "r4" / "coarse_l1.csv"));
}

TEST_CASE("cli: numerical failures exit 3") {
    if (!cli_path()) return;
    const fs::path dir = fresh_dir("numfail");
    // A step budget this small guarantees TooManyDrops inside transport.
    write_file(dir / "relax.json", R"({
        "seed": 5,
        "superposition": {"modes_per_axis": 3},
        "grid": {"half_width": 6.0, "fine_cells": 60, "coarse_cell": 0.6},
        "error_grids": [40],
        "rho0": {"kind": "gaussian"},
        "times": {"t_max": 1.5, "count": 3},
        "integrator": {"max_steps": 2}
    })");
    CHECK(run_cli("relax --config " + (dir / "relax.json").string() + " --output-dir " +
                  (dir / "out").string()) == 3);
    CHECK(!fs::exists(dir / "out" / "hcurve.csv"));
}
