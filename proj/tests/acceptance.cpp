// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [work_dir]

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/battery.hpp"
#include "fbmp/config.hpp"
#include "fbmp/functional.hpp"
#include "fbmp/io.hpp"
#include "fbmp/mollify.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/pipeline.hpp"
#include "fbmp/regularity.hpp"
#include "fbmp/simulate.hpp"

namespace fs = std::filesystem;
using namespace fbmp;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

fs::path work_dir;

config::RunConfig shipped(const std::string& name) { return config::load_config(fs::path(FBMP_CONFIG_DIR) / (name + ".json")); }

// ---------------------------------------------------------------------------
// Shared heat-quadratic setup: x^2 terminal, unit diffusion, no driver.

struct Heat {
    config::RunConfig cfg = shipped("heat_quadratic");
    CoefficientBundle c = cfg.bundle;
    Grid grid = cfg.grid();
    FieldSolution field = solve_quasilinear(c, grid, cfg.solver);
};

const Heat& heat() {
    static const Heat h;
    return h;
}

const PathEnsemble& heat_ensemble() {
    static const PathEnsemble e = [] {
        const auto& h = heat();
        return simulate_forward(h.field, h.c, h.cfg.problem.x0, h.cfg.regularity.M, h.cfg.sim.seed);
    }();
    return e;
}

// ---------------------------------------------------------------------------
// CLI runs, memoized by (config, threads).

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CliRun {
    int exit_code = -1;
    fs::path out;
};

const CliRun& cli_run(const std::string& config, unsigned threads) {
    static std::map<std::pair<std::string, unsigned>, CliRun> cache;
    auto key = std::make_pair(config, threads);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    CliRun r;
    r.out = work_dir / ("cli_" + config + "_t" + std::to_string(threads));
    fs::remove_all(r.out);
    std::string cmd = std::string("\"") + FBMP_CLI_PATH + "\" all --config \"" +
                      (fs::path(FBMP_CONFIG_DIR) / (config + ".json")).string() + "\" --out \"" + r.out.string() +
                      "\" --threads " + std::to_string(threads) + " > \"" + r.out.string() + ".log\" 2>&1";
    int rc = std::system(cmd.c_str());
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return cache.emplace(key, r).first->second;
}

std::map<std::string, std::string> report_files(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            m[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
    return m;
}

// ---------------------------------------------------------------------------

Outcome c1_heat_oracle() {
    const auto& h = heat();
    double u = h.field.value(0.0, 0.0), ux = h.field.slope(0.0, 1.0);
    bool ok = std::abs(u - 1.0) <= 5e-3 && std::abs(ux - 2.0) <= 1e-3;
    return {ok, fmt("u(0,0)=%.9f (tol 5e-3), u_x(0,1)=%.9f (tol 1e-3)", u, ux)};
}

Outcome c2_separation() {
    auto cfg = shipped("separation");
    auto f = solve_quasilinear(cfg.bundle, cfg.grid(), cfg.solver);
    double u = f.value(0.0, 0.0);
    return {std::abs(u - 1.0) <= 1e-2, fmt("u(0,0)=%.9f (tol 1e-2), picard iterations %d", u, f.picard_max_iterations)};
}

Outcome c3_grid_convergence() {
    const auto& h = heat();
    Grid fine = Grid::from_spacing(h.grid.T(), 0.5 * h.grid.dt, h.grid.L(), h.grid.dx / std::sqrt(2.0));
    auto ff = solve_quasilinear(h.c, fine, h.cfg.solver);
    double eu0 = std::abs(h.field.value(0, 0) - 1.0), eu1 = std::abs(ff.value(0, 0) - 1.0);
    double ex0 = std::abs(h.field.slope(0, 1) - 2.0), ex1 = std::abs(ff.slope(0, 1) - 2.0);
    double ru = eu0 / eu1, rx = ex0 / ex1;
    bool ok = ru >= 1.8 && rx >= 1.8;
    // Diagnostic only: the same halving against the heat kernel for g = cos, u(0,0) = exp(-T/2).
    CoefficientBundle cb;
    cb.g = [](double x) { return std::cos(x); };
    double exact = std::exp(-0.5 * h.grid.T());
    double ec0 = std::abs(solve_quasilinear(cb, h.grid, h.cfg.solver).value(0, 0) - exact);
    double ec1 = std::abs(solve_quasilinear(cb, fine, h.cfg.solver).value(0, 0) - exact);
    return {ok, fmt("u error %.3e -> %.3e (ratio %.3f), u_x error %.3e -> %.3e (ratio %.3f), need >= 1.8; the oracle is "
                    "exact for the interior scheme, so the residual error is the truncation boundary's and does not "
                    "refine (diagnostic, g=cos: %.3e -> %.3e, ratio %.3f)",
                    eu0, eu1, ru, ex0, ex1, rx, ec0, ec1, ec0 / ec1)};
}

Outcome c4_battery() {
    const auto& h = heat();
    const std::size_t M = 100000;
    std::uint64_t seed = h.cfg.sim.seed;
    BatteryOptions o;
    SimulationOptions sim;
    auto r = run_battery(h.field, h.c, 0.0, M, seed, sim, o, 10000);
    SimulationOptions half = sim;
    half.substeps = 2;
    auto fine = run_battery(h.field, h.c, 0.0, M, seed, half, o, 10000);
    attach_scaling(r, fine);
    io::write_json(work_dir / "c4_fbmp_report.json", io::to_json(r));
    bool mart = r.mx.pass && r.my.pass && r.generator.pass;
    bool scaling = r.qv_xx_scaling->pass && r.qv_xy_scaling->pass && r.qv_yy_scaling->pass && r.representation_scaling->pass;
    double bnd = r.boundary.terminal_moment;
    bool boundary = bnd <= 1e-4;

    // Fault injection: each repetition simulates once, then corrupts copies of every block.
    const std::size_t reps = 100, Mr = 5000;
    const double eta = 0.1;
    std::vector<BatteryOptions> fo(4);
    for (auto& f : fo) {
        f.generator = false;
        f.conditional = false;
    }
    fo[1].fault.drift_x = 0.1;
    fo[2].fault.jump = 2 * eta;
    fo[2].fault.jump_time = 0.5 * h.grid.T();
    fo[3].fault.terminal_shift = 0.1;
    std::vector<std::size_t> detected(4, 0);
    for (std::size_t rep = 0; rep < reps; ++rep) {
        std::vector<BatterySamples> s(4);
        for_each_block(h.field, h.c, 0.0, Mr, seed + 1000 + rep, sim, 1000, [&](PathEnsemble& e) {
            for (std::size_t f = 0; f < 4; ++f) {
                PathEnsemble copy = e;
                s[f].append(battery_samples(copy, h.c, fo[f]));
            }
        });
        for (std::size_t f = 0; f < 4; ++f)
            if (!battery_report(s[f], fo[f], h.c.K, h.grid.T()).pass()) ++detected[f];
    }
    bool faults = detected[1] >= 99 && detected[2] >= 99 && detected[3] >= 99;
    std::string d = fmt("M=%zu: martingale %s (M_x %s, M_y %s, generator %s, threshold %.2f); halving ratios qv_xx %.3f "
                        "qv_xy %.3f qv_yy %.3f representation %.3f (2 +- 20%%); terminal moment %.3e (tol 1e-4); "
                        "faults detected of %zu at M=%zu: drift %zu, jump %zu, terminal shift %zu; unfaulted false "
                        "alarms %zu",
                        M, mart ? "pass" : "fail", r.mx.pass ? "pass" : "fail", r.my.pass ? "pass" : "fail",
                        r.generator.pass ? "pass" : "fail", r.mx.threshold, r.qv_xx_scaling->ratio, r.qv_xy_scaling->ratio,
                        r.qv_yy_scaling->ratio, r.representation_scaling->ratio, bnd, reps, Mr, detected[1], detected[2],
                        detected[3], detected[0]);
    return {mart && scaling && boundary && faults, d};
}

Outcome c5_z_regularity() {
    const auto& run = cli_run("abs_tanh_cascade", 1);
    auto j = io::read_json(run.out / "regularity.json");
    auto avg = j["z_avg"], shift = j["z_shift"];
    bool ok = avg["monotone"].get<bool>() && shift["monotone"].get<bool>() &&
              avg["finest_over_coarsest"].get<double>() <= 0.1 && shift["finest_over_coarsest"].get<double>() <= 0.1;
    // Row means at the widest window, by level.
    std::ifstream in(run.out / "z_avg.csv");
    std::string line, rows;
    std::getline(in, line);
    while (std::getline(in, line)) rows += (rows.empty() ? "" : "; ") + line.substr(0, line.find(',', line.find(',') + 1));
    return {ok, fmt("z_avg monotone %s ratio %.3g, z_shift monotone %s ratio %.3g (need monotone and <= 0.1); "
                    "z_avg (level, widest window): %s; mollifying the kink raises Z energy with n",
                    avg["monotone"].get<bool>() ? "yes" : "no", avg["finest_over_coarsest"].get<double>(),
                    shift["monotone"].get<bool>() ? "yes" : "no", shift["finest_over_coarsest"].get<double>(),
                    rows.c_str())};
}

Outcome c6_conditional() {
    const auto& e = heat_ensemble();
    double dt = e.dt();
    std::vector<double> d = {4 * dt, 8 * dt, 16 * dt, 32 * dt, 64 * dt};
    auto r = conditional_regularity(e, 0.5, d, 0.5, 8);
    std::size_t cells = 0, within = 0;
    double worst = 0;
    for (auto& b : r.buckets)
        for (std::size_t i = 0; i < d.size(); ++i) {
            double oracle = 8 * b.x2_mean * d[i] + 4 * d[i] * d[i] - 2 * d[i] * dt;
            double z = std::abs(b.by_delta[i].mean - oracle) / b.by_delta[i].se;
            worst = std::max(worst, z);
            ++cells;
            if (z <= 3.0) ++within;
        }
    bool ok = within == cells && std::abs(r.slope - 1.0) <= 0.2;
    return {ok, fmt("%zu/%zu bucket cells within 3 SE (worst %.2f SE), slope %.4f (1 +- 0.2), M=%zu", within, cells, worst,
                    r.slope, e.M)};
}

Outcome c7_mollification() {
    CoefficientBundle c;
    c.g = [](double x) { return std::tanh(x); };
    Grid g = Grid::from_spacing(1.0, 0.01, 4.0, 0.01);
    auto fam = build_cascade(c, {2, 5, 10, 20}, g);
    bool ok = fam.ok() && fam.levels.size() == 4;
    std::string errs;
    for (auto& l : fam.levels) {
        double dense = 0;
        for (double x = -4.0; x <= 4.0; x += 0.001) dense = std::max(dense, std::abs(l.bundle.g(x) - std::tanh(x)));
        ok = ok && l.max_error() <= 1.0 / l.n && dense <= 1.0 / l.n;
        errs += fmt("%sn=%d %.4f", errs.empty() ? "" : ", ", l.n, dense);
    }
    CoefficientBundle sgn;
    sgn.g = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
    auto bad = build_cascade(sgn, {2}, Grid::from_spacing(1.0, 0.01, 3.0, 0.01));
    double be = bad.rejected.empty() ? 0.0 : bad.rejected.front().best_error;
    ok = ok && !bad.ok() && be >= 0.5;
    return {ok, fmt("tanh sup errors %s (<= 1/n); sign %s with error %.4f (>= 0.5)", errs.c_str(),
                    bad.ok() ? "accepted" : "rejected", be)};
}

Outcome c8_gradient_bounds() {
    CoefficientBundle c;
    c.g = [](double x) { return std::abs(std::tanh(x)); };
    Grid g = Grid::from_spacing(1.0, 0.01, 4.0, 0.01);
    auto fam = build_cascade(c, {2, 5, 20, 50}, g);
    if (!fam.ok()) return {false, "cascade rejected"};
    std::vector<double> g2, ux;
    for (auto& l : fam.levels) {
        double m = 0;
        for (double v : l.g_table->d2) m = std::max(m, std::abs(v));
        g2.push_back(m);
        ux.push_back(gradient_bounds(solve_quasilinear(l.bundle, g), XWindow{-3, 3}).sup_ux);
    }
    double growth = g2.back() / g2.front();
    double worst = *std::max_element(ux.begin(), ux.end());
    bool ok = growth >= 10 && worst <= 2 * ux.front();
    return {ok, fmt("|tanh| levels n=2,5,20,50: sup|g''| %.2f -> %.2f (growth %.1fx, need >= 10), sup|u_x| %.4f %.4f %.4f "
                    "%.4f (max %.4f <= 2 x %.4f)",
                    g2.front(), g2.back(), growth, ux[0], ux[1], ux[2], ux[3], worst, ux.front())};
}

Outcome c9_functional() {
    FunctionalSpec s;
    s.partition = make_partition({0.0, 0.5, 1.0});
    s.g = [](const Slots& xs) { return xs[0]; };
    s.x0 = 0.3;
    s.K = 1.0;
    s.label = "first_slot";
    Grid g = Grid::from_spacing(1.0, 1e-3, 5.0, 0.01);
    auto cas = solve_cascade(s, g);
    auto e = simulate_functional(s, cas, 5000, 31);
    double y0 = e.Y[0];
    OracleOptions oo;
    oo.dt = 1e-2;
    auto orc = nested_mc_oracle(s, 20000, 0, 32, oo);
    bool hand = std::abs(y0 - s.x0) <= 1e-3;
    bool oracle = std::abs(y0 - orc.mean) <= 3 * orc.se;

    const auto& h = heat();
    auto lifted = lift_markovian(h.c, make_partition({0.0, 1.0}), 0.0);
    auto one = solve_cascade(lifted, h.grid);
    double dev = 0;
    for (std::size_t i = 0; i < h.field.u.size(); ++i) dev = std::max(dev, std::abs(one.levels[0].fields[0].u[i] - h.field.u[i]));
    auto a = simulate_forward(h.field, h.c, 0.0, 2000, 33);
    auto b = simulate_functional(lifted, one, 2000, 33);
    bool bits = a.W == b.W && a.X == b.X && a.Y == b.Y && a.Z == b.Z;
    bool ok = hand && oracle && bits && dev <= 1e-10;
    return {ok, fmt("Y_0=%.6f vs x0=%.1f (tol 1e-3); oracle %.5f +- %.5f (3 SE); N=1 cascade deviation %.1e, paths %s",
                    y0, s.x0, orc.mean, orc.se, dev, bits ? "bit-identical" : "differ")};
}

Outcome c10_predicates() {
    const auto& e = heat_ensemble();
    double dt = e.dt(), T = e.T();
    auto cr = conditional_regularity(e, 0.5, {4 * dt, 16 * dt, 64 * dt}, 0.5, 8);
    auto k = canonical_k(cr.C_envelope, cr.alpha, T);
    auto kv = k_validate(k, cr.C_envelope, cr.alpha);
    KFunction zero{"zero", T, [](double, double, double) { return 0.0; }};
    auto kz = k_validate(zero, cr.C_envelope, cr.alpha);
    auto kw = k_weak_check(e, k);

    // k at (T/2, 4 dt) exceeds 1 for eta below about 0.25, where no exceedance can beat it.
    const double eta = 0.5;
    const double k_cell = k(0.5 * T, 4 * dt, eta);
    PathEnsemble jumped = e;
    inject_jump(jumped, 0.5 * T + 0.5 * dt, 2 * eta);
    KWeakOptions jo;
    jo.s_grid = {0.5 * T};
    jo.deltas = {4 * dt};
    jo.etas = {eta};
    auto kj = k_weak_check(jumped, k, jo);

    CoefficientBundle ex1;
    ex1.sigma = [](double t, double, double) { return 1.0 + 0.5 * t; };
    ex1.h = [](double, double, double y, double) { return -y; };
    auto r1 = comparison_precondition(ex1, T);
    CoefficientBundle lip;
    lip.sigma = [](double t, double, double y) { return 1.0 + 0.2 * std::tanh(y) + 0.1 * t; };
    lip.h = [](double, double x, double y, double z) { return std::sin(x) + 0.5 * std::tanh(z) - y; };
    auto r2 = comparison_precondition(lip, T);

    bool ok = kv.pass() && !kz.pass() && kw.exceedance_pass && !kj.exceedance_pass && r1.example1 && r1.pass() &&
              r2.w_vanishing;
    return {ok, fmt("k_validate canonical %s, zero %s; k_weak fitted (C=%.4g, alpha=%.3f) %s with %zu resolved cells, worst "
                    "margin %.3g; jump 2x%.1f (k=%.3f) %s; example 1 %s; Lipschitz sigma(t,y) modulus %s",
                    kv.pass() ? "pass" : "fail", kz.pass() ? "pass" : "fail", cr.C_envelope, cr.alpha,
                    kw.exceedance_pass ? "pass" : "fail", kw.resolved, kw.worst_margin, eta,
                    k_cell, kj.exceedance_pass ? "missed" : "detected", r1.example1 && r1.pass() ? "pass" : "fail",
                    r2.w_vanishing ? "vanishes" : "does not vanish")};
}

Outcome c11_determinism() {
    bool ok = true;
    std::string d;
    for (const char* cfg : {"heat_quadratic", "separation", "abs_tanh_cascade"}) {
        const auto& a = cli_run(cfg, 1);
        const auto& b = cli_run(cfg, 3);
        auto fa = report_files(a.out), fb = report_files(b.out);
        bool same = a.exit_code == b.exit_code && fa == fb && verify_manifest(a.out) && verify_manifest(b.out);
        ok = ok && same && !fa.empty();
        d += fmt("%s%s %zu files %s (exit %d)", d.empty() ? "" : ", ", cfg, fa.size(), same ? "identical" : "DIFFER",
                 a.exit_code);
    }
    return {ok, "threads 1 vs 3: " + d};
}

}  // namespace

int main(int argc, char** argv) {
    work_dir = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / ("fbmp_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(work_dir);
    std::vector<std::function<Outcome()>> criteria = {c1_heat_oracle,   c2_separation,      c3_grid_convergence,
                                                      c4_battery,       c5_z_regularity,    c6_conditional,
                                                      c7_mollification, c8_gradient_bounds, c9_functional,
                                                      c10_predicates,   c11_determinism};
    io::Json summary = io::Json::array();
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("criterion %zu: %s %s [%.1fs]\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        summary.push_back({{"criterion", i + 1}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}});
    }
    io::write_json(work_dir / "acceptance.json", summary);
    std::printf("%d of %zu criteria failed; reports in %s\n", failures, criteria.size(), work_dir.string().c_str());
    return failures == 0 ? 0 : 1;
}
