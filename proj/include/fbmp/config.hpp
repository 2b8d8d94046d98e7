#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/battery.hpp"
#include "fbmp/error.hpp"
#include "fbmp/functional.hpp"
#include "fbmp/io.hpp"
#include "fbmp/model.hpp"
#include "fbmp/mollify.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/regularity.hpp"

namespace fbmp::config {

using io::Json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Coefficient expressions
//
//   expr := number | variable name | {"sum": [expr, ...]} | {"product": [expr, ...]}
//         | {"<family>": {"arg": expr, "scale": a, "freq": w, "shift": c}}   -> a f(w arg + c)
//         | {"table": {"csv": path, "vars": [name, ...]}}
//   family := sin cos tanh abs_tanh identity square abs sign exp sqrt_abs

/// Variable slots: t, x, y, z, then the discrete-functional coordinates x1..x3.
using Env = std::array<double, 7>;
using Expr = std::function<double(const Env&)>;

inline int var_slot(const std::string& v) {
    static const std::map<std::string, int> m = {{"t", 0}, {"x", 1}, {"y", 2}, {"z", 3}, {"x1", 4}, {"x2", 5}, {"x3", 6}};
    auto it = m.find(v);
    if (it == m.end()) throw ArgumentError("unknown variable '" + v + "'");
    return it->second;
}

inline std::function<double(double)> family(const std::string& f) {
    if (f == "sin") return [](double u) { return std::sin(u); };
    if (f == "cos") return [](double u) { return std::cos(u); };
    if (f == "tanh") return [](double u) { return std::tanh(u); };
    if (f == "abs_tanh") return [](double u) { return std::abs(std::tanh(u)); };
    if (f == "identity") return [](double u) { return u; };
    if (f == "square") return [](double u) { return u * u; };
    if (f == "abs") return [](double u) { return std::abs(u); };
    if (f == "sign") return [](double u) { return u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0); };
    if (f == "exp") return [](double u) { return std::exp(u); };
    if (f == "sqrt_abs") return [](double u) { return std::sqrt(std::abs(u)); };
    return nullptr;
}

/// Tensor table read from CSV (coordinates..., value), multilinear with clamping.
struct Table {
    std::vector<std::vector<double>> axes;
    std::vector<double> values;  // row-major over axes
    std::vector<int> slots;

    double operator()(const Env& e) const {
        std::size_t d = axes.size();
        std::vector<std::size_t> lo(d);
        std::vector<double> w(d);
        for (std::size_t a = 0; a < d; ++a) {
            const auto& ax = axes[a];
            double v = std::clamp(e[static_cast<std::size_t>(slots[a])], ax.front(), ax.back());
            auto it = std::upper_bound(ax.begin(), ax.end(), v);
            std::size_t i = it == ax.begin() ? 0 : static_cast<std::size_t>(it - ax.begin()) - 1;
            i = std::min(i, ax.size() - 2);
            lo[a] = i;
            w[a] = (v - ax[i]) / (ax[i + 1] - ax[i]);
        }
        double s = 0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
            double wt = 1;
            std::size_t flat = 0;
            for (std::size_t a = 0; a < d; ++a) {
                bool hi = (corner >> a) & 1u;
                wt *= hi ? w[a] : 1 - w[a];
                flat = flat * axes[a].size() + lo[a] + (hi ? 1 : 0);
            }
            if (wt != 0.0) s += wt * values[flat];
        }
        return s;
    }
};

inline std::shared_ptr<Table> load_table(const fs::path& p, const std::vector<std::string>& vars) {
    std::ifstream in(p);
    if (!in) throw ArgumentError("cannot read coefficient table " + p.string());
    std::string line;
    std::getline(in, line);  // header
    std::size_t d = vars.size();
    if (d < 1 || d > 4) throw ArgumentError("coefficient tables take 1 to 4 coordinates");
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> r;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
        if (r.size() != d + 1) throw ArgumentError("coefficient table row has the wrong number of columns: " + line);
        rows.push_back(std::move(r));
    }
    auto t = std::make_shared<Table>();
    t->axes.resize(d);
    for (std::size_t a = 0; a < d; ++a) {
        std::set<double> u;
        for (auto& r : rows) u.insert(r[a]);
        t->axes[a].assign(u.begin(), u.end());
        if (t->axes[a].size() < 2) throw ArgumentError("coefficient table axis needs at least two values");
        t->slots.push_back(var_slot(vars[a]));
    }
    std::size_t n = 1;
    for (auto& ax : t->axes) n *= ax.size();
    if (rows.size() != n) throw ArgumentError("coefficient table is not a full tensor grid");
    t->values.assign(n, std::nan(""));
    for (auto& r : rows) {
        std::size_t flat = 0;
        for (std::size_t a = 0; a < d; ++a) {
            auto& ax = t->axes[a];
            flat = flat * ax.size() + static_cast<std::size_t>(std::lower_bound(ax.begin(), ax.end(), r[a]) - ax.begin());
        }
        t->values[flat] = r[d];
    }
    for (double v : t->values)
        if (std::isnan(v)) throw ArgumentError("coefficient table has duplicate or missing nodes");
    return t;
}

/// Parses an expression; `allowed` restricts the variables it may read.
inline Expr parse_expr(const Json& j, const std::set<std::string>& allowed, const fs::path& base_dir = {}) {
    auto check_var = [&](const std::string& v) {
        if (!allowed.count(v)) throw ArgumentError("variable '" + v + "' not allowed in this coefficient");
        return var_slot(v);
    };
    if (j.is_number()) {
        double c = j.get<double>();
        return [c](const Env&) { return c; };
    }
    if (j.is_string()) {
        int s = check_var(j.get<std::string>());
        return [s](const Env& e) { return e[static_cast<std::size_t>(s)]; };
    }
    if (!j.is_object() || j.size() != 1) throw ArgumentError("expression must be a number, a variable or a one-key object: " + j.dump());
    const std::string key = j.begin().key();
    const Json& val = j.begin().value();
    if (key == "sum" || key == "product") {
        if (!val.is_array() || val.empty()) throw ArgumentError(key + " needs a nonempty list");
        std::vector<Expr> parts;
        for (auto& v : val) parts.push_back(parse_expr(v, allowed, base_dir));
        if (key == "sum")
            return [parts](const Env& e) {
                double s = 0;
                for (auto& p : parts) s += p(e);
                return s;
            };
        return [parts](const Env& e) {
            double s = 1;
            for (auto& p : parts) s *= p(e);
            return s;
        };
    }
    if (key == "table") {
        std::vector<std::string> vars = val.at("vars").get<std::vector<std::string>>();
        for (auto& v : vars) check_var(v);
        fs::path p = val.at("csv").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        auto t = load_table(p, vars);
        return [t](const Env& e) { return (*t)(e); };
    }
    auto f = family(key);
    if (!f) throw ArgumentError("unknown coefficient family '" + key + "'");
    Json spec = val.is_object() ? val : Json::object();
    if (!val.is_object() && !val.is_null()) spec["arg"] = val;
    for (auto& [k, _] : spec.items())
        if (k != "arg" && k != "scale" && k != "freq" && k != "shift") throw ArgumentError("unknown leaf parameter '" + k + "'");
    Expr arg = parse_expr(spec.value("arg", Json("x")), allowed, base_dir);
    double a = spec.value("scale", 1.0), w = spec.value("freq", 1.0), c = spec.value("shift", 0.0);
    return [f, arg, a, w, c](const Env& e) { return a * f(w * arg(e) + c); };
}

inline CoefficientBundle parse_bundle(const Json& j, double K, const std::string& label, const fs::path& base_dir = {}) {
    for (auto& [k, _] : j.items())
        if (k != "b" && k != "sigma" && k != "h" && k != "g") throw ArgumentError("unknown bundle key '" + k + "'");
    CoefficientBundle c;
    c.K = K;
    c.label = label;
    if (j.contains("b")) {
        auto e = parse_expr(j["b"], {"t", "x", "y", "z"}, base_dir);
        c.b = [e](double t, double x, double y, double z) { return e({t, x, y, z, 0, 0, 0}); };
    }
    if (j.contains("sigma")) {
        auto e = parse_expr(j["sigma"], {"t", "x", "y"}, base_dir);
        c.sigma = [e](double t, double x, double y) { return e({t, x, y, 0, 0, 0, 0}); };
    }
    if (j.contains("h")) {
        auto e = parse_expr(j["h"], {"t", "x", "y", "z"}, base_dir);
        c.h = [e](double t, double x, double y, double z) { return e({t, x, y, z, 0, 0, 0}); };
    }
    if (!j.contains("g")) throw ArgumentError("bundle needs a terminal map g");
    auto g = parse_expr(j["g"], {"x"}, base_dir);
    c.g = [g](double x) { return g({0, x, 0, 0, 0, 0, 0}); };
    return c;
}

// ---------------------------------------------------------------------------
// Run configuration

struct MollifyConfig {
    std::vector<int> schedule;
    CascadeOptions options;
};

struct SimulationConfig {
    std::size_t M = 10000;
    std::uint64_t seed = 1;
    std::size_t substeps = 1;
    std::size_t block = 10000;
    std::size_t persist_paths = 1000;
    double max_reflected_fraction = 0.01;
};

struct VerifyConfig {
    bool enabled = true;
    BatteryOptions battery;
    bool halving = false;
};

struct RegularityConfig {
    bool enabled = true;
    std::size_t M = 5000;
    std::vector<std::size_t> delta_steps = {1, 4, 16, 64};
    double horizon_cut = 0.0;
    double target_ratio = 0.1;
    // Conditional estimate.
    std::optional<double> t, T0;
    std::size_t buckets = 8;
    std::vector<std::size_t> fit_steps = {4, 8, 16, 32, 64};
    // k-weak check.
    KWeakOptions kweak;
    double bsde_ms_tolerance = 1e-2;
    ComparisonOptions comparison;
};

struct FunctionalConfig {
    Json g, sigma = 1.0, h = 0.0;
    std::vector<double> partition;
    std::size_t param_nodes = 21;
    std::size_t M = 10000;
    std::size_t oracle_outer = 10000, oracle_inner = 0;
    double oracle_dt = 1e-3;
};

struct RunConfig {
    std::string label = "run";
    ProblemSpec problem;
    Json bundle_decl;
    CoefficientBundle bundle;
    double dt = 1e-3, dx = 0.01;
    SolverOptions solver;
    AuditOptions audit;
    MollifyConfig mollify;
    SimulationConfig sim;
    VerifyConfig verify;
    RegularityConfig regularity;
    std::optional<FunctionalConfig> functional;
    bool strict = false;
    fs::path out = "run";
    Json raw;  // the parsed document, for hashing

    Grid grid() const { return Grid::from_spacing(problem.T, dt, problem.halfwidth(), dx); }
};

namespace detail {

inline void only_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ArgumentError(where + " must be an object");
    for (auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* a : keys) ok = ok || k == a;
        if (!ok) throw ArgumentError("unknown key '" + k + "' in " + where);
    }
}

template <class T>
void take(const Json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_config(const Json& j, const fs::path& base_dir = {}) {
    using detail::only_keys;
    using detail::take;
    try {
        RunConfig c;
        c.raw = j;
        only_keys(j, {"label", "problem", "bundle", "grid", "solver", "audit", "mollify", "simulation", "verify",
                      "regularity", "functional", "strict", "out"},
                  "config");
        take(j, "label", c.label);
        take(j, "strict", c.strict);
        if (j.contains("out")) c.out = j["out"].get<std::string>();
        if (j.contains("problem")) {
            const auto& p = j["problem"];
            only_keys(p, {"x0", "T", "L", "K"}, "problem");
            take(p, "x0", c.problem.x0);
            take(p, "T", c.problem.T);
            take(p, "K", c.problem.K);
            if (p.contains("L")) c.problem.L = p["L"].get<double>();
        }
        if (!(c.problem.T > 0) || !(c.problem.K > 0)) throw ArgumentError("problem needs T > 0 and K > 0");
        if (!j.contains("bundle")) throw ArgumentError("config needs a bundle");
        c.bundle_decl = j["bundle"];
        c.bundle = parse_bundle(j["bundle"], c.problem.K, c.label, base_dir);
        if (j.contains("grid")) {
            only_keys(j["grid"], {"dt", "dx"}, "grid");
            take(j["grid"], "dt", c.dt);
            take(j["grid"], "dx", c.dx);
        }
        if (j.contains("solver")) {
            const auto& s = j["solver"];
            only_keys(s, {"theta", "picard_tol", "picard_max"}, "solver");
            take(s, "theta", c.solver.theta);
            take(s, "picard_tol", c.solver.picard_tol);
            take(s, "picard_max", c.solver.picard_max);
        }
        if (j.contains("audit")) {
            const auto& a = j["audit"];
            only_keys(a, {"samples", "modulus_tolerance"}, "audit");
            take(a, "samples", c.audit.sample_count);
            if (a.contains("modulus_tolerance")) c.audit.modulus_tolerance = a["modulus_tolerance"].get<double>();
        }
        if (j.contains("mollify")) {
            const auto& m = j["mollify"];
            only_keys(m, {"schedule", "eps_max", "samples"}, "mollify");
            take(m, "schedule", c.mollify.schedule);
            take(m, "eps_max", c.mollify.options.eps_max);
            take(m, "samples", c.mollify.options.samples);
        }
        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            only_keys(s, {"M", "seed", "substeps", "block", "persist_paths", "max_reflected_fraction"}, "simulation");
            take(s, "M", c.sim.M);
            take(s, "seed", c.sim.seed);
            take(s, "substeps", c.sim.substeps);
            take(s, "block", c.sim.block);
            take(s, "persist_paths", c.sim.persist_paths);
            take(s, "max_reflected_fraction", c.sim.max_reflected_fraction);
        }
        if (j.contains("verify")) {
            const auto& v = j["verify"];
            only_keys(v, {"enabled", "functionals", "pairs", "phis", "checkpoints", "terminal_tolerance", "halving",
                          "generator", "conditional", "cv_partition", "cv_buckets"},
                      "verify");
            take(v, "enabled", c.verify.enabled);
            take(v, "functionals", c.verify.battery.functionals);
            take(v, "phis", c.verify.battery.phis);
            take(v, "checkpoints", c.verify.battery.checkpoints);
            take(v, "terminal_tolerance", c.verify.battery.terminal_tolerance);
            take(v, "halving", c.verify.halving);
            take(v, "generator", c.verify.battery.generator);
            take(v, "conditional", c.verify.battery.conditional);
            take(v, "cv_partition", c.verify.battery.cv_partition);
            take(v, "cv_buckets", c.verify.battery.cv.x_buckets);
            if (v.contains("pairs"))
                for (auto& p : v["pairs"]) c.verify.battery.pairs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            for (auto& n : c.verify.battery.functionals) functional_by_name(n);
            for (auto& n : c.verify.battery.phis) test_function_by_name(n);
        }
        if (j.contains("regularity")) {
            const auto& r = j["regularity"];
            only_keys(r, {"enabled", "M", "delta_steps", "horizon_cut", "target_ratio", "t", "T0", "buckets", "fit_steps",
                          "s_grid", "kweak_delta_steps", "etas", "kweak_buckets", "bsde_ms_tolerance", "comparison_samples"},
                      "regularity");
            take(r, "enabled", c.regularity.enabled);
            take(r, "M", c.regularity.M);
            take(r, "delta_steps", c.regularity.delta_steps);
            take(r, "horizon_cut", c.regularity.horizon_cut);
            take(r, "target_ratio", c.regularity.target_ratio);
            if (r.contains("t")) c.regularity.t = r["t"].get<double>();
            if (r.contains("T0")) c.regularity.T0 = r["T0"].get<double>();
            take(r, "buckets", c.regularity.buckets);
            take(r, "fit_steps", c.regularity.fit_steps);
            take(r, "s_grid", c.regularity.kweak.s_grid);
            if (r.contains("kweak_delta_steps"))
                for (auto m : r["kweak_delta_steps"]) c.regularity.kweak.deltas.push_back(m.get<double>() * c.dt);
            take(r, "etas", c.regularity.kweak.etas);
            take(r, "kweak_buckets", c.regularity.kweak.buckets);
            take(r, "bsde_ms_tolerance", c.regularity.bsde_ms_tolerance);
            take(r, "comparison_samples", c.regularity.comparison.samples);
        }
        if (j.contains("functional")) {
            const auto& f = j["functional"];
            only_keys(f, {"partition", "g", "sigma", "h", "param_nodes", "M", "oracle_outer", "oracle_inner", "oracle_dt"},
                      "functional");
            FunctionalConfig fc;
            fc.partition = f.at("partition").get<std::vector<double>>();
            fc.g = f.at("g");
            if (f.contains("sigma")) fc.sigma = f["sigma"];
            if (f.contains("h")) fc.h = f["h"];
            take(f, "param_nodes", fc.param_nodes);
            take(f, "M", fc.M);
            take(f, "oracle_outer", fc.oracle_outer);
            take(f, "oracle_inner", fc.oracle_inner);
            take(f, "oracle_dt", fc.oracle_dt);
            c.functional = fc;
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
}

inline RunConfig load_config(const fs::path& p) { return parse_config(io::read_json(p), p.parent_path()); }

/// Parses the functional block into a FunctionalSpec over the given partition.
inline FunctionalSpec functional_spec(const RunConfig& c, const fs::path& base_dir = {}) {
    if (!c.functional) throw ArgumentError("config has no functional block");
    const auto& f = *c.functional;
    FunctionalSpec s;
    s.partition = make_partition(f.partition);
    s.K = c.problem.K;
    s.x0 = c.problem.x0;
    s.label = c.label + "_functional";
    std::size_t N = s.N();
    if (N > 3) throw ArgumentError("functional coefficients support at most 3 slots");
    std::set<std::string> slots;
    for (std::size_t i = 1; i <= N; ++i) slots.insert("x" + std::to_string(i));
    auto with = [&](std::set<std::string> extra) {
        extra.insert(slots.begin(), slots.end());
        return extra;
    };
    auto fill = [N](Env& e, const Slots& xs) {
        for (std::size_t i = 0; i < N; ++i) e[4 + i] = xs[i];
        e[1] = xs.back();
    };
    auto g = parse_expr(f.g, with({"x"}), base_dir);
    auto sg = parse_expr(f.sigma, with({"t", "x", "y"}), base_dir);
    auto h = parse_expr(f.h, with({"t", "x", "y", "z"}), base_dir);
    s.g = [g, fill](const Slots& xs) {
        Env e{};
        fill(e, xs);
        return g(e);
    };
    s.sigma = [sg, fill](double t, const Slots& xs, double y) {
        Env e{};
        fill(e, xs);
        e[0] = t;
        e[2] = y;
        return sg(e);
    };
    s.h = [h, fill](double t, const Slots& xs, double y, double z) {
        Env e{};
        fill(e, xs);
        e[0] = t;
        e[2] = y;
        e[3] = z;
        return h(e);
    };
    return s;
}

/// True when the expression is the constant zero.
inline bool is_zero(const Json& j) { return j.is_number() && j.get<double>() == 0.0; }

}  // namespace fbmp::config
