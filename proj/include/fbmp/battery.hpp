#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbmp/simulate.hpp"
#include "fbmp/verify.hpp"

namespace fbmp {

/// Deliberate corruption of a simulated ensemble, used to check the power of
/// the battery.
struct Fault {
    double drift_x = 0.0;         // added as drift * t to M_x
    double drift_y = 0.0;         // added as drift * t to M_y
    double terminal_shift = 0.0;  // added to Y_T
    double jump = 0.0;            // added to Y on (jump_time, T]
    double jump_time = 0.5;
};

struct BatteryOptions {
    std::vector<std::string> functionals = {"1", "X_t", "Y_t", "X_t^2", "X_tY_t", "tanh(X_t/2)", "tanh(Y_t/2)"};
    std::vector<TimePair> pairs;  // empty: quarters of the horizon
    std::vector<std::string> phis = {"x", "y", "x^2", "y^2", "xy", "exp(-x^2-y^2)"};
    std::size_t checkpoints = 50;
    double terminal_tolerance = 1e-4;
    std::vector<double> cv_partition;  // empty: quarters
    ConditionalVariationOptions cv;
    bool generator = true;
    bool conditional = true;
    Fault fault;
};

struct BatterySamples {
    Samples mx, my, gen, qv, rep, bnd, integ, cv;
    std::size_t reflected = 0;
    std::size_t paths = 0;
    double dt = 0;

    void append(const BatterySamples& o) {
        mx.append(o.mx);
        my.append(o.my);
        gen.append(o.gen);
        qv.append(o.qv);
        rep.append(o.rep);
        bnd.append(o.bnd);
        integ.append(o.integ);
        cv.append(o.cv);
        reflected += o.reflected;
        paths += o.paths;
        dt = o.dt;
    }
};

struct FbmpReport {
    std::string label;
    std::size_t paths = 0;
    std::size_t reflected = 0;
    double dt = 0;
    MartingaleReport mx, my, generator;
    QVReport qv;
    RepresentationReport representation;
    BoundaryReport boundary;
    IntegrabilityReport integrability;
    std::optional<ConditionalVariationReport> conditional;
    // Filled when a half-step companion run is available.
    std::optional<ScalingCheck> qv_xx_scaling, qv_xy_scaling, qv_yy_scaling, representation_scaling;

    bool martingale_pass() const { return mx.pass && my.pass; }
    bool pass() const {
        bool ok = mx.pass && my.pass && boundary.pass && integrability.pass;
        if (!generator.entries.empty()) ok = ok && generator.pass;
        if (conditional) ok = ok && conditional->pass;
        for (auto* s : {&qv_xx_scaling, &qv_xy_scaling, &qv_yy_scaling, &representation_scaling})
            if (*s) ok = ok && (*s)->pass;
        return ok;
    }
};

inline std::vector<TimePair> resolve_pairs(const BatteryOptions& o, double T) {
    return o.pairs.empty() ? default_time_pairs(T) : o.pairs;
}

inline Partition resolve_cv_partition(const BatteryOptions& o, double T) {
    if (o.cv_partition.empty()) return make_partition({0.0, 0.25 * T, 0.5 * T, 0.75 * T, T});
    return make_partition(o.cv_partition);
}

/// Per-path samples of the whole battery for one block of paths.
inline BatterySamples battery_samples(PathEnsemble& e, const CoefficientBundle& c, const BatteryOptions& o) {
    if (o.fault.terminal_shift != 0.0)
        for (std::size_t p = 0; p < e.M; ++p) e.Y[e.idx(p, e.nt() - 1)] += o.fault.terminal_shift;
    if (o.fault.jump != 0.0)
        for (std::size_t p = 0; p < e.M; ++p)
            for (std::size_t k = 0; k < e.nt(); ++k)
                if (e.t[k] > o.fault.jump_time) e.Y[e.idx(p, k)] += o.fault.jump;
    auto m = compensate(e, c);
    if (o.fault.drift_x != 0.0 || o.fault.drift_y != 0.0)
        for (std::size_t p = 0; p < e.M; ++p)
            for (std::size_t k = 0; k < e.nt(); ++k) {
                m.Mx.raw[e.idx(p, k)] += o.fault.drift_x * e.t[k];
                m.My.raw[e.idx(p, k)] += o.fault.drift_y * e.t[k];
            }
    std::vector<TestFunctional> fns;
    for (auto& n : o.functionals) fns.push_back(functional_by_name(n));
    auto pairs = resolve_pairs(o, e.T());
    BatterySamples s;
    s.mx = martingale_samples(m.Mx, e, fns, pairs);
    s.my = martingale_samples(m.My, e, fns, pairs);
    if (o.generator) {
        std::vector<TestFunction> phis;
        for (auto& n : o.phis) phis.push_back(test_function_by_name(n));
        s.gen = generator_samples(e, c, phis, fns, pairs);
    }
    auto cps = checkpoints(e, o.checkpoints);
    s.qv = qv_samples(e, c, m, cps);
    s.rep = representation_samples(e, c, m, cps);
    s.bnd = boundary_samples(e, c);
    s.integ = integrability_samples(e, c);
    if (o.conditional) s.cv = conditional_variation_samples(e, resolve_cv_partition(o, e.T()));
    s.reflected = e.reflected_count();
    s.paths = e.M;
    s.dt = e.dt();
    return s;
}

inline FbmpReport battery_report(const BatterySamples& s, const BatteryOptions& o, double K, double T) {
    FbmpReport r;
    r.paths = s.paths;
    r.reflected = s.reflected;
    r.dt = s.dt;
    r.mx = martingale_report("M_x", s.mx);
    r.my = martingale_report("M_y", s.my);
    if (o.generator) r.generator = martingale_report("generator", s.gen);
    r.qv = qv_report(s.qv);
    r.representation = representation_report(s.rep);
    r.boundary = boundary_report(s.bnd, o.terminal_tolerance);
    r.integrability = integrability_report(s.integ);
    if (o.conditional) {
        auto part = resolve_cv_partition(o, T);
        r.conditional = conditional_variation_report(s.cv, part.N(), K, T, o.cv);
    }
    return r;
}

/// Fills the dt-halving checks of `coarse` from a companion run at half the step.
inline void attach_scaling(FbmpReport& coarse, const FbmpReport& fine) {
    coarse.qv_xx_scaling = halving_check(coarse.qv.xx.mean_sq, fine.qv.xx.mean_sq);
    coarse.qv_xy_scaling = halving_check(coarse.qv.xy.mean_sq, fine.qv.xy.mean_sq);
    coarse.qv_yy_scaling = halving_check(coarse.qv.yy.mean_sq, fine.qv.yy.mean_sq);
    coarse.representation_scaling =
        halving_check(coarse.representation.residual.mean_sq, fine.representation.residual.mean_sq);
}

/// Simulates M paths in blocks and calls fn on each block.  Each path depends
/// only on (seed, global index), so the block size never changes results.
template <class Fn>
void for_each_block(const FieldSolution& field, const CoefficientBundle& c, double x0, std::size_t M,
                    std::uint64_t seed, SimulationOptions sim, std::size_t block, Fn&& fn) {
    if (block == 0) block = M;
    for (std::size_t first = 0; first < M; first += block) {
        std::size_t n = std::min(block, M - first);
        sim.first_path = first;
        auto e = simulate_forward(field, c, x0, n, seed, sim);
        fn(e);
    }
}

inline FbmpReport run_battery(const FieldSolution& field, const CoefficientBundle& c, double x0, std::size_t M,
                              std::uint64_t seed, const SimulationOptions& sim, const BatteryOptions& o,
                              std::size_t block = 10000) {
    if (sim.strict && M < min_martingale_paths)
        throw PowerError("martingale battery needs at least " + std::to_string(min_martingale_paths) + " paths");
    BatterySamples all;
    SimulationOptions lenient = sim;
    lenient.strict = false;
    for_each_block(field, c, x0, M, seed, lenient, block, [&](PathEnsemble& e) { all.append(battery_samples(e, c, o)); });
    double frac = static_cast<double>(all.reflected) / static_cast<double>(M);
    if (sim.strict && frac > sim.max_reflected_fraction)
        throw ResolutionError("truncation domain too small: too many reflected paths");
    auto r = battery_report(all, o, c.K, field.grid.T());
    r.label = c.label;
    return r;
}

}  // namespace fbmp
