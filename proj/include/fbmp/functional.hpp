#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/model.hpp"
#include "fbmp/parallel.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/rng.hpp"
#include "fbmp/simulate.hpp"
#include "fbmp/stats.hpp"

namespace fbmp {

using Slots = std::vector<double>;
using FunctionalTerminal = std::function<double(const Slots& xs)>;
using FunctionalDiffusion = std::function<double(double t, const Slots& xs, double y)>;
using FunctionalDrift = std::function<double(double t, const Slots& xs, double y, double z)>;

/// Coefficients that depend on the path through (X_{t_1 ^ t}, ..., X_{t_N ^ t}).
struct FunctionalSpec {
    Partition partition;
    FunctionalTerminal g;
    FunctionalDiffusion sigma = [](double, const Slots&, double) { return 1.0; };
    FunctionalDrift h = [](double, const Slots&, double, double) { return 0.0; };
    double K = 1.0;
    double x0 = 0.0;
    std::string label = "functional";

    std::size_t N() const { return partition.N(); }
};

/// Markovian bundle seen as a functional: every coefficient reads the last
/// slot, which carries the running state before T.
inline FunctionalSpec lift_markovian(const CoefficientBundle& c, const Partition& part, double x0) {
    FunctionalSpec s;
    s.partition = part;
    s.g = [c](const Slots& xs) { return c.g(xs.back()); };
    s.sigma = [c](double t, const Slots& xs, double y) { return c.sigma(t, xs.back(), y); };
    s.h = [c](double t, const Slots& xs, double y, double z) { return c.h(t, xs.back(), y, z); };
    s.K = c.K;
    s.x0 = x0;
    s.label = c.label;
    return s;
}

struct ParamAxis {
    double lo = 0, hi = 0;
    std::size_t n = 1;
    double node(std::size_t i) const {
        return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    /// Cell and weight; weights outside [0, 1] extrapolate linearly.
    std::pair<std::size_t, double> locate(double x) const {
        if (n == 1) return {0, 0.0};
        double h = (hi - lo) / static_cast<double>(n - 1);
        double s = (x - lo) / h;
        auto i = static_cast<std::ptrdiff_t>(std::floor(s));
        i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 2);
        return {static_cast<std::size_t>(i), s - static_cast<double>(i)};
    }
    bool contains(double x) const { return x >= lo - 1e-12 && x <= hi + 1e-12; }
};

/// u_k on (parameter tuple) x [t_{k-1}, t_k] x (x grid), one field per tuple.
struct CascadeLevel {
    std::size_t k = 1;              // 1-based interval index
    std::vector<ParamAxis> axes;    // k - 1 axes
    std::vector<FieldSolution> fields;
    std::size_t row_lo = 0, row_hi = 0;  // rows of the full grid
    int picard_max_iterations = 0;
    double stitch_error = 0;        // off-node mismatch with the next level at t_k
    double stitch_tolerance = 0;    // interpolation error estimate for that mismatch

    std::size_t tuples() const { return fields.size(); }
    std::size_t flat(const std::vector<std::size_t>& idx) const {
        std::size_t f = 0;
        for (std::size_t d = 0; d < axes.size(); ++d) f = f * axes[d].n + idx[d];
        return f;
    }
    std::vector<std::size_t> unflat(std::size_t f) const {
        std::vector<std::size_t> idx(axes.size());
        for (std::size_t d = axes.size(); d-- > 0;) {
            idx[d] = f % axes[d].n;
            f /= axes[d].n;
        }
        return idx;
    }
};

struct CascadeSolution {
    Partition partition;
    Grid grid;
    std::vector<CascadeLevel> levels;  // levels[k - 1] is u_k
    std::size_t param_nodes = 0;
    std::string label;
};

struct FunctionalCascadeOptions {
    std::size_t param_nodes = 21;
    SolverOptions solver;
    unsigned threads = 1;
    double max_cell_updates = 5e9;  // desk-scale budget on tuples x rows x columns
};

inline double cascade_cost(const FunctionalSpec& s, const Grid& grid, std::size_t P) {
    double cost = 0;
    for (std::size_t k = 1; k <= s.N(); ++k) {
        double rows = (s.partition.times[k] - s.partition.times[k - 1]) / grid.dt;
        cost += std::pow(static_cast<double>(P), static_cast<double>(k - 1)) * rows * static_cast<double>(grid.nx());
    }
    return cost;
}

namespace detail {

inline std::size_t row_of(const Grid& grid, double t) {
    double s = t / grid.dt;
    double r = std::round(s);
    if (std::abs(s - r) > 1e-6) {
        std::ostringstream os;
        os << "partition time " << t << " is not a grid node";
        throw ArgumentError(os.str());
    }
    return static_cast<std::size_t>(r);
}

inline std::string tuple_text(const std::vector<double>& v) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << ')';
    return os.str();
}

}  // namespace detail

/// Backward cascade k = N..1.  Future slots take the running variable x.
inline CascadeSolution solve_cascade(const FunctionalSpec& s, const Grid& grid, const FunctionalCascadeOptions& o = {}) {
    grid.validate();
    std::size_t N = s.N();
    if (N < 1) throw ArgumentError("partition needs at least one interval");
    if (std::abs(s.partition.times.back() - grid.T()) > 1e-9) throw ArgumentError("partition must end at the grid horizon");
    if (o.param_nodes < 2) throw ArgumentError("parameter grid needs at least two nodes");
    double cost = cascade_cost(s, grid, o.param_nodes);
    if (N > 3 || o.param_nodes > 41 || cost > o.max_cell_updates) {
        std::ostringstream os;
        os << "cascade refused: N = " << N << " (max 3), " << o.param_nodes << " parameter nodes (max 41), estimated "
           << cost << " cell updates per Picard sweep (budget " << o.max_cell_updates << ")";
        throw BudgetError(os.str());
    }
    CascadeSolution c;
    c.partition = s.partition;
    c.grid = grid;
    c.param_nodes = o.param_nodes;
    c.label = s.label;
    c.levels.resize(N);
    std::size_t nx = grid.nx();

    for (std::size_t k = N; k >= 1; --k) {
        CascadeLevel& lv = c.levels[k - 1];
        lv.k = k;
        lv.row_lo = detail::row_of(grid, s.partition.times[k - 1]);
        lv.row_hi = detail::row_of(grid, s.partition.times[k]);
        if (lv.row_hi <= lv.row_lo) throw ResolutionError("partition interval shorter than one time step");
        for (std::size_t j = 1; j < k; ++j) {
            double r = 6.0 * std::sqrt(s.K * s.partition.times[j]);
            lv.axes.push_back({s.x0 - r, s.x0 + r, o.param_nodes});
        }
        std::size_t ntup = 1;
        for (auto& a : lv.axes) ntup *= a.n;
        lv.fields.resize(ntup);
        const CascadeLevel* next = k < N ? &c.levels[k] : nullptr;

        parallel_for(ntup, o.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t f = b; f < e; ++f) {
                auto idx = lv.unflat(f);
                Slots frozen(k - 1);
                for (std::size_t d = 0; d + 1 < k; ++d) frozen[d] = lv.axes[d].node(idx[d]);
                std::vector<double> terminal(nx);
                if (!next) {
                    Slots xs(N);
                    std::copy(frozen.begin(), frozen.end(), xs.begin());
                    for (std::size_t j = 0; j < nx; ++j) {
                        std::fill(xs.begin() + static_cast<std::ptrdiff_t>(k - 1), xs.end(), grid.x[j]);
                        terminal[j] = s.g(xs);
                    }
                } else {
                    // u_k(frozen; t_k, x) = u_{k+1}(frozen, x; t_k, x), linear in the new slot.
                    const ParamAxis& ax = next->axes.back();
                    std::vector<std::size_t> nidx(idx);
                    nidx.push_back(0);
                    for (std::size_t j = 0; j < nx; ++j) {
                        auto [i, w] = ax.locate(grid.x[j]);
                        nidx.back() = i;
                        double a = next->fields[next->flat(nidx)].at(0, j);
                        nidx.back() = i + 1;
                        double bb = next->fields[next->flat(nidx)].at(0, j);
                        terminal[j] = w == 0.0 ? a : a + w * (bb - a);
                    }
                }
                auto sig = [&s, frozen, N](double t, double x, double y) {
                    Slots xs(frozen);
                    xs.resize(N, x);
                    return s.sigma(t, xs, y);
                };
                auto hh = [&s, frozen, N](double t, double x, double y, double z) {
                    Slots xs(frozen);
                    xs.resize(N, x);
                    return s.h(t, xs, y, z);
                };
                try {
                    lv.fields[f] = solve_rows(grid, lv.row_lo, lv.row_hi, terminal, sig, hh, o.solver);
                } catch (const ConvergenceError& err) {
                    throw ConvergenceError("cascade level " + std::to_string(k) + " at parameter tuple " +
                                           detail::tuple_text(frozen) + ": " + err.what());
                }
                lv.fields[f].label = s.label + ":u" + std::to_string(k);
            }
        });
        for (auto& fs : lv.fields) lv.picard_max_iterations = std::max(lv.picard_max_iterations, fs.picard_max_iterations);

        if (next) {
            // Stitching at cell midpoints, where both sides interpolate.
            const ParamAxis& ax = next->axes.back();
            double err = 0, d2x = 0, d2p = 0;
            for (std::size_t f = 0; f < ntup; ++f) {
                auto idx = lv.unflat(f);
                const auto& row = lv.fields[f].u;  // row 0 of u_k is t_{k-1}; stitch uses its last row
                std::size_t last = (lv.fields[f].nt() - 1) * nx;
                std::vector<std::size_t> nidx(idx);
                nidx.push_back(0);
                for (std::size_t j = 0; j + 1 < nx; ++j) {
                    double xm = 0.5 * (grid.x[j] + grid.x[j + 1]);
                    double left = 0.5 * (row[last + j] + row[last + j + 1]);
                    auto [i, w] = ax.locate(xm);
                    nidx.back() = i;
                    const auto& fa = next->fields[next->flat(nidx)];
                    nidx.back() = i + 1;
                    const auto& fb = next->fields[next->flat(nidx)];
                    double a = 0.5 * (fa.at(0, j) + fa.at(0, j + 1)), bv = 0.5 * (fb.at(0, j) + fb.at(0, j + 1));
                    double right = a + w * (bv - a);
                    err = std::max(err, std::abs(left - right));
                    if (j > 0) d2x = std::max(d2x, std::abs(row[last + j - 1] - 2 * row[last + j] + row[last + j + 1]));
                }
                for (std::size_t i = 1; i + 1 < ax.n; ++i)
                    for (std::size_t j = 0; j < nx; ++j) {
                        nidx.back() = i - 1;
                        double a = next->fields[next->flat(nidx)].at(0, j);
                        nidx.back() = i;
                        double bm = next->fields[next->flat(nidx)].at(0, j);
                        nidx.back() = i + 1;
                        double cc = next->fields[next->flat(nidx)].at(0, j);
                        d2p = std::max(d2p, std::abs(a - 2 * bm + cc));
                    }
            }
            lv.stitch_error = err;
            lv.stitch_tolerance = 0.125 * (d2x + d2p) + 1e-12;
        }
        if (k == 1) break;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Simulation

/// Ensemble plus the per-path flag for parameters clamped to the tabulated range.
struct FunctionalEnsemble : PathEnsemble {
    std::vector<std::uint8_t> clamped;
    std::size_t clamped_count() const {
        return static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), std::uint8_t{1}));
    }
};

struct FunctionalSimOptions {
    SimulationOptions sim;
    bool strict_params = false;  // extrapolation error instead of clamping
};

inline FunctionalEnsemble simulate_functional(const FunctionalSpec& s, const CascadeSolution& c, std::size_t M,
                                              std::uint64_t seed, const FunctionalSimOptions& o = {}) {
    if (M == 0) throw ArgumentError("ensemble needs at least one path");
    if (o.sim.substeps == 0) throw ArgumentError("substeps must be positive");
    if (c.levels.size() != s.N()) throw ArgumentError("cascade does not match the functional");
    FunctionalEnsemble e;
    e.t = refine_times(c.grid.t, o.sim.substeps);
    e.first_path = o.sim.first_path;
    e.seed = seed;
    e.substeps = o.sim.substeps;
    e.x0 = s.x0;
    e.L = c.grid.L();
    if (std::abs(s.x0) > e.L) throw ArgumentError("initial state outside the truncation domain");
    detail::allocate(e, M);
    e.clamped.assign(M, 0);
    std::size_t N = s.N();
    std::size_t nt = e.nt();

    // Node of each partition time and the level serving each node: [t_{k-1}, t_k) -> k, T -> N.
    std::vector<std::size_t> pnode(N + 1);
    for (std::size_t j = 0; j <= N; ++j) {
        pnode[j] = e.node(s.partition.times[j]);
        if (std::abs(e.t[pnode[j]] - s.partition.times[j]) > 1e-9) throw ArgumentError("partition time off the simulation grid");
    }
    std::vector<std::size_t> level(nt);
    for (std::size_t k = 0, lvl = 1; k < nt; ++k) {
        while (lvl < N && k >= pnode[lvl]) ++lvl;
        level[k] = lvl;
    }
    std::vector<FieldCursor> cursors;
    for (std::size_t l = 0; l < N; ++l) {
        std::vector<double> times(nt);
        for (std::size_t k = 0; k < nt; ++k)
            times[k] = std::clamp(e.t[k], c.levels[l].fields[0].grid.t.front(), c.levels[l].fields[0].grid.t.back());
        cursors.emplace_back(c.levels[l].fields[0], times);
    }

    std::vector<std::uint8_t>& clamped = e.clamped;
    auto run = [&](std::size_t p) {
        const CascadeLevel* cur = nullptr;
        std::size_t lvl = 0;
        std::vector<std::size_t> cidx;
        std::vector<double> cw;
        auto reader = [&](std::size_t k, const double* X, double& u, double& ux) {
            if (level[k] != lvl) {
                lvl = level[k];
                cur = &c.levels[lvl - 1];
                std::size_t d = cur->axes.size();
                cidx.assign(d, 0);
                cw.assign(d, 0.0);
                for (std::size_t a = 0; a < d; ++a) {
                    double v = X[pnode[a + 1]];
                    const ParamAxis& ax = cur->axes[a];
                    if (!ax.contains(v)) {
                        if (o.strict_params) {
                            std::ostringstream os;
                            os << "path parameter " << v << " outside the tabulated range [" << ax.lo << ", " << ax.hi
                               << "]";
                            throw ResolutionError(os.str());
                        }
                        clamped[p] = 1;
                        v = std::clamp(v, ax.lo, ax.hi);
                    }
                    auto [i, w] = ax.locate(v);
                    cidx[a] = i;
                    cw[a] = w;
                }
            }
            const FieldCursor& fc = cursors[lvl - 1];
            auto [j, wx] = c.grid.locate_x(X[k]);
            std::size_t d = cidx.size();
            if (d == 0) {
                cur->fields[0].interpolate_cell(fc.kcell[k], fc.wt[k], j, wx, u, ux);
                return;
            }
            u = 0;
            ux = 0;
            std::vector<std::size_t> idx(d);
            for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
                double wgt = 1;
                for (std::size_t a = 0; a < d; ++a) {
                    bool hi = (corner >> a) & 1u;
                    idx[a] = cidx[a] + (hi ? 1 : 0);
                    wgt *= hi ? cw[a] : 1.0 - cw[a];
                }
                if (wgt == 0.0) continue;
                double uc, uxc;
                cur->fields[cur->flat(idx)].interpolate_cell(fc.kcell[k], fc.wt[k], j, wx, uc, uxc);
                u += wgt * uc;
                ux += wgt * uxc;
            }
        };
        Slots xs(N);
        auto slots = [&](const double* X, std::size_t k) -> const Slots& {
            std::size_t l = level[k];
            for (std::size_t a = 0; a < N; ++a) xs[a] = a + 1 < l ? X[pnode[a + 1]] : X[k];
            return xs;
        };
        auto sig = [&](double t, const double* X, std::size_t k, double y) { return s.sigma(t, slots(X, k), y); };
        auto drift = [](double, const double*, std::size_t, double, double) { return 0.0; };
        detail::euler_path(e, p, reader, sig, drift);
    };
    parallel_for(M, o.sim.threads, [&](std::size_t b, std::size_t end) {
        for (std::size_t p = b; p < end; ++p) run(p);
    });
    for (double v : e.Y)
        if (!std::isfinite(v)) throw EvaluationError("non-finite value along a simulated path");
    detail::check_reflections(e, o.sim);
    return e;
}

/// Copy of the nodes of an ensemble inside [t_lo, t_hi].
inline PathEnsemble slice_ensemble(const PathEnsemble& e, double t_lo, double t_hi) {
    std::size_t a = e.node(t_lo), b = e.node(t_hi);
    if (b <= a) throw ArgumentError("empty time slice");
    PathEnsemble s;
    s.t.assign(e.t.begin() + static_cast<std::ptrdiff_t>(a), e.t.begin() + static_cast<std::ptrdiff_t>(b) + 1);
    s.M = e.M;
    s.first_path = e.first_path;
    s.seed = e.seed;
    s.substeps = e.substeps;
    s.x0 = e.x0;
    s.L = e.L;
    s.reflected = e.reflected;
    std::size_t n = s.t.size();
    for (auto* v : {&s.W, &s.X, &s.Y, &s.Z}) v->resize(e.M * n);
    for (std::size_t p = 0; p < e.M; ++p)
        for (std::size_t k = 0; k < n; ++k) {
            s.W[p * n + k] = e.W[e.idx(p, a + k)];
            s.X[p * n + k] = e.X[e.idx(p, a + k)];
            s.Y[p * n + k] = e.Y[e.idx(p, a + k)];
            s.Z[p * n + k] = e.Z[e.idx(p, a + k)];
        }
    return s;
}

// ---------------------------------------------------------------------------
// Nested Monte Carlo oracle

struct OracleOptions {
    double dt = 1e-3;
    std::size_t quadrature_points = 10;  // Picard sweep times when h is not zero
    bool h_zero = true;
};

struct OracleEstimate {
    double mean = 0, se = 0;
    std::size_t outer = 0, inner = 0;
};

namespace detail {

/// Euler path of the decoupled forward dynamics from node `from` with state
/// slots already filled for the past; writes X at every node into `X`.
inline void oracle_path(const FunctionalSpec& s, const std::vector<double>& t, const std::vector<std::size_t>& pnode,
                        std::vector<double>& X, std::size_t from, NormalStream& rng, double* first_dw = nullptr) {
    std::size_t N = s.N();
    Slots xs(N);
    for (std::size_t k = from; k + 1 < t.size(); ++k) {
        for (std::size_t a = 0; a < N; ++a) xs[a] = k >= pnode[a + 1] ? X[pnode[a + 1]] : X[k];
        double h = t[k + 1] - t[k];
        double dw = std::sqrt(h) * rng();
        if (first_dw && k == from) *first_dw = dw;
        X[k + 1] = X[k] + s.sigma(t[k], xs, 0.0) * dw;
    }
}

inline Slots oracle_slots(const FunctionalSpec& s, const std::vector<std::size_t>& pnode, const std::vector<double>& X,
                          std::size_t k) {
    Slots xs(s.N());
    for (std::size_t a = 0; a < s.N(); ++a) xs[a] = k >= pnode[a + 1] ? X[pnode[a + 1]] : X[k];
    return xs;
}

}  // namespace detail

/// Y_0 by direct simulation.  With h = 0 this is E g(X_{t_1}, ..., X_{t_N});
/// otherwise one Picard sweep with Y and Z at quadrature times estimated
/// from M_inner continuations per outer path.  The forward dynamics use
/// sigma at y = 0 and must not depend on y.
inline OracleEstimate nested_mc_oracle(const FunctionalSpec& s, std::size_t M_outer, std::size_t M_inner,
                                       std::uint64_t seed, const OracleOptions& o = {}) {
    if (M_outer < 2) throw ArgumentError("oracle needs at least two outer paths");
    double T = s.partition.times.back();
    auto steps = static_cast<std::size_t>(std::llround(T / o.dt));
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) t[k] = T * static_cast<double>(k) / static_cast<double>(steps);
    std::vector<std::size_t> pnode(s.N() + 1);
    for (std::size_t j = 0; j <= s.N(); ++j) {
        double q = s.partition.times[j] / (T / static_cast<double>(steps));
        if (std::abs(q - std::round(q)) > 1e-6) throw ArgumentError("partition time off the oracle grid");
        pnode[j] = static_cast<std::size_t>(std::round(q));
    }
    // Decoupling check: sigma must not move with y.
    for (int i = 0; i < 8; ++i) {
        Slots xs(s.N(), s.x0 + 0.3 * i - 1.0);
        if (s.sigma(0.1 * T * i / 8.0, xs, 0.0) != s.sigma(0.1 * T * i / 8.0, xs, 1.0))
            throw ArgumentError("nested oracle needs a forward diffusion independent of y");
    }
    std::vector<double> vals(M_outer);
    std::size_t Q = std::max<std::size_t>(1, o.quadrature_points);
    for (std::size_t p = 0; p < M_outer; ++p) {
        NormalStream rng(seed, p, 7);
        std::vector<double> X(steps + 1);
        X[0] = s.x0;
        detail::oracle_path(s, t, pnode, X, 0, rng);
        double val = s.g(detail::oracle_slots(s, pnode, X, steps));
        if (!o.h_zero) {
            if (M_inner < 2) throw ArgumentError("Picard sweep needs at least two inner paths");
            double acc = 0;
            for (std::size_t q = 0; q < Q; ++q) {
                std::size_t kq = steps * q / Q;
                std::size_t kq1 = steps * (q + 1) / Q;
                std::vector<double> gi(M_inner), dwi(M_inner);
                for (std::size_t m = 0; m < M_inner; ++m) {
                    NormalStream inner(seed, (p + 1) * 1000003ull + q * 7919ull + m, 8);
                    std::vector<double> Xi(X);
                    detail::oracle_path(s, t, pnode, Xi, kq, inner, &dwi[m]);
                    gi[m] = s.g(detail::oracle_slots(s, pnode, Xi, steps));
                }
                double y = stats::mean(gi);
                double h1 = t[kq + 1] - t[kq];
                std::vector<double> zz(M_inner);
                for (std::size_t m = 0; m < M_inner; ++m) zz[m] = (gi[m] - y) * dwi[m] / h1;
                double z = stats::mean(zz);
                acc += s.h(t[kq], detail::oracle_slots(s, pnode, X, kq), y, z) * (t[kq1] - t[kq]);
            }
            val += acc;
        }
        vals[p] = val;
    }
    auto ms = stats::mean_se(vals);
    if (!std::isfinite(ms.mean) || !std::isfinite(ms.se)) throw PowerError("oracle variance is not finite at this sample size");
    return {ms.mean, ms.se, M_outer, o.h_zero ? 0 : M_inner};
}

}  // namespace fbmp
