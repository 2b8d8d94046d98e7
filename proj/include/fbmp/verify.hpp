#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/model.hpp"
#include "fbmp/simulate.hpp"
#include "fbmp/stats.hpp"

namespace fbmp {

/// Named per-path sample columns.  Blocks of paths are merged by appending,
/// and every report is a fixed-order reduction of the merged columns.
struct Samples {
    std::vector<std::string> names;
    std::deque<std::vector<double>> cols;  // deque: references from add() stay valid

    std::vector<double>& add(const std::string& name, std::size_t rows = 0) {
        names.push_back(name);
        cols.emplace_back(rows, 0.0);
        return cols.back();
    }
    const std::vector<double>& col(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return cols[i];
        throw ArgumentError("unknown sample column " + name);
    }
    std::size_t rows() const { return cols.empty() ? 0 : cols.front().size(); }
    void append(const Samples& o) {
        if (names.empty()) {
            *this = o;
            return;
        }
        if (o.names != names) throw ArgumentError("sample blocks have different columns");
        for (std::size_t i = 0; i < cols.size(); ++i) cols[i].insert(cols[i].end(), o.cols[i].begin(), o.cols[i].end());
    }
};

// ---------------------------------------------------------------------------
// Compensated processes

/// Path-major process values; the defining value is raw - origin[p].
/// Increments are always taken from raw values.
struct CompensatedProcess {
    std::string label;
    std::size_t M = 0, nt = 0;
    std::vector<double> raw;
    std::vector<double> origin;  // empty means zero

    double value(std::size_t p, std::size_t k) const {
        return raw[p * nt + k] - (origin.empty() ? 0.0 : origin[p]);
    }
    double increment(std::size_t p, std::size_t k0, std::size_t k1) const {
        return raw[p * nt + k1] - raw[p * nt + k0];
    }
};

struct Compensated {
    CompensatedProcess Mx, My;
};

/// M_x = X - int b dt and M_y = Y + int h dt with left-endpoint quadrature.
inline Compensated compensate(const PathEnsemble& e, const CoefficientBundle& c) {
    Compensated r;
    std::size_t nt = e.nt();
    r.Mx = {"M_x", e.M, nt, std::vector<double>(e.M * nt), {}};
    r.My = {"M_y", e.M, nt, std::vector<double>(e.M * nt), {}};
    for (std::size_t p = 0; p < e.M; ++p) {
        double B = 0, H = 0;
        for (std::size_t k = 0; k < nt; ++k) {
            std::size_t i = e.idx(p, k);
            r.Mx.raw[i] = e.X[i] - B;
            r.My.raw[i] = e.Y[i] + H;
            if (k + 1 < nt) {
                double dt = e.t[k + 1] - e.t[k];
                B += c.b(e.t[k], e.X[i], e.Y[i], e.Z[i]) * dt;
                H += c.h(e.t[k], e.X[i], e.Y[i], e.Z[i]) * dt;
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Martingale tests

struct TestFunctional {
    std::string name;
    std::function<double(const PathEnsemble&, std::size_t p, std::size_t k)> eval;
};

inline TestFunctional functional_by_name(const std::string& n) {
    auto half = [](const PathEnsemble& e, std::size_t k) { return e.node(0.5 * (e.t[k] - e.t[0]) + e.t[0]); };
    if (n == "1") return {n, [](const PathEnsemble&, std::size_t, std::size_t) { return 1.0; }};
    if (n == "X_t") return {n, [](const PathEnsemble& e, std::size_t p, std::size_t k) { return e.X[e.idx(p, k)]; }};
    if (n == "Y_t") return {n, [](const PathEnsemble& e, std::size_t p, std::size_t k) { return e.Y[e.idx(p, k)]; }};
    if (n == "X_t^2")
        return {n, [](const PathEnsemble& e, std::size_t p, std::size_t k) {
                    double x = e.X[e.idx(p, k)];
                    return x * x;
                }};
    if (n == "X_tY_t")
        return {n, [](const PathEnsemble& e, std::size_t p, std::size_t k) { return e.X[e.idx(p, k)] * e.Y[e.idx(p, k)]; }};
    if (n == "tanh(X_t/2)")
        return {n, [half](const PathEnsemble& e, std::size_t p, std::size_t k) { return std::tanh(e.X[e.idx(p, half(e, k))]); }};
    if (n == "tanh(Y_t/2)")
        return {n, [half](const PathEnsemble& e, std::size_t p, std::size_t k) { return std::tanh(e.Y[e.idx(p, half(e, k))]); }};
    throw ArgumentError("unknown test functional " + n);
}

inline std::vector<TestFunctional> default_functionals() {
    std::vector<TestFunctional> v;
    for (const char* n : {"1", "X_t", "Y_t", "X_t^2", "X_tY_t", "tanh(X_t/2)", "tanh(Y_t/2)"})
        v.push_back(functional_by_name(n));
    return v;
}

using TimePair = std::pair<double, double>;

inline std::vector<TimePair> default_time_pairs(double T) {
    return {{0.0, 0.5 * T}, {0.5 * T, T}, {0.25 * T, 0.75 * T}, {0.0, T}};
}

inline std::string pair_tag(const TimePair& tp) {
    std::ostringstream os;
    os.precision(6);
    os << tp.first << "->" << tp.second;
    return os.str();
}

/// Per-path samples (M_{t'} - M_t) Phi(path up to t) for every functional and pair.
inline Samples martingale_samples(const CompensatedProcess& m, const PathEnsemble& e,
                                  const std::vector<TestFunctional>& fns, const std::vector<TimePair>& pairs) {
    Samples s;
    for (auto& tp : pairs) {
        if (!(tp.first < tp.second)) throw ArgumentError("time pairs must satisfy t < t'");
        if (tp.first < e.t.front() - 1e-12 || tp.second > e.T() + 1e-12) throw ArgumentError("time pair outside the horizon");
        std::size_t k0 = e.node(tp.first), k1 = e.node(tp.second);
        for (auto& f : fns) {
            auto& c = s.add(m.label + "|" + f.name + "|" + pair_tag(tp), e.M);
            for (std::size_t p = 0; p < e.M; ++p) c[p] = m.increment(p, k0, k1) * f.eval(e, p, k0);
        }
    }
    return s;
}

struct TestEntry {
    std::string name;
    double statistic = 0, se = 0, z = 0;
    bool pass = true;
};

struct MartingaleReport {
    std::string label;
    std::vector<TestEntry> entries;
    double threshold = 3.0;
    bool pass = true;
    bool low_power = false;  // fewer than min_martingale_paths samples
};

inline constexpr std::size_t min_martingale_paths = 1000;

inline TestEntry z_entry(const std::string& name, const std::vector<double>& col, double thr) {
    auto ms = stats::mean_se(col);
    TestEntry t{name, ms.mean, ms.se, 0.0, true};
    if (ms.se > 0)
        t.z = ms.mean / ms.se;
    else
        t.z = ms.mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    t.pass = std::abs(t.z) <= thr;
    return t;
}

inline MartingaleReport martingale_report(const std::string& label, const Samples& s) {
    MartingaleReport r;
    r.label = label;
    r.threshold = stats::bonferroni_threshold(s.cols.size());
    r.low_power = s.rows() < min_martingale_paths;
    for (std::size_t i = 0; i < s.cols.size(); ++i) {
        r.entries.push_back(z_entry(s.names[i], s.cols[i], r.threshold));
        if (!r.entries.back().pass) r.pass = false;
    }
    return r;
}

inline MartingaleReport martingale_test(const CompensatedProcess& m, const PathEnsemble& e,
                                        const std::vector<TestFunctional>& fns, const std::vector<TimePair>& pairs,
                                        bool strict = false) {
    if (strict && e.M < min_martingale_paths)
        throw PowerError("martingale test needs at least " + std::to_string(min_martingale_paths) + " paths");
    return martingale_report(m.label, martingale_samples(m, e, fns, pairs));
}

// ---------------------------------------------------------------------------
// Quadratic variation and representation

inline std::vector<std::size_t> checkpoints(const PathEnsemble& e, std::size_t count = 50) {
    std::size_t n = e.nt() - 1;
    std::vector<std::size_t> c;
    if (n <= count) {
        for (std::size_t k = 1; k <= n; ++k) c.push_back(k);
    } else {
        for (std::size_t i = 1; i <= count; ++i) c.push_back(i * n / count);
    }
    return c;
}

/// Deviations of realised brackets from their compensators at checkpoints:
///   [M_x] - int sigma^2, [M_x, M_y] - int sigma^2 z, [M_y] - int z^2 sigma^2.
inline Samples qv_samples(const PathEnsemble& e, const CoefficientBundle& c, const Compensated& m,
                          const std::vector<std::size_t>& cps) {
    Samples s;
    std::vector<std::vector<double>*> xx, xy, yy;
    for (std::size_t k : cps) {
        xx.push_back(&s.add("xx@" + std::to_string(k), e.M));
        xy.push_back(&s.add("xy@" + std::to_string(k), e.M));
        yy.push_back(&s.add("yy@" + std::to_string(k), e.M));
    }
    std::size_t nt = e.nt();
    for (std::size_t p = 0; p < e.M; ++p) {
        double qxx = 0, qxy = 0, qyy = 0, cxx = 0, cxy = 0, cyy = 0;
        std::size_t ci = 0;
        for (std::size_t k = 0; k + 1 < nt && ci < cps.size(); ++k) {
            std::size_t i = e.idx(p, k);
            double dt = e.t[k + 1] - e.t[k];
            double dx = m.Mx.increment(p, k, k + 1), dy = m.My.increment(p, k, k + 1);
            double sg = c.sigma(e.t[k], e.X[i], e.Y[i]);
            qxx += dx * dx;
            qxy += dx * dy;
            qyy += dy * dy;
            cxx += sg * sg * dt;
            cxy += sg * e.Z[i] * dt;  // sigma^2 z = sigma Z
            cyy += e.Z[i] * e.Z[i] * dt;
            while (ci < cps.size() && cps[ci] == k + 1) {
                (*xx[ci])[p] = qxx - cxx;
                (*xy[ci])[p] = qxy - cxy;
                (*yy[ci])[p] = qyy - cyy;
                ++ci;
            }
        }
    }
    return s;
}

struct DeviationSummary {
    double mean_abs = 0;   // sup over checkpoints of mean |dev|
    double mean_sq = 0;    // sup over checkpoints of mean dev^2
    double sup_abs_mean = 0;  // sup over checkpoints of |mean dev|
};

struct QVReport {
    DeviationSummary xx, xy, yy;
};

inline DeviationSummary summarise_deviation(const Samples& s, const std::string& prefix) {
    DeviationSummary d;
    for (std::size_t i = 0; i < s.names.size(); ++i) {
        if (s.names[i].rfind(prefix, 0) != 0) continue;
        const auto& c = s.cols[i];
        std::vector<double> a(c.size()), q(c.size());
        for (std::size_t p = 0; p < c.size(); ++p) {
            a[p] = std::abs(c[p]);
            q[p] = c[p] * c[p];
        }
        d.mean_abs = std::max(d.mean_abs, stats::mean(a));
        d.mean_sq = std::max(d.mean_sq, stats::mean(q));
        d.sup_abs_mean = std::max(d.sup_abs_mean, std::abs(stats::mean(c)));
    }
    return d;
}

inline QVReport qv_report(const Samples& s) {
    return {summarise_deviation(s, "xx@"), summarise_deviation(s, "xy@"), summarise_deviation(s, "yy@")};
}

inline QVReport qv_test(const PathEnsemble& e, const CoefficientBundle& c, const Compensated& m) {
    return qv_report(qv_samples(e, c, m, checkpoints(e)));
}

/// Residual M_y(t) - M_y(0) - int z dM_x at checkpoints.
inline Samples representation_samples(const PathEnsemble& e, const CoefficientBundle& c, const Compensated& m,
                                      const std::vector<std::size_t>& cps) {
    Samples s;
    std::vector<std::vector<double>*> cols;
    for (std::size_t k : cps) cols.push_back(&s.add("rep@" + std::to_string(k), e.M));
    for (std::size_t p = 0; p < e.M; ++p) {
        double I = 0;
        std::size_t ci = 0;
        for (std::size_t k = 0; k + 1 < e.nt() && ci < cps.size(); ++k) {
            std::size_t i = e.idx(p, k);
            double sg = c.sigma(e.t[k], e.X[i], e.Y[i]);
            if (std::abs(sg) < 1e-12) throw DegeneracyError("diffusion vanishes; slope z undefined");
            I += e.Z[i] / sg * m.Mx.increment(p, k, k + 1);
            while (ci < cps.size() && cps[ci] == k + 1) {
                (*cols[ci])[p] = m.My.increment(p, 0, k + 1) - I;
                ++ci;
            }
        }
    }
    return s;
}

struct RepresentationReport {
    DeviationSummary residual;
    double max_rms() const { return std::sqrt(residual.mean_sq); }
};

inline RepresentationReport representation_report(const Samples& s) { return {summarise_deviation(s, "rep@")}; }

inline RepresentationReport representation_test(const PathEnsemble& e, const CoefficientBundle& c, const Compensated& m) {
    return representation_report(representation_samples(e, c, m, checkpoints(e)));
}

/// Ratio of mean-square deviations between a run and its half-step refinement.
struct ScalingCheck {
    double ratio = 0;
    bool pass = false;
};

inline ScalingCheck halving_check(double coarse, double fine, double target = 2.0, double tol = 0.2) {
    ScalingCheck c;
    c.ratio = fine > 0 ? coarse / fine : std::numeric_limits<double>::infinity();
    c.pass = std::abs(c.ratio / target - 1.0) <= tol;
    return c;
}

// ---------------------------------------------------------------------------
// Boundary conditions

inline Samples boundary_samples(const PathEnsemble& e, const CoefficientBundle& c) {
    Samples s;
    auto& term = s.add("terminal_sq", e.M);
    auto& init = s.add("initial_exact", e.M);
    for (std::size_t p = 0; p < e.M; ++p) {
        std::size_t last = e.idx(p, e.nt() - 1);
        double d = e.Y[last] - c.g(e.X[last]);
        term[p] = d * d;
        init[p] = e.X[e.idx(p, 0)] == e.x0 ? 1.0 : 0.0;
    }
    return s;
}

struct BoundaryReport {
    double terminal_moment = 0, terminal_se = 0;
    bool initial_exact = true;
    double tolerance = 1e-4;
    bool pass = true;
};

inline BoundaryReport boundary_report(const Samples& s, double tolerance = 1e-4) {
    BoundaryReport r;
    auto ms = stats::mean_se(s.col("terminal_sq"));
    r.terminal_moment = ms.mean;
    r.terminal_se = ms.se;
    for (double v : s.col("initial_exact"))
        if (v != 1.0) r.initial_exact = false;
    r.tolerance = tolerance;
    r.pass = r.initial_exact && r.terminal_moment <= tolerance;
    return r;
}

inline BoundaryReport boundary_test(const PathEnsemble& e, const CoefficientBundle& c, double tolerance = 1e-4) {
    return boundary_report(boundary_samples(e, c), tolerance);
}

// ---------------------------------------------------------------------------
// Generator test

/// Test function on (x, y) with analytic first and second derivatives.
struct TestFunction {
    std::string name;
    std::function<void(double x, double y, double* d)> eval;  // d = {phi, px, py, pxx, pxy, pyy}
};

inline TestFunction test_function_by_name(const std::string& n) {
    if (n == "x") return {n, [](double x, double, double* d) { d[0] = x, d[1] = 1, d[2] = 0, d[3] = 0, d[4] = 0, d[5] = 0; }};
    if (n == "y") return {n, [](double, double y, double* d) { d[0] = y, d[1] = 0, d[2] = 1, d[3] = 0, d[4] = 0, d[5] = 0; }};
    if (n == "x^2")
        return {n, [](double x, double, double* d) { d[0] = x * x, d[1] = 2 * x, d[2] = 0, d[3] = 2, d[4] = 0, d[5] = 0; }};
    if (n == "y^2")
        return {n, [](double, double y, double* d) { d[0] = y * y, d[1] = 0, d[2] = 2 * y, d[3] = 0, d[4] = 0, d[5] = 2; }};
    if (n == "xy") return {n, [](double x, double y, double* d) { d[0] = x * y, d[1] = y, d[2] = x, d[3] = 0, d[4] = 1, d[5] = 0; }};
    if (n == "exp(-x^2-y^2)")
        return {n, [](double x, double y, double* d) {
                    double f = std::exp(-x * x - y * y);
                    d[0] = f, d[1] = -2 * x * f, d[2] = -2 * y * f;
                    d[3] = (4 * x * x - 2) * f, d[4] = 4 * x * y * f, d[5] = (4 * y * y - 2) * f;
                }};
    throw ArgumentError("test function " + n + " has no analytic derivatives registered");
}

inline std::vector<TestFunction> default_test_functions() {
    std::vector<TestFunction> v;
    for (const char* n : {"x", "y", "x^2", "y^2", "xy", "exp(-x^2-y^2)"}) v.push_back(test_function_by_name(n));
    return v;
}

/// C[phi] = phi(X, Y) - phi(x0, y0) - int L phi dt with
/// L phi = 1/2 tr(A D^2 phi) + b phi_x - h phi_y and A = sigma^2 [[1, z], [z, z^2]].
inline CompensatedProcess generator_process(const PathEnsemble& e, const CoefficientBundle& c, const TestFunction& phi) {
    CompensatedProcess r{"C[" + phi.name + "]", e.M, e.nt(), std::vector<double>(e.M * e.nt()), std::vector<double>(e.M)};
    double d[6];
    for (std::size_t p = 0; p < e.M; ++p) {
        double I = 0;
        for (std::size_t k = 0; k < e.nt(); ++k) {
            std::size_t i = e.idx(p, k);
            phi.eval(e.X[i], e.Y[i], d);
            r.raw[i] = d[0] - I;
            if (k == 0) r.origin[p] = d[0];
            if (k + 1 < e.nt()) {
                double dt = e.t[k + 1] - e.t[k];
                double sg = c.sigma(e.t[k], e.X[i], e.Y[i]);
                double Zv = e.Z[i];
                double Lphi = 0.5 * (sg * sg * d[3] + 2.0 * sg * Zv * d[4] + Zv * Zv * d[5]) +
                              c.b(e.t[k], e.X[i], e.Y[i], Zv) * d[1] - c.h(e.t[k], e.X[i], e.Y[i], Zv) * d[2];
                I += Lphi * dt;
            }
        }
    }
    return r;
}

inline Samples generator_samples(const PathEnsemble& e, const CoefficientBundle& c,
                                 const std::vector<TestFunction>& phis, const std::vector<TestFunctional>& fns,
                                 const std::vector<TimePair>& pairs) {
    Samples s;
    for (auto& phi : phis) {
        auto proc = generator_process(e, c, phi);
        auto part = martingale_samples(proc, e, fns, pairs);
        for (std::size_t i = 0; i < part.cols.size(); ++i) {
            s.names.push_back(part.names[i]);
            s.cols.push_back(std::move(part.cols[i]));
        }
    }
    return s;
}

inline MartingaleReport generator_test(const PathEnsemble& e, const CoefficientBundle& c,
                                       const std::vector<TestFunction>& phis, const std::vector<TestFunctional>& fns,
                                       const std::vector<TimePair>& pairs) {
    return martingale_report("generator", generator_samples(e, c, phis, fns, pairs));
}

// ---------------------------------------------------------------------------
// Integrability

inline Samples integrability_samples(const PathEnsemble& e, const CoefficientBundle& c) {
    Samples s;
    auto& I = s.add("integral", e.M);
    auto& G = s.add("abs_g", e.M);
    auto& id = s.add("path", e.M);
    for (std::size_t p = 0; p < e.M; ++p) {
        double acc = 0;
        for (std::size_t k = 0; k + 1 < e.nt(); ++k) {
            std::size_t i = e.idx(p, k);
            double dt = e.t[k + 1] - e.t[k];
            double sg = c.sigma(e.t[k], e.X[i], e.Y[i]);
            acc += (std::abs(c.b(e.t[k], e.X[i], e.Y[i], e.Z[i])) + sg * sg +
                    std::abs(c.h(e.t[k], e.X[i], e.Y[i], e.Z[i])) + e.Z[i] * e.Z[i]) * dt;
        }
        I[p] = acc;
        G[p] = std::abs(c.g(e.X[e.idx(p, e.nt() - 1)]));
        id[p] = static_cast<double>(e.first_path + p);
    }
    return s;
}

struct QuantileSet {
    double max = 0, q99 = 0, median = 0, mean = 0, se = 0;
};

struct IntegrabilityReport {
    QuantileSet integral, terminal;
    bool pass = true;
    std::optional<std::size_t> failing_path;
};

inline QuantileSet quantile_set(const std::vector<double>& v) {
    QuantileSet q;
    q.max = *std::max_element(v.begin(), v.end());
    q.q99 = stats::quantile(v, 0.99);
    q.median = stats::quantile(v, 0.5);
    auto ms = stats::mean_se(v);
    q.mean = ms.mean;
    q.se = ms.se;
    return q;
}

inline IntegrabilityReport integrability_report(const Samples& s) {
    IntegrabilityReport r;
    const auto& I = s.col("integral");
    const auto& G = s.col("abs_g");
    const auto& id = s.col("path");
    for (std::size_t p = 0; p < I.size(); ++p)
        if (!std::isfinite(I[p]) || !std::isfinite(G[p])) {
            r.pass = false;
            r.failing_path = static_cast<std::size_t>(id[p]);
            return r;
        }
    r.integral = quantile_set(I);
    r.terminal = quantile_set(G);
    return r;
}

inline IntegrabilityReport integrability_test(const PathEnsemble& e, const CoefficientBundle& c) {
    return integrability_report(integrability_samples(e, c));
}

// ---------------------------------------------------------------------------
// Conditional variation

inline Samples conditional_variation_samples(const PathEnsemble& e, const Partition& part) {
    Samples s;
    for (std::size_t i = 0; i < part.times.size(); ++i) {
        std::size_t k = e.node(part.times[i]);
        auto& x = s.add("X@" + std::to_string(i), e.M);
        auto& y = s.add("Y@" + std::to_string(i), e.M);
        for (std::size_t p = 0; p < e.M; ++p) {
            x[p] = e.X[e.idx(p, k)];
            y[p] = e.Y[e.idx(p, k)];
        }
    }
    return s;
}

struct ConditionalVariationReport {
    double statistic = 0;
    double variation_part = 0;
    double terminal_part = 0;
    double noise_floor = 0;  // expected bucket-mean magnitude under zero drift
    double se = 0;           // bootstrap
    double ceiling = 0;
    std::size_t buckets = 0;
    bool pass = true;
};

struct ConditionalVariationOptions {
    std::size_t x_buckets = 10;
    std::size_t y_buckets = 1;
    std::size_t resamples = 200;
    std::uint64_t seed = 12345;
    std::size_t min_per_bucket = 30;
};

inline ConditionalVariationReport conditional_variation_report(const Samples& s, std::size_t intervals, double K,
                                                               double T, const ConditionalVariationOptions& o = {}) {
    std::size_t B = o.x_buckets * std::max<std::size_t>(o.y_buckets, 1);
    if (B < 4) throw ArgumentError("conditional variation needs at least 4 buckets");
    std::size_t M = s.rows();
    if (M / B < o.min_per_bucket) throw PowerError("bucket occupancy below the minimum");
    std::vector<std::vector<std::size_t>> labels;
    std::vector<std::vector<double>> incr;
    for (std::size_t i = 0; i < intervals; ++i) {
        const auto& x = s.col("X@" + std::to_string(i));
        const auto& y = s.col("Y@" + std::to_string(i));
        const auto& yn = s.col("Y@" + std::to_string(i + 1));
        labels.push_back(stats::equal_count_buckets_2d(x, y, o.x_buckets, std::max<std::size_t>(o.y_buckets, 1)));
        std::vector<double> d(M);
        for (std::size_t p = 0; p < M; ++p) d[p] = yn[p] - y[p];
        incr.push_back(std::move(d));
    }
    const auto& yT = s.col("Y@" + std::to_string(intervals));
    std::vector<double> absT(M);
    for (std::size_t p = 0; p < M; ++p) absT[p] = std::abs(yT[p]);

    auto evaluate = [&](const std::size_t* idx, double* floor_out) {
        double var = 0, floor = 0;
        std::vector<double> sum(B), sq(B);
        std::vector<std::size_t> cnt(B);
        for (std::size_t i = 0; i < intervals; ++i) {
            std::fill(sum.begin(), sum.end(), 0.0);
            std::fill(sq.begin(), sq.end(), 0.0);
            std::fill(cnt.begin(), cnt.end(), 0);
            for (std::size_t q = 0; q < M; ++q) {
                std::size_t p = idx ? idx[q] : q;
                std::size_t b = labels[i][p];
                sum[b] += incr[i][p];
                sq[b] += incr[i][p] * incr[i][p];
                cnt[b]++;
            }
            for (std::size_t b = 0; b < B; ++b) {
                if (cnt[b] == 0) continue;
                double n = static_cast<double>(cnt[b]);
                double m = sum[b] / n;
                var += n / static_cast<double>(M) * std::abs(m);
                if (floor_out && cnt[b] > 1) {
                    double v = std::max(0.0, (sq[b] - n * m * m) / (n - 1));
                    floor += n / static_cast<double>(M) * std::sqrt(v / n) * std::sqrt(2.0 / std::numbers::pi);
                }
            }
        }
        if (floor_out) *floor_out = floor;
        double term = 0;
        std::vector<double> a(M);
        for (std::size_t q = 0; q < M; ++q) a[q] = absT[idx ? idx[q] : q];
        term = stats::mean(a);
        return std::pair{var, term};
    };
    ConditionalVariationReport r;
    r.buckets = B;
    auto [var, term] = evaluate(nullptr, &r.noise_floor);
    r.variation_part = var;
    r.terminal_part = term;
    r.statistic = var + term;
    r.se = stats::bootstrap_se(M, o.resamples, o.seed, [&](std::span<const std::size_t> idx) {
        auto [v, t] = evaluate(idx.data(), nullptr);
        return v + t;
    });
    r.ceiling = K * (T + 1.0);
    r.pass = r.statistic <= r.ceiling;
    return r;
}

inline ConditionalVariationReport conditional_variation(const PathEnsemble& e, const Partition& part, double K,
                                                        const ConditionalVariationOptions& o = {}) {
    return conditional_variation_report(conditional_variation_samples(e, part), part.N(), K, e.T(), o);
}

}  // namespace fbmp
