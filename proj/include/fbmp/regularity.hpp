#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/model.hpp"
#include "fbmp/simulate.hpp"
#include "fbmp/stats.hpp"
#include "fbmp/verify.hpp"

namespace fbmp {

namespace detail {

inline std::vector<std::size_t> delta_steps(const PathEnsemble& e, const std::vector<double>& deltas) {
    double dt = e.dt();
    std::vector<std::size_t> m;
    for (double d : deltas) {
        if (d < dt * (1 - 1e-9)) throw ArgumentError("delta below the simulation step");
        double q = d / dt;
        double r = std::round(q);
        if (std::abs(q - r) > 1e-6 * std::max(1.0, q)) throw ArgumentError("delta must be an integer multiple of dt");
        m.push_back(static_cast<std::size_t>(r));
    }
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Time-regularity statistics of Z

/// Per-path E int_0^T |Z_t - Z^delta_t|^2 dt where Z^delta averages Z over the
/// trailing window ((t - delta)^+, t] on the node grid.
inline Samples z_avg_samples(const PathEnsemble& e, const std::vector<double>& deltas) {
    auto ms = detail::delta_steps(e, deltas);
    Samples s;
    std::vector<std::vector<double>*> cols;
    for (std::size_t i = 0; i < deltas.size(); ++i) cols.push_back(&s.add("zavg@" + std::to_string(ms[i]), e.M));
    std::size_t nt = e.nt();
    std::vector<double> P(nt + 1);
    for (std::size_t p = 0; p < e.M; ++p) {
        const double* Z = &e.Z[e.idx(p, 0)];
        P[0] = 0;
        for (std::size_t k = 0; k < nt; ++k) P[k + 1] = P[k] + Z[k];
        for (std::size_t i = 0; i < ms.size(); ++i) {
            std::size_t m = ms[i];
            double acc = 0;
            for (std::size_t k = 0; k + 1 < nt; ++k) {
                double avg;
                if (m == 1) {
                    avg = Z[k];
                } else {
                    std::size_t lo = k + 1 >= m ? k + 1 - m : 0;
                    avg = (P[k + 1] - P[lo]) / static_cast<double>(k + 1 - lo);
                }
                double d = Z[k] - avg;
                acc += d * d * (e.t[k + 1] - e.t[k]);
            }
            (*cols[i])[p] = acc;
        }
    }
    return s;
}

/// Per-path int |Z_t - Z_{t - delta}|^2 dt with Z extended by zero before 0,
/// optionally restricted to t < T - horizon_cut.
inline Samples z_shift_samples(const PathEnsemble& e, const std::vector<double>& deltas, double horizon_cut = 0.0) {
    if (horizon_cut < 0 || horizon_cut >= e.T()) throw ArgumentError("horizon cut must lie in [0, T)");
    auto ms = detail::delta_steps(e, deltas);
    Samples s;
    std::vector<std::vector<double>*> cols;
    for (std::size_t i = 0; i < deltas.size(); ++i) cols.push_back(&s.add("zshift@" + std::to_string(ms[i]), e.M));
    std::size_t nt = e.nt();
    double tcut = e.T() - horizon_cut;
    for (std::size_t p = 0; p < e.M; ++p) {
        const double* Z = &e.Z[e.idx(p, 0)];
        for (std::size_t i = 0; i < ms.size(); ++i) {
            std::size_t m = ms[i];
            double acc = 0;
            for (std::size_t k = 0; k + 1 < nt; ++k) {
                if (horizon_cut > 0 && e.t[k] >= tcut - 1e-12) break;
                double prev = k >= m ? Z[k - m] : 0.0;
                double d = Z[k] - prev;
                acc += d * d * (e.t[k + 1] - e.t[k]);
            }
            (*cols[i])[p] = acc;
        }
    }
    return s;
}

struct StatCell {
    double mean = 0, se = 0;
};

/// Statistic matrix indexed [level][delta].
struct RegularityMatrix {
    std::string name;
    std::vector<int> levels;
    std::vector<double> deltas;
    std::vector<std::vector<StatCell>> cells;

    /// Nonincreasing along refinement of both axes (n up, delta down), within
    /// `k` combined standard errors.
    bool monotone(double k = 2.0) const {
        for (std::size_t a = 0; a < cells.size(); ++a)
            for (std::size_t d = 0; d < deltas.size(); ++d) {
                if (d + 1 < deltas.size()) {
                    // deltas stored in decreasing order
                    const auto& c0 = cells[a][d];
                    const auto& c1 = cells[a][d + 1];
                    if (c1.mean > c0.mean + k * std::hypot(c0.se, c1.se)) return false;
                }
                if (a + 1 < cells.size()) {
                    const auto& c0 = cells[a][d];
                    const auto& c1 = cells[a + 1][d];
                    if (c1.mean > c0.mean + k * std::hypot(c0.se, c1.se)) return false;
                }
            }
        return true;
    }
    double finest_over_coarsest() const {
        double coarse = cells.front().front().mean;
        double fine = cells.back().back().mean;
        return coarse > 0 ? fine / coarse : std::numeric_limits<double>::infinity();
    }
};

struct RegularityReport {
    RegularityMatrix avg, shift;
    double horizon_cut = 0;
    bool pass(double ratio = 0.1) const {
        return avg.monotone() && shift.monotone() && avg.finest_over_coarsest() <= ratio &&
               shift.finest_over_coarsest() <= ratio;
    }
};

/// Builds one matrix row from merged samples.
inline std::vector<StatCell> matrix_row(const Samples& s) {
    std::vector<StatCell> row;
    for (auto& c : s.cols) {
        auto ms = stats::mean_se(c);
        row.push_back({ms.mean, ms.se});
    }
    return row;
}

/// Ensemble-level forms: one ensemble per cascade level, deltas sorted
/// decreasing in the output.
inline RegularityMatrix z_avg_regularity(const std::vector<const PathEnsemble*>& ens, const std::vector<int>& levels,
                                         std::vector<double> deltas) {
    std::sort(deltas.rbegin(), deltas.rend());
    RegularityMatrix m{"z_avg", levels, deltas, {}};
    for (auto* e : ens) m.cells.push_back(matrix_row(z_avg_samples(*e, deltas)));
    return m;
}

inline RegularityMatrix z_shift_regularity(const std::vector<const PathEnsemble*>& ens, const std::vector<int>& levels,
                                           std::vector<double> deltas, double horizon_cut = 0.0) {
    std::sort(deltas.rbegin(), deltas.rend());
    RegularityMatrix m{"z_shift", levels, deltas, {}};
    for (auto* e : ens) m.cells.push_back(matrix_row(z_shift_samples(*e, deltas, horizon_cut)));
    return m;
}

// ---------------------------------------------------------------------------
// Conditional regularity

inline Samples conditional_regularity_samples(const PathEnsemble& e, double t, const std::vector<double>& deltas) {
    auto ms = detail::delta_steps(e, deltas);
    std::size_t kt = e.node(t);
    Samples s;
    auto& X = s.add("X", e.M);
    auto& Y = s.add("Y", e.M);
    std::vector<std::vector<double>*> cols;
    for (std::size_t m : ms) cols.push_back(&s.add("cr@" + std::to_string(m), e.M));
    for (std::size_t p = 0; p < e.M; ++p) {
        X[p] = e.X[e.idx(p, kt)];
        Y[p] = e.Y[e.idx(p, kt)];
        for (std::size_t i = 0; i < ms.size(); ++i) {
            std::size_t k1 = std::min(kt + ms[i], e.nt() - 1);
            double dy = e.Y[e.idx(p, k1)] - Y[p];
            double zi = 0;
            for (std::size_t k = kt; k < k1; ++k) zi += e.Z[e.idx(p, k)] * e.Z[e.idx(p, k)] * (e.t[k + 1] - e.t[k]);
            (*cols[i])[p] = dy * dy + zi;
        }
    }
    return s;
}

struct ConditionalBucket {
    std::size_t count = 0;
    double x_mean = 0, x2_mean = 0;
    std::vector<StatCell> by_delta;
};

struct ConditionalRegularityReport {
    double t = 0, T0 = 0, T = 1;
    std::vector<double> deltas;
    std::vector<ConditionalBucket> buckets;
    std::vector<double> max_over_buckets;
    double slope = 0, intercept = 0, r2 = 0;
    double delta_lo = 0, delta_hi = 0;  // range used by the fit
    bool degenerate = false;            // fewer than two positive points: fit skipped
    double alpha = 1;  // slope clamped to (0, 1]
    double C = 0;      // least-squares constant: max stat ~ C delta^alpha / (T - T0)^alpha
    double C_envelope = 0;  // smallest constant bounding every fitted point
};

inline ConditionalRegularityReport conditional_regularity_report(const Samples& s, double t, double T0, double T,
                                                                 const std::vector<double>& deltas,
                                                                 std::size_t buckets, std::size_t min_per_bucket = 30) {
    if (buckets < 1) throw ArgumentError("need at least one bucket");
    std::size_t M = s.rows();
    if (M / buckets < min_per_bucket) throw PowerError("bucket occupancy below the minimum");
    ConditionalRegularityReport r;
    r.t = t;
    r.T0 = T0;
    r.T = T;
    r.deltas = deltas;
    const auto& X = s.col("X");
    const auto& Y = s.col("Y");
    std::size_t bx = buckets, by = 1;
    auto label = stats::equal_count_buckets_2d(X, Y, bx, by);
    std::vector<double> X2(M);
    for (std::size_t p = 0; p < M; ++p) X2[p] = X[p] * X[p];
    auto xm = stats::bucket_means(X, label, buckets);
    auto x2m = stats::bucket_means(X2, label, buckets);
    r.buckets.resize(buckets);
    for (std::size_t b = 0; b < buckets; ++b) {
        r.buckets[b].count = xm.count[b];
        r.buckets[b].x_mean = xm.mean[b];
        r.buckets[b].x2_mean = x2m.mean[b];
        if (xm.count[b] < min_per_bucket) throw PowerError("bucket occupancy below the minimum");
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const auto& c = s.cols[2 + i];
        auto bm = stats::bucket_means(c, label, buckets);
        double mx = 0;
        for (std::size_t b = 0; b < buckets; ++b) {
            r.buckets[b].by_delta.push_back({bm.mean[b], bm.se[b]});
            mx = std::max(mx, bm.mean[b]);
        }
        r.max_over_buckets.push_back(mx);
        if (mx > 0) {
            lx.push_back(std::log(deltas[i]));
            ly.push_back(std::log(mx));
        }
    }
    r.degenerate = lx.size() < 2;
    if (!r.degenerate) {
        r.delta_lo = std::exp(*std::min_element(lx.begin(), lx.end()));
        r.delta_hi = std::exp(*std::max_element(lx.begin(), lx.end()));
        auto f = stats::linear_fit(lx, ly);
        r.slope = f.slope;
        r.intercept = f.intercept;
        r.r2 = f.r2;
        r.alpha = std::clamp(f.slope, 1e-6, 1.0);
        // Refit the intercept at the clamped exponent.
        std::vector<double> v(lx.size());
        for (std::size_t i = 0; i < lx.size(); ++i) v[i] = ly[i] - r.alpha * lx[i];
        double w = std::pow(T - T0, r.alpha);
        r.C = std::exp(stats::mean(v)) * w;
        r.C_envelope = std::exp(*std::max_element(v.begin(), v.end())) * w;
    }
    return r;
}

inline ConditionalRegularityReport conditional_regularity(const PathEnsemble& e, double t, const std::vector<double>& deltas,
                                                          double T0, std::size_t buckets) {
    if (t > T0 + 1e-12) throw ArgumentError("conditioning time must not exceed T0");
    for (double d : deltas)
        if (d > 0.5 * (e.T() - T0) + 1e-12) throw ArgumentError("delta exceeds (T - T0) / 2");
    return conditional_regularity_report(conditional_regularity_samples(e, t, deltas), t, T0, e.T(), deltas, buckets);
}

// ---------------------------------------------------------------------------
// k-functions

struct KFunction {
    std::string name;
    double T = 1.0;
    std::function<double(double t, double delta, double eta)> eval;
    double operator()(double t, double d, double eta) const { return eval(t, d, eta); }
};

/// k(t, delta, eta) = C delta^alpha / ((T - t - delta)^alpha eta^2).
inline KFunction canonical_k(double C, double alpha, double T) {
    return {"canonical", T, [=](double t, double d, double eta) {
                double rem = T - t - d;
                if (rem <= 0) return std::numeric_limits<double>::infinity();
                return C * std::pow(d, alpha) / (std::pow(rem, alpha) * eta * eta);
            }};
}

struct KValidation {
    bool monotone = true;
    bool vanishing = true;
    bool lower_bound = true;
    std::size_t points = 0;
    std::string detail;
    bool pass() const { return monotone && vanishing && lower_bound; }
};

/// Checks monotonicity in (t, delta), the vanishing small-delta limit and the
/// lower bound C delta^alpha / ((T - t - delta)^alpha eta^2) on a sample grid.
inline KValidation k_validate(const KFunction& k, double C, double alpha, std::size_t per_axis = 10) {
    KValidation r;
    double T = k.T;
    std::vector<double> ts, ds, es;
    for (std::size_t i = 0; i < per_axis; ++i) {
        double f = static_cast<double>(i) / static_cast<double>(per_axis - 1);
        ts.push_back(0.7 * T * f);
        ds.push_back(T * 1e-4 * std::pow(2500.0, f));  // up to 0.25 T
        es.push_back(0.1 * std::pow(100.0, f));
    }
    auto lower = canonical_k(C, alpha, T);
    std::ostringstream why;
    for (double eta : es) {
        std::vector<double> vals;
        for (double t : ts)
            for (double d : ds) {
                double v = k(t, d, eta);
                vals.push_back(v);
                r.points++;
                if (!(v >= lower(t, d, eta) * (1 - 1e-12))) {
                    if (r.lower_bound) why << "lower bound fails at (" << t << ", " << d << ", " << eta << "); ";
                    r.lower_bound = false;
                }
            }
        for (std::size_t a = 0; a < ts.size(); ++a)
            for (std::size_t b = 0; b < ds.size(); ++b)
                for (std::size_t a2 = a; a2 < ts.size(); ++a2)
                    for (std::size_t b2 = b; b2 < ds.size(); ++b2) {
                        double v1 = vals[a * ds.size() + b], v2 = vals[a2 * ds.size() + b2];
                        if (v1 > v2 * (1 + 1e-12) + 1e-300) {
                            if (r.monotone) why << "not monotone near (" << ts[a] << ", " << ds[b] << "); ";
                            r.monotone = false;
                        }
                    }
        // Small-delta limit along delta_j = 2^-j delta_0: the sequence must be
        // nonincreasing and either reach zero or stay O(delta^alpha).
        for (double t : ts) {
            std::vector<double> seq, ratio;
            double d = ds.back();
            for (int j = 0; j < 60; ++j, d *= 0.5) {
                seq.push_back(k(t, d, eta));
                ratio.push_back(seq.back() / std::pow(d, alpha));
            }
            bool mono = true;
            for (std::size_t j = 1; j < seq.size(); ++j)
                if (seq[j] > seq[j - 1] * (1 + 1e-12) + 1e-300) mono = false;
            bool zero = seq.back() <= 1e-12;
            bool bounded = std::isfinite(ratio.back()) && ratio.back() <= ratio.front() * (1 + 1e-9);
            if (!mono || !(zero || bounded)) {
                if (r.vanishing) why << "no vanishing limit at t = " << t << ", eta = " << eta << "; ";
                r.vanishing = false;
            }
        }
    }
    r.detail = why.str();
    return r;
}

// ---------------------------------------------------------------------------
// Weak-solution check against a k-function

struct KWeakCell {
    double s = 0, delta = 0, eta = 0;
    std::size_t bucket = 0, count = 0, exceed = 0;
    double wilson_lo = 0, wilson_hi = 0, k = 0, z_energy = 0;
    // k below the zero-exceedance Wilson floor: no sample size this small can
    // certify the threshold, so only a confident violation (wilson_lo > k) counts.
    bool resolved = true;
    bool pass = true;
};

struct KWeakOptions {
    std::vector<double> s_grid;     // default: {0, T/4, T/2}
    std::vector<double> deltas;     // default: {4 dt, 16 dt, 64 dt}
    std::vector<double> etas = {0.25, 0.5, 1.0};
    std::size_t buckets = 8;
    double wilson_z = 3.0;
};

struct KWeakReport {
    std::vector<KWeakCell> cells;
    bool exceedance_pass = true;
    double worst_margin = -std::numeric_limits<double>::infinity();  // max of wilson_hi - k over resolved cells
    std::size_t resolved = 0;
    // Delegated items; unset items are not part of the verdict.
    std::optional<bool> brownian, exact_state, bsde, boundary;
    bool pass() const {
        bool ok = exceedance_pass;
        for (auto* f : {&brownian, &exact_state, &bsde, &boundary})
            if (*f) ok = ok && **f;
        return ok;
    }
};

inline KWeakOptions resolve_kweak(const KWeakOptions& o, const PathEnsemble& e) {
    KWeakOptions r = o;
    if (r.s_grid.empty()) r.s_grid = {0.0, 0.25 * e.T(), 0.5 * e.T()};
    if (r.deltas.empty()) r.deltas = {4 * e.dt(), 16 * e.dt(), 64 * e.dt()};
    return r;
}

inline Samples k_weak_samples(const PathEnsemble& e, const KWeakOptions& o) {
    auto ms = detail::delta_steps(e, o.deltas);
    Samples s;
    for (std::size_t a = 0; a < o.s_grid.size(); ++a) {
        std::size_t ks = e.node(o.s_grid[a]);
        auto& X = s.add("X@" + std::to_string(a), e.M);
        auto& Y = s.add("Y@" + std::to_string(a), e.M);
        std::vector<std::vector<double>*> dy, ze;
        for (std::size_t i = 0; i < ms.size(); ++i) {
            dy.push_back(&s.add("dY@" + std::to_string(a) + "," + std::to_string(i), e.M));
            ze.push_back(&s.add("Z2@" + std::to_string(a) + "," + std::to_string(i), e.M));
        }
        for (std::size_t p = 0; p < e.M; ++p) {
            X[p] = e.X[e.idx(p, ks)];
            Y[p] = e.Y[e.idx(p, ks)];
            for (std::size_t i = 0; i < ms.size(); ++i) {
                std::size_t k1 = std::min(ks + ms[i], e.nt() - 1);
                (*dy[i])[p] = std::abs(e.Y[e.idx(p, k1)] - Y[p]);
                double zi = 0;
                for (std::size_t k = ks; k < k1; ++k) zi += e.Z[e.idx(p, k)] * e.Z[e.idx(p, k)] * (e.t[k + 1] - e.t[k]);
                (*ze[i])[p] = zi;
            }
        }
    }
    return s;
}

inline KWeakReport k_weak_report(const Samples& s, const KFunction& k, const KWeakOptions& o) {
    if (o.buckets < 8) throw ArgumentError("k_weak_check needs at least 8 buckets");
    KWeakReport r;
    std::size_t M = s.rows();
    if (M / o.buckets < 30) throw PowerError("bucket occupancy below the minimum");
    for (std::size_t a = 0; a < o.s_grid.size(); ++a) {
        const auto& X = s.col("X@" + std::to_string(a));
        const auto& Y = s.col("Y@" + std::to_string(a));
        auto label = stats::equal_count_buckets_2d(X, Y, o.buckets, 1);
        for (std::size_t i = 0; i < o.deltas.size(); ++i) {
            const auto& dy = s.col("dY@" + std::to_string(a) + "," + std::to_string(i));
            const auto& ze = s.col("Z2@" + std::to_string(a) + "," + std::to_string(i));
            auto zm = stats::bucket_means(ze, label, o.buckets);
            for (double eta : o.etas) {
                std::vector<std::size_t> cnt(o.buckets), exc(o.buckets);
                for (std::size_t p = 0; p < M; ++p) {
                    cnt[label[p]]++;
                    if (dy[p] >= eta) exc[label[p]]++;
                }
                double kv = k(o.s_grid[a], o.deltas[i], eta);
                for (std::size_t b = 0; b < o.buckets; ++b) {
                    KWeakCell c;
                    c.s = o.s_grid[a];
                    c.delta = o.deltas[i];
                    c.eta = eta;
                    c.bucket = b;
                    c.count = cnt[b];
                    c.exceed = exc[b];
                    auto wi = stats::wilson(exc[b], cnt[b], o.wilson_z);
                    c.wilson_lo = wi.lo;
                    c.wilson_hi = wi.hi;
                    c.k = kv;
                    c.z_energy = zm.mean[b];
                    c.resolved = kv >= stats::wilson(0, cnt[b], o.wilson_z).hi;
                    if (c.resolved) {
                        c.pass = c.wilson_hi <= kv;
                        r.worst_margin = std::max(r.worst_margin, c.wilson_hi - kv);
                        ++r.resolved;
                    } else {
                        c.pass = c.wilson_lo <= kv;
                    }
                    if (!c.pass) r.exceedance_pass = false;
                    r.cells.push_back(c);
                }
            }
        }
    }
    if (r.resolved == 0) throw PowerError("no k-weak cell is resolvable at this sample size; raise M, delta or lower eta");
    return r;
}

inline KWeakReport k_weak_check(const PathEnsemble& e, const KFunction& k, const KWeakOptions& opt = {}) {
    auto o = resolve_kweak(opt, e);
    return k_weak_report(k_weak_samples(e, o), k, o);
}

/// Adds a jump of the given size to Y on (s_star, T].
inline void inject_jump(PathEnsemble& e, double s_star, double size) {
    for (std::size_t p = 0; p < e.M; ++p)
        for (std::size_t k = 0; k < e.nt(); ++k)
            if (e.t[k] > s_star) e.Y[e.idx(p, k)] += size;
}

// ---------------------------------------------------------------------------
// Comparison-principle preconditions

struct ComparisonOptions {
    std::size_t samples = 20000;
    std::pair<double, double> x_range{-3.0, 3.0};
    std::pair<double, double> y_range{-2.0, 2.0};
    double p_max = 5.0;
    double A_max = 10.0;
    std::size_t bins = 24;
    double vanish_tol = 1e-3;
    // Bounds for the alternative structural inequality; unset skips it.
    std::optional<double> C1, C2;
};

struct ModulusBin {
    double r_lo = 0, r_hi = 0;
    std::size_t count = 0;
    double raw = 0;    // largest positive part of the F-difference in the bin
    double w = 0;      // nondecreasing envelope of raw
    double w_abs = 0;  // envelope of the absolute difference
};

struct AdmissibleTriple {
    double alpha, A, B;
};

/// Scalar form of -3a diag(1,1) <= diag(A, -B) <= 3a [[1,-1],[-1,1]].
inline bool admissible(double a, double A, double B) {
    // Relative slack so the equality case A = B = 0 survives rounding.
    return a > 0 && A >= -3 * a && A <= 3 * a && B >= -3 * a && B <= 3 * a &&
           (3 * a - A) * (3 * a + B) >= 9 * a * a * (1 - 1e-12);
}

/// Rejection sampler with alpha log-uniform in [1e-2, 1e2].
inline AdmissibleTriple sample_admissible(UniformStream& u, std::size_t max_attempts = 100000) {
    for (std::size_t i = 0; i < max_attempts; ++i) {
        double a = std::pow(10.0, -2.0 + 4.0 * u());
        double A = 3 * a * (2 * u() - 1), B = 3 * a * (2 * u() - 1);
        if (admissible(a, A, B)) return {a, A, B};
    }
    throw EvaluationError("admissible sampler exhausted its attempts");
}

struct ComparisonReport {
    bool F_decreasing = true;
    std::size_t decreasing_violations = 0;
    bool sigma_time_only = true;
    bool h_decreasing = true;
    bool example1 = false;
    bool sigma_ty = true;  // sigma independent of x
    std::vector<ModulusBin> w;
    bool w_vanishing = false;
    bool w_abs_vanishing = false;
    double lipschitz_h_x = 0;
    double lipschitz_sigma_y = 0;
    bool lipschitz_envelope = true;  // raw(bin) <= lipschitz_h_x * r_hi in every bin
    std::optional<bool> example2;
    std::size_t accepted_triples = 0;
    bool pass() const { return F_decreasing && w_vanishing; }
};

/// F(t, x, y, p, A) = 1/2 sigma^2 A + h(t, x, y, p sigma).
inline double structure_F(const CoefficientBundle& c, double t, double x, double y, double p, double A) {
    double s = c.sigma(t, x, y);
    return 0.5 * s * s * A + c.h(t, x, y, p * s);
}

inline ComparisonReport comparison_precondition(const CoefficientBundle& c, double T, const ComparisonOptions& o = {}) {
    ComparisonReport r;
    auto [xl, xh] = o.x_range;
    auto [yl, yh] = o.y_range;
    UniformStream u(0x5eed, 0, 11);
    // Monotonicity of F in y, and the structure of sigma and h.
    for (std::size_t i = 0; i < o.samples; ++i) {
        double t = T * u(), x = xl + (xh - xl) * u();
        double y1 = yl + (yh - yl) * u(), y2 = yl + (yh - yl) * u();
        if (y1 > y2) std::swap(y1, y2);
        double p = o.p_max * (2 * u() - 1), A = o.A_max * (2 * u() - 1);
        if (structure_F(c, t, x, y1, p, A) < structure_F(c, t, x, y2, p, A) - 1e-12) {
            r.F_decreasing = false;
            r.decreasing_violations++;
        }
        double x2 = xl + (xh - xl) * u();
        if (c.sigma(t, x, y1) != c.sigma(t, x2, y2)) r.sigma_time_only = false;
        if (c.sigma(t, x, y1) != c.sigma(t, x2, y1)) r.sigma_ty = false;
        if (y2 - y1 > 1e-9)
            r.lipschitz_sigma_y = std::max(r.lipschitz_sigma_y, std::abs(c.sigma(t, x, y2) - c.sigma(t, x, y1)) / (y2 - y1));
        double z = o.p_max * (2 * u() - 1);
        if (c.h(t, x, y1, z) < c.h(t, x, y2, z) - 1e-12) r.h_decreasing = false;
        double dx = x2 - x;
        if (std::abs(dx) > 1e-9)
            r.lipschitz_h_x = std::max(r.lipschitz_h_x, std::abs(c.h(t, x2, y1, z) - c.h(t, x, y1, z)) / std::abs(dx));
    }
    r.example1 = r.sigma_time_only && r.h_decreasing;

    // Structure inequality on admissible (alpha, A, B):
    // -3a <= A, B <= 3a and (3a - A)(3a + B) >= 9a^2.
    double rmin = 1e-7, rmax = 1e3;
    r.w.resize(o.bins);
    for (std::size_t b = 0; b < o.bins; ++b) {
        r.w[b].r_lo = rmin * std::pow(rmax / rmin, static_cast<double>(b) / static_cast<double>(o.bins));
        r.w[b].r_hi = rmin * std::pow(rmax / rmin, static_cast<double>(b + 1) / static_cast<double>(o.bins));
    }
    while (r.accepted_triples < o.samples) {
        auto [a, A, B] = sample_admissible(u);
        r.accepted_triples++;
        double t = T * u(), y = yl + (yh - yl) * u();
        double x1 = xl + (xh - xl) * u();
        double dx = std::pow(10.0, -6.0 + 6.0 * u()) * (u() < 0.5 ? -1 : 1);
        double x2 = x1 - dx;
        double p = a * (x1 - x2);
        double diff = structure_F(c, t, x1, y, p, A) - structure_F(c, t, x2, y, p, B);
        double rr = a * dx * dx + std::abs(dx);
        if (rr < rmin || rr >= rmax) continue;
        auto b = static_cast<std::size_t>(std::log(rr / rmin) / std::log(rmax / rmin) * static_cast<double>(o.bins));
        b = std::min(b, o.bins - 1);
        r.w[b].count++;
        r.w[b].raw = std::max(r.w[b].raw, std::max(0.0, diff));
        r.w[b].w_abs = std::max(r.w[b].w_abs, std::abs(diff));
    }
    for (const auto& bin : r.w)
        if (bin.count > 0 && bin.raw > r.lipschitz_h_x * bin.r_hi * (1 + 1e-9) + 1e-12) r.lipschitz_envelope = false;
    // Monotone envelopes and the vanishing verdict on the smallest occupied bin.
    double env = 0, env_abs = 0, wmax = 0;
    for (auto& bin : r.w) {
        env = std::max(env, bin.raw);
        env_abs = std::max(env_abs, bin.w_abs);
        bin.w = env;
        bin.w_abs = env_abs;
        wmax = std::max(wmax, env_abs);
    }
    for (auto& bin : r.w)
        if (bin.count > 0) {
            double scale = std::max(1.0, wmax);
            r.w_vanishing = bin.w <= o.vanish_tol * scale;
            r.w_abs_vanishing = bin.w_abs <= o.vanish_tol * scale;
            break;
        }
    if (o.C1 && o.C2) {
        bool ok = true;
        UniformStream v(0x5eed, 1, 11);
        for (std::size_t i = 0; i < o.samples / 10; ++i) {
            double t = T * v(), x = xl + (xh - xl) * v();
            double y1 = yl + (yh - yl) * v(), y2 = yl + (yh - yl) * v();
            if (y1 > y2) std::swap(y1, y2);
            double s1 = c.sigma(t, x, y1), s2 = c.sigma(t, x, y2);
            double inf = std::numeric_limits<double>::infinity();
            for (int q = 0; q <= 40; ++q) {
                double p = *o.C1 * (-1.0 + q / 20.0);
                inf = std::min(inf, c.h(t, x, y1, p * s1) - c.h(t, x, y2, p * s2));
            }
            if (inf < *o.C2 * std::abs(s1 - s2) - 1e-12) ok = false;
        }
        r.example2 = ok;
    }
    return r;
}

}  // namespace fbmp
