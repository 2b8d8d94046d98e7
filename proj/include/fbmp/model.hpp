#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/rng.hpp"

namespace fbmp {

/// Coefficient signatures.  The z argument of b and h is the martingale
/// weight Z (not the slope z = Z / sigma).
using DriftFn = std::function<double(double t, double x, double y, double z)>;
using DiffusionFn = std::function<double(double t, double x, double y)>;
using TerminalFn = std::function<double(double x)>;

struct ProblemSpec {
    double x0 = 0.0;
    double T = 1.0;
    std::optional<double> L;  // truncation half-width; default from K and T
    double K = 1.0;

    double halfwidth() const {
        if (L) return *L;
        return std::abs(x0) + 6.0 * std::sqrt(K * T);
    }
};

struct CoefficientBundle {
    DriftFn b = [](double, double, double, double) { return 0.0; };
    DiffusionFn sigma = [](double, double, double) { return 1.0; };
    DriftFn h = [](double, double, double, double) { return 0.0; };
    TerminalFn g = [](double) { return 0.0; };
    double K = 1.0;
    std::string label = "bundle";
};

/// Uniform tensor grid in (t, x).
struct Grid {
    std::vector<double> t;
    std::vector<double> x;
    double dt = 0.0;
    double dx = 0.0;

    std::size_t nt() const { return t.size(); }
    std::size_t nx() const { return x.size(); }
    double T() const { return t.back(); }
    double L() const { return x.back(); }

    static Grid uniform(double T, std::size_t steps, double L, std::size_t cells) {
        if (!(T > 0) || !(L > 0) || steps < 1 || cells < 4)
            throw ArgumentError("grid needs T > 0, L > 0, at least 1 step and 4 cells");
        Grid g;
        g.dt = T / static_cast<double>(steps);
        g.dx = 2.0 * L / static_cast<double>(cells);
        g.t.resize(steps + 1);
        g.x.resize(cells + 1);
        for (std::size_t i = 0; i <= steps; ++i) g.t[i] = T * static_cast<double>(i) / static_cast<double>(steps);
        for (std::size_t j = 0; j <= cells; ++j)
            g.x[j] = -L + 2.0 * L * static_cast<double>(j) / static_cast<double>(cells);
        g.t.back() = T;
        g.x.back() = L;
        return g;
    }

    /// Grid with spacing close to (dt, dx) that hits T and +-L exactly.
    static Grid from_spacing(double T, double dt, double L, double dx) {
        auto steps = static_cast<std::size_t>(std::llround(T / dt));
        auto cells = static_cast<std::size_t>(std::llround(2.0 * L / dx));
        return uniform(T, std::max<std::size_t>(steps, 1), L, cells);
    }

    void validate() const {
        auto check = [](const std::vector<double>& v, const char* name) {
            if (v.size() < 2) throw ArgumentError(std::string("grid axis ") + name + " too short");
            double h = (v.back() - v.front()) / static_cast<double>(v.size() - 1);
            for (std::size_t i = 1; i < v.size(); ++i)
                if (std::abs((v[i] - v[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)) + 1e-12)
                    throw ArgumentError(std::string("grid axis ") + name + " is not uniform");
        };
        check(t, "t");
        check(x, "x");
    }

    /// Cell index j and weight w with x = (1-w) x_j + w x_{j+1}; clamps.
    std::pair<std::size_t, double> locate_x(double xv) const {
        double s = (xv - x.front()) / dx;
        if (s <= 0) return {0, 0.0};
        auto j = static_cast<std::size_t>(s);
        if (j >= x.size() - 1) return {x.size() - 2, 1.0};
        return {j, s - static_cast<double>(j)};
    }

    std::pair<std::size_t, double> locate_t(double tv) const {
        double s = (tv - t.front()) / dt;
        if (s <= 0) return {0, 0.0};
        // Snap to nodes so grid times shared with the solver hit rows exactly.
        auto k = static_cast<std::size_t>(s);
        double w = s - static_cast<double>(k);
        if (w > 1.0 - 1e-9) {
            ++k;
            w = 0.0;
        } else if (w < 1e-9) {
            w = 0.0;
        }
        if (k >= t.size() - 1) return {t.size() - 2, 1.0};
        return {k, w};
    }
};

/// Partition 0 = t_0 < t_1 < ... < t_N = T of a discrete functional.
struct Partition {
    std::vector<double> times;
    std::size_t N() const { return times.size() - 1; }
};

inline Partition make_partition(std::vector<double> times) {
    if (times.size() < 2) throw ArgumentError("partition needs at least two times");
    if (times.front() != 0.0) throw ArgumentError("partition must start at 0");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw ArgumentError("partition times must be strictly increasing");
    return Partition{std::move(times)};
}

/// Uniform partition t_k = k T / N.
inline Partition make_partition(double T, std::size_t N) {
    if (N == 0) throw ArgumentError("partition needs N >= 1");
    if (!(T > 0)) throw ArgumentError("partition needs T > 0");
    std::vector<double> t(N + 1);
    for (std::size_t k = 0; k <= N; ++k) t[k] = T * static_cast<double>(k) / static_cast<double>(N);
    t.back() = T;
    return make_partition(std::move(t));
}

// ---------------------------------------------------------------------------
// Modulus of continuity

struct ModulusPoint {
    double delta = 0.0;
    double value = 0.0;
};

/// sup |f(p) - f(q)| over node pairs with |p - q| <= delta.  Nodes ascending.
inline std::vector<ModulusPoint> estimate_modulus_values(const std::vector<double>& nodes,
                                                         const std::vector<double>& values,
                                                         const std::vector<double>& deltas) {
    if (nodes.size() != values.size() || nodes.size() < 2)
        throw ArgumentError("modulus estimation needs matching nodes and values");
    std::vector<ModulusPoint> out;
    for (double d : deltas) {
        double lim = d * (1.0 + 1e-9) + 1e-15;
        double best = 0.0;
        bool any = false;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            for (std::size_t j = i + 1; j < nodes.size() && nodes[j] - nodes[i] <= lim; ++j) {
                any = true;
                best = std::max(best, std::abs(values[j] - values[i]));
            }
        }
        if (!any) {
            std::ostringstream os;
            os << "no sample pair within delta = " << d << "; refine the sampling grid";
            throw ResolutionError(os.str());
        }
        out.push_back({d, best});
    }
    return out;
}

inline std::vector<ModulusPoint> estimate_modulus(const std::function<double(double)>& f,
                                                  const std::vector<double>& nodes,
                                                  const std::vector<double>& deltas) {
    std::vector<double> v(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        v[i] = f(nodes[i]);
        if (!std::isfinite(v[i])) {
            std::ostringstream os;
            os << "non-finite coefficient value at " << nodes[i];
            throw EvaluationError(os.str());
        }
    }
    return estimate_modulus_values(nodes, v, deltas);
}

// ---------------------------------------------------------------------------
// Bounds audit

struct AuditOptions {
    std::size_t sample_count = 20000;
    std::optional<std::pair<double, double>> y_range;
    std::optional<std::pair<double, double>> z_range;
    std::size_t slice_nodes = 401;
    std::size_t slice_bases = 8;
    std::optional<double> modulus_tolerance;  // checked on the t-modulus at the smallest delta
};

struct SamplePoint {
    double t, x, y, z;
};

struct BoundsReport {
    double sup_b = 0, sup_sigma = 0, sup_h = 0, sup_g = 0;
    double min_sigma2 = 0, max_sigma2 = 0;
    double C0 = 0;
    std::pair<double, double> y_range{0, 0}, z_range{0, 0};
    double K = 0;
    bool h1 = false, h2 = false, h3 = false;
    std::vector<SamplePoint> h2_violations;  // first few
    /// coefficient -> variable -> modulus table
    std::map<std::string, std::map<std::string, std::vector<ModulusPoint>>> modulus;
    std::size_t samples = 0;

    bool pass() const { return h1 && h2 && h3; }
};

namespace detail {
inline void require_finite(double v, const char* what, double t, double x, double y, double z) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "coefficient " << what << " is non-finite at (t, x, y, z) = (" << t << ", " << x << ", " << y
           << ", " << z << ")";
        throw EvaluationError(os.str());
    }
}
}  // namespace detail

/// Samples the coefficients on a low-discrepancy set and reports measured
/// bounds, ellipticity margins and moduli of continuity.
inline BoundsReport audit_bounds(const CoefficientBundle& c, const ProblemSpec& p, const Grid& grid,
                                 const AuditOptions& opt = {}) {
    if (opt.sample_count == 0) throw ArgumentError("audit needs a positive sample count");
    BoundsReport r;
    r.K = c.K;
    double T = p.T, L = grid.L();
    for (double xv : grid.x) {
        double gv = c.g(xv);
        detail::require_finite(gv, "g", T, xv, 0, 0);
        r.sup_g = std::max(r.sup_g, std::abs(gv));
    }
    for (std::size_t i = 0; i < opt.sample_count; ++i) {
        double xv = -L + 2 * L * halton(i, 0);
        double gv = c.g(xv);
        detail::require_finite(gv, "g", T, xv, 0, 0);
        r.sup_g = std::max(r.sup_g, std::abs(gv));
    }
    // A priori range of Y: |u| <= |g| + T K under the declared bound on h.
    double Cr = r.sup_g + T * c.K;
    r.y_range = opt.y_range.value_or(std::pair{-Cr - 1.0, Cr + 1.0});
    double zb = c.K * (Cr + 1.0) / grid.dx;
    r.z_range = opt.z_range.value_or(std::pair{-zb, zb});
    auto [ylo, yhi] = r.y_range;
    auto [zlo, zhi] = r.z_range;

    r.min_sigma2 = std::numeric_limits<double>::infinity();
    r.max_sigma2 = 0.0;
    double lo_e = 1.0 / c.K, hi_e = c.K;
    for (std::size_t i = 0; i < opt.sample_count; ++i) {
        double t = T * halton(i, 1);
        double x = -L + 2 * L * halton(i, 2);
        double y = ylo + (yhi - ylo) * halton(i, 3);
        double z = zlo + (zhi - zlo) * halton(i, 4);
        double bv = c.b(t, x, y, z), sv = c.sigma(t, x, y), hv = c.h(t, x, y, z);
        detail::require_finite(bv, "b", t, x, y, z);
        detail::require_finite(sv, "sigma", t, x, y, z);
        detail::require_finite(hv, "h", t, x, y, z);
        r.sup_b = std::max(r.sup_b, std::abs(bv));
        r.sup_sigma = std::max(r.sup_sigma, std::abs(sv));
        r.sup_h = std::max(r.sup_h, std::abs(hv));
        double s2 = sv * sv;
        r.min_sigma2 = std::min(r.min_sigma2, s2);
        r.max_sigma2 = std::max(r.max_sigma2, s2);
        if ((s2 < lo_e || s2 > hi_e) && r.h2_violations.size() < 16) r.h2_violations.push_back({t, x, y, z});
    }
    r.samples = opt.sample_count;
    r.C0 = r.sup_g + T * r.sup_h;
    r.h1 = r.sup_b <= c.K && r.sup_h <= c.K && r.sup_g <= c.K && r.sup_sigma * r.sup_sigma <= c.K;
    r.h2 = r.min_sigma2 >= lo_e && r.max_sigma2 <= hi_e;

    // Moduli along one variable at a time, maximised over a few base points.
    struct Var {
        const char* name;
        double lo, hi;
    };
    std::vector<Var> vars = {{"t", 0.0, T}, {"x", -L, L}, {"y", ylo, yhi}, {"z", zlo, zhi}};
    auto table = [&](const std::string& coef, std::size_t nvars,
                     const std::function<double(const double*)>& f) {
        for (std::size_t v = 0; v < nvars; ++v) {
            const Var& var = vars[v];
            std::size_t n = opt.slice_nodes;
            std::vector<double> nodes(n);
            for (std::size_t k = 0; k < n; ++k)
                nodes[k] = var.lo + (var.hi - var.lo) * static_cast<double>(k) / static_cast<double>(n - 1);
            double h = nodes[1] - nodes[0];
            std::vector<double> deltas = {h, 4 * h, 16 * h, 64 * h};
            std::vector<ModulusPoint> best;
            for (std::size_t bidx = 0; bidx < opt.slice_bases; ++bidx) {
                double base[4] = {T * halton(bidx, 5), -L + 2 * L * halton(bidx, 6),
                                  ylo + (yhi - ylo) * halton(bidx, 7), zlo + (zhi - zlo) * halton(bidx, 8)};
                std::vector<double> vals(n);
                for (std::size_t k = 0; k < n; ++k) {
                    double a[4] = {base[0], base[1], base[2], base[3]};
                    a[v] = nodes[k];
                    vals[k] = f(a);
                    detail::require_finite(vals[k], coef.c_str(), a[0], a[1], a[2], a[3]);
                }
                auto m = estimate_modulus_values(nodes, vals, deltas);
                if (best.empty())
                    best = m;
                else
                    for (std::size_t q = 0; q < m.size(); ++q) best[q].value = std::max(best[q].value, m[q].value);
            }
            r.modulus[coef][var.name] = best;
        }
    };
    table("b", 4, [&](const double* a) { return c.b(a[0], a[1], a[2], a[3]); });
    table("sigma", 3, [&](const double* a) { return c.sigma(a[0], a[1], a[2]); });
    table("h", 4, [&](const double* a) { return c.h(a[0], a[1], a[2], a[3]); });
    {
        std::size_t n = std::max<std::size_t>(opt.slice_nodes, grid.nx());
        std::vector<double> nodes(n);
        for (std::size_t k = 0; k < n; ++k)
            nodes[k] = -L + 2 * L * static_cast<double>(k) / static_cast<double>(n - 1);
        double h = nodes[1] - nodes[0];
        r.modulus["g"]["x"] = estimate_modulus(c.g, nodes, {h, 4 * h, 16 * h, 64 * h});
    }
    r.h3 = true;
    for (const char* coef : {"b", "sigma", "h"}) {
        const auto& m = r.modulus[coef]["t"];
        for (auto& pnt : m)
            if (!std::isfinite(pnt.value)) r.h3 = false;
        if (opt.modulus_tolerance && !m.empty() && m.front().value > *opt.modulus_tolerance) r.h3 = false;
    }
    return r;
}

}  // namespace fbmp
