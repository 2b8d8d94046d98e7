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
#include "fbmp/stats.hpp"

namespace fbmp {

struct SolverOptions {
    double theta = 1.0;
    double picard_tol = 1e-8;
    int picard_max = 50;
    double residual_tol = 1e-10;
};

/// Tabulated decoupling field u and its spatial derivative on a grid.
struct FieldSolution {
    Grid grid;
    std::vector<double> u;   // row-major [time][space]
    std::vector<double> ux;
    double theta = 1.0;
    int picard_max_iterations = 0;
    std::size_t picard_total_iterations = 0;
    double max_linear_residual = 0.0;
    std::string boundary = "linear_extrapolation";
    std::string label;

    std::size_t nx() const { return grid.nx(); }
    std::size_t nt() const { return grid.nt(); }
    double at(std::size_t k, std::size_t j) const { return u[k * nx() + j]; }
    double slope_at(std::size_t k, std::size_t j) const { return ux[k * nx() + j]; }

    /// Bilinear interpolation of u and u_x at (t, x).
    void interpolate(double t, double x, double& uv, double& uxv) const {
        auto [k, wt] = grid.locate_t(t);
        auto [j, wx] = grid.locate_x(x);
        interpolate_cell(k, wt, j, wx, uv, uxv);
    }

    void interpolate_cell(std::size_t k, double wt, std::size_t j, double wx, double& uv, double& uxv) const {
        std::size_t n = nx();
        const double* a = &u[k * n + j];
        const double* d = &ux[k * n + j];
        if (wt == 0.0) {
            uv = a[0] + wx * (a[1] - a[0]);
            uxv = d[0] + wx * (d[1] - d[0]);
            return;
        }
        const double* b = a + n;
        const double* e = d + n;
        double u0 = a[0] + wx * (a[1] - a[0]), u1 = b[0] + wx * (b[1] - b[0]);
        double d0 = d[0] + wx * (d[1] - d[0]), d1 = e[0] + wx * (e[1] - e[0]);
        uv = u0 + wt * (u1 - u0);
        uxv = d0 + wt * (d1 - d0);
    }

    double value(double t, double x) const {
        double a, b;
        interpolate(t, x, a, b);
        return a;
    }
    double slope(double t, double x) const {
        double a, b;
        interpolate(t, x, a, b);
        return b;
    }
};

/// Thomas algorithm for a tridiagonal system; lo[0] and up[n-1] unused.
inline std::vector<double> solve_tridiagonal(const std::vector<double>& lo, const std::vector<double>& di,
                                             const std::vector<double>& up, const std::vector<double>& rhs) {
    std::size_t n = di.size();
    std::vector<double> c(n), d(n), x(n);
    double piv = di[0];
    if (!(std::abs(piv) > 1e-300)) throw SolverError("singular tridiagonal system");
    c[0] = up[0] / piv;
    d[0] = rhs[0] / piv;
    for (std::size_t i = 1; i < n; ++i) {
        piv = di[i] - lo[i] * c[i - 1];
        if (!(std::abs(piv) > 1e-300) || !std::isfinite(piv)) throw SolverError("singular tridiagonal system");
        c[i] = i + 1 < n ? up[i] / piv : 0.0;
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / piv;
    }
    x[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    return x;
}

/// Spatial first derivative: central inside, second-order one-sided at ends.
inline void differentiate_row(const double* u, double* ux, std::size_t n, double dx) {
    for (std::size_t j = 1; j + 1 < n; ++j) ux[j] = (u[j + 1] - u[j - 1]) / (2.0 * dx);
    ux[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx);
    ux[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dx);
}

inline std::vector<double> differentiate(const FieldSolution& f) {
    if (f.nx() < 3) throw ArgumentError("differentiation needs at least 3 x-nodes");
    if (f.u.size() != f.nt() * f.nx()) throw ArgumentError("field values do not match the grid");
    std::vector<double> out(f.u.size());
    for (std::size_t k = 0; k < f.nt(); ++k)
        differentiate_row(&f.u[k * f.nx()], &out[k * f.nx()], f.nx(), f.grid.dx);
    return out;
}

namespace detail {

inline void check_row(const std::vector<double>& w, double t) {
    for (double v : w)
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite solution value at t = " << t;
            throw EvaluationError(os.str());
        }
}

}  // namespace detail

/// Backward theta-scheme with lagged Picard iteration for
///   u_t + 1/2 sigma(t,x,u)^2 u_xx + h(t,x,u,u_x sigma) = 0
/// on rows [k_lo, k_hi] of the grid, terminal data given at row k_hi.
/// Boundary columns carry u_xx = 0 (linear extrapolation).
inline FieldSolution solve_rows(const Grid& grid, std::size_t k_lo, std::size_t k_hi,
                                const std::vector<double>& terminal, const DiffusionFn& sigma, const DriftFn& h,
                                const SolverOptions& opt = {}) {
    std::size_t nx = grid.nx();
    if (terminal.size() != nx) throw ArgumentError("terminal data does not match the grid");
    if (k_hi <= k_lo || k_hi >= grid.nt()) throw ArgumentError("invalid row range");
    if (opt.theta < 0 || opt.theta > 1) throw ArgumentError("theta must lie in [0, 1]");
    double dx = grid.dx, dx2 = dx * dx;
    std::size_t rows = k_hi - k_lo + 1;
    FieldSolution out;
    out.grid = grid;
    out.grid.t.assign(grid.t.begin() + static_cast<std::ptrdiff_t>(k_lo),
                      grid.t.begin() + static_cast<std::ptrdiff_t>(k_hi) + 1);
    out.theta = opt.theta;
    out.u.assign(rows * nx, 0.0);
    out.ux.assign(rows * nx, 0.0);
    std::copy(terminal.begin(), terminal.end(), out.u.begin() + static_cast<std::ptrdiff_t>((rows - 1) * nx));
    detail::check_row(terminal, grid.t[k_hi]);

    std::vector<double> a(nx), f(nx), wx(nx), lo(nx - 2), di(nx - 2), up(nx - 2), rhs(nx - 2), base(nx);
    auto coefficients = [&](double t, const std::vector<double>& w) {
        differentiate_row(w.data(), wx.data(), nx, dx);
        for (std::size_t j = 0; j < nx; ++j) {
            double s = sigma(t, grid.x[j], w[j]);
            double hv = h(t, grid.x[j], w[j], wx[j] * s);
            if (!std::isfinite(s) || !std::isfinite(hv)) {
                std::ostringstream os;
                os << "non-finite coefficient at (t, x) = (" << t << ", " << grid.x[j] << ")";
                throw EvaluationError(os.str());
            }
            a[j] = 0.5 * s * s;
            f[j] = hv;
        }
    };

    std::vector<double> w(terminal), prev(nx);
    for (std::size_t r = rows - 1; r-- > 0;) {
        std::size_t k = k_lo + r;
        double t = grid.t[k], tn = grid.t[k + 1];
        double dt = tn - t;
        std::copy(out.u.begin() + static_cast<std::ptrdiff_t>((r + 1) * nx),
                  out.u.begin() + static_cast<std::ptrdiff_t>((r + 2) * nx), prev.begin());
        // Explicit part from the known later row.
        for (std::size_t j = 0; j < nx; ++j) base[j] = prev[j];
        if (opt.theta < 1.0) {
            coefficients(tn, prev);
            double amax = 0;
            for (std::size_t j = 0; j < nx; ++j) amax = std::max(amax, 2.0 * a[j]);
            if (opt.theta < 0.5 && dt * amax * (1.0 - 2.0 * opt.theta) > dx2 * (1.0 + 1e-12)) {
                std::ostringstream os;
                os << "explicit scheme unstable: dt = " << dt << " exceeds dx^2 / max sigma^2 = " << dx2 / amax;
                throw SolverError(os.str());
            }
            for (std::size_t j = 1; j + 1 < nx; ++j) {
                double lap = (prev[j - 1] - 2.0 * prev[j] + prev[j + 1]) / dx2;
                bool edge = (j == 1 || j + 2 == nx);
                base[j] += (1.0 - opt.theta) * dt * ((edge ? 0.0 : a[j] * lap) + f[j]);
            }
        }
        w = prev;
        std::vector<double> history;
        bool converged = false;
        for (int it = 1; it <= opt.picard_max; ++it) {
            coefficients(t, w);
            std::size_t m = nx - 2;
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t j = i + 1;
                double beta = opt.theta * dt * a[j] / dx2;
                lo[i] = -beta;
                di[i] = 1.0 + 2.0 * beta;
                up[i] = -beta;
                rhs[i] = base[j] + opt.theta * dt * f[j];
            }
            // Rows next to the boundary: eliminating the extrapolated node
            // removes the diffusion term there.
            lo[0] = 0.0;
            di[0] = 1.0;
            up[0] = 0.0;
            lo[m - 1] = 0.0;
            di[m - 1] = 1.0;
            up[m - 1] = 0.0;
            auto sol = solve_tridiagonal(lo, di, up, rhs);
            double res = 0, scale = 1;
            for (std::size_t i = 0; i < m; ++i) {
                double ax = di[i] * sol[i] + (i > 0 ? lo[i] * sol[i - 1] : 0.0) + (i + 1 < m ? up[i] * sol[i + 1] : 0.0);
                res = std::max(res, std::abs(ax - rhs[i]));
                scale = std::max(scale, std::abs(rhs[i]));
            }
            out.max_linear_residual = std::max(out.max_linear_residual, res / scale);
            if (res / scale > opt.residual_tol) throw SolverError("linear solve residual above tolerance");
            std::vector<double> nw(nx);
            for (std::size_t i = 0; i < m; ++i) nw[i + 1] = sol[i];
            nw[0] = 2.0 * nw[1] - nw[2];
            nw[nx - 1] = 2.0 * nw[nx - 2] - nw[nx - 3];
            detail::check_row(nw, t);
            double change = 0;
            for (std::size_t j = 0; j < nx; ++j) change = std::max(change, std::abs(nw[j] - w[j]));
            w.swap(nw);
            history.push_back(change);
            out.picard_total_iterations++;
            out.picard_max_iterations = std::max(out.picard_max_iterations, it);
            if (change < opt.picard_tol) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            std::ostringstream os;
            os << "Picard iteration did not converge at t = " << t << "; change history:";
            for (double c : history) os << ' ' << c;
            throw ConvergenceError(os.str());
        }
        std::copy(w.begin(), w.end(), out.u.begin() + static_cast<std::ptrdiff_t>(r * nx));
    }
    for (std::size_t r = 0; r < rows; ++r) differentiate_row(&out.u[r * nx], &out.ux[r * nx], nx, dx);
    return out;
}

inline std::vector<double> terminal_row(const Grid& grid, const TerminalFn& g) {
    std::vector<double> v(grid.nx());
    for (std::size_t j = 0; j < grid.nx(); ++j) v[j] = g(grid.x[j]);
    return v;
}

/// Linear backward problem with given diffusion and source
///   u_t + 1/2 sigma(t,x,u)^2 u_xx + h(t,x,u,u_x sigma) = 0.
inline FieldSolution solve_linear_backward(const Grid& grid, const DiffusionFn& sigma, const DriftFn& h,
                                           const TerminalFn& g, const SolverOptions& opt = {}) {
    grid.validate();
    auto f = solve_rows(grid, 0, grid.nt() - 1, terminal_row(grid, g), sigma, h, opt);
    f.label = "linear";
    return f;
}

inline FieldSolution solve_quasilinear(const CoefficientBundle& c, const Grid& grid, const SolverOptions& opt = {}) {
    grid.validate();
    auto f = solve_rows(grid, 0, grid.nt() - 1, terminal_row(grid, c.g), c.sigma, c.h, opt);
    f.label = c.label;
    return f;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct XWindow {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

struct HolderFit {
    double C = 0.0;       // constant, weighted by T^(alpha/2) for the field itself
    double C_raw = 0.0;   // fitted constant before weighting
    double alpha = 1.0;
    double alpha_space = 1.0;
    double alpha_time = 1.0;
    double r2 = 1.0;
    std::size_t pairs = 0;
};

namespace detail {

struct PairFamily {
    std::vector<double> logd, logdu;
};

inline HolderFit fit_holder(const FieldSolution& f, const std::vector<double>& vals, double T0, XWindow win,
                            double weight_T) {
    const Grid& g = f.grid;
    std::size_t nx = g.nx();
    std::vector<std::size_t> js;
    for (std::size_t j = 1; j + 1 < nx; ++j)
        if (g.x[j] >= win.lo - 1e-12 && g.x[j] <= win.hi + 1e-12) js.push_back(j);
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < g.nt(); ++k)
        if (g.t[k] <= T0 + 1e-12) ks.push_back(k);
    if (js.size() < 2 || ks.empty()) throw InsufficientDataError("no nodes inside the fit window");
    std::size_t jstride = std::max<std::size_t>(1, js.size() / 100);
    std::size_t kstride = std::max<std::size_t>(1, ks.size() / 10);
    PairFamily space, time;
    bool any_nonzero = false;
    std::size_t jmin = js.front(), jmax = js.back();
    std::size_t kmax = ks.back();
    for (std::size_t ki = 0; ki < ks.size(); ki += kstride) {
        std::size_t k = ks[ki];
        for (std::size_t ji = 0; ji < js.size(); ji += jstride) {
            std::size_t j = js[ji];
            double v0 = vals[k * nx + j];
            for (std::size_t lag = 1; j + lag <= jmax && lag <= (jmax - jmin) / 8 + 1; lag *= 2) {
                double du = std::abs(vals[k * nx + j + lag] - v0);
                double d = g.x[j + lag] - g.x[j];
                if (du > 1e-13 * std::max(1.0, std::abs(v0))) {
                    any_nonzero = true;
                    space.logd.push_back(std::log(d));
                    space.logdu.push_back(std::log(du));
                }
            }
            for (std::size_t lag = 1; k + lag <= kmax; lag *= 2) {
                double du = std::abs(vals[(k + lag) * nx + j] - v0);
                double d = std::sqrt(g.t[k + lag] - g.t[k]);
                if (du > 1e-13 * std::max(1.0, std::abs(v0))) {
                    any_nonzero = true;
                    time.logd.push_back(std::log(d));
                    time.logdu.push_back(std::log(du));
                }
            }
        }
    }
    HolderFit r;
    if (!any_nonzero) {
        r.C = 0;
        r.C_raw = 0;
        r.alpha = 1;
        return r;
    }
    r.pairs = space.logd.size() + time.logd.size();
    if (r.pairs < 100) throw InsufficientDataError("fewer than 100 usable pairs for the Hoelder fit");
    double alpha = 1.0;
    double r2 = 1.0;
    bool have = false;
    auto consider = [&](const PairFamily& fam, double& out_alpha) {
        out_alpha = 1.0;
        if (fam.logd.size() < 3) return;
        auto fit = stats::linear_fit(fam.logd, fam.logdu);
        out_alpha = std::clamp(fit.slope, 1e-6, 1.0);
        if (!have || out_alpha < alpha) {
            alpha = out_alpha;
            r2 = fit.r2;
            have = true;
        }
    };
    consider(space, r.alpha_space);
    consider(time, r.alpha_time);
    r.alpha = alpha;
    r.r2 = r2;
    // Intercept at the chosen exponent: largest family mean of log du - alpha log d.
    double best = -std::numeric_limits<double>::infinity();
    for (const PairFamily* fam : {&space, &time}) {
        if (fam->logd.empty()) continue;
        std::vector<double> v(fam->logd.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = fam->logdu[i] - alpha * fam->logd[i];
        best = std::max(best, stats::mean(v));
    }
    r.C_raw = std::exp(best);
    r.C = r.C_raw * std::pow(weight_T, alpha / 2.0);
    return r;
}

}  // namespace detail

/// Hoelder exponent and constant of u on [0, T0] x window.  The constant is
/// weighted so that |u(p) - u(q)| <= C (T - t)^(-alpha/2) d(p, q)^alpha.
inline HolderFit estimate_holder(const FieldSolution& f, double T0, XWindow win = {}) {
    double T = f.grid.T();
    if (!(T0 < T)) throw ArgumentError("fit horizon must lie before the terminal time");
    return detail::fit_holder(f, f.u, T0, win, T);
}

struct GradientBounds {
    double sup_ux = 0.0;
    HolderFit holder;
};

inline GradientBounds gradient_bounds(const FieldSolution& f, XWindow win = {}, std::optional<double> T0 = {}) {
    GradientBounds g;
    const Grid& gr = f.grid;
    std::size_t nx = gr.nx();
    double t0 = T0.value_or(gr.T());
    for (std::size_t k = 0; k < gr.nt(); ++k) {
        if (gr.t[k] > t0 + 1e-12) break;
        for (std::size_t j = 1; j + 1 < nx; ++j)
            if (gr.x[j] >= win.lo - 1e-12 && gr.x[j] <= win.hi + 1e-12)
                g.sup_ux = std::max(g.sup_ux, std::abs(f.ux[k * nx + j]));
    }
    g.holder = detail::fit_holder(f, f.ux, t0, win, 1.0);
    return g;
}

/// Sup distances between consecutive levels of a solved cascade.
inline std::vector<double> cascade_convergence(const std::vector<const FieldSolution*>& fields, XWindow win = {}) {
    if (fields.size() < 2) throw ArgumentError("cascade convergence needs at least two levels");
    std::vector<double> out;
    for (std::size_t l = 0; l + 1 < fields.size(); ++l) {
        const auto& a = *fields[l];
        const auto& b = *fields[l + 1];
        if (a.grid.nx() != b.grid.nx() || a.grid.nt() != b.grid.nt())
            throw ArgumentError("cascade levels must share one grid");
        double d = 0;
        std::size_t nx = a.nx();
        for (std::size_t k = 0; k < a.nt(); ++k)
            for (std::size_t j = 0; j < nx; ++j)
                if (a.grid.x[j] >= win.lo - 1e-12 && a.grid.x[j] <= win.hi + 1e-12)
                    d = std::max(d, std::abs(a.u[k * nx + j] - b.u[k * nx + j]));
        out.push_back(d);
    }
    return out;
}

/// Max interior residual of the fully implicit discretisation of the PDE.
inline double pde_residual(const FieldSolution& f, const CoefficientBundle& c, std::size_t margin = 2) {
    const Grid& g = f.grid;
    std::size_t nx = g.nx();
    double worst = 0;
    for (std::size_t k = 0; k + 1 < g.nt(); ++k) {
        double dt = g.t[k + 1] - g.t[k];
        for (std::size_t j = margin; j + margin < nx; ++j) {
            double u = f.u[k * nx + j];
            double ut = (f.u[(k + 1) * nx + j] - u) / dt;
            double uxx = (f.u[k * nx + j - 1] - 2 * u + f.u[k * nx + j + 1]) / (g.dx * g.dx);
            double s = c.sigma(g.t[k], g.x[j], u);
            double r = ut + 0.5 * s * s * uxx + c.h(g.t[k], g.x[j], u, f.ux[k * nx + j] * s);
            worst = std::max(worst, std::abs(r));
        }
    }
    return worst;
}

}  // namespace fbmp
