#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/model.hpp"
#include "fbmp/rng.hpp"

namespace fbmp {

/// The compactly supported kernel c (1 - u^2)^3 on [-1, 1], unit mass.
struct Kernel {
    static constexpr double c = 35.0 / 32.0;
    static double value(double u) {
        if (std::abs(u) >= 1.0) return 0.0;
        double w = 1.0 - u * u;
        return c * w * w * w;
    }
    static double d1(double u) {
        if (std::abs(u) >= 1.0) return 0.0;
        double w = 1.0 - u * u;
        return c * (-6.0 * u) * w * w;
    }
    static double d2(double u) {
        if (std::abs(u) >= 1.0) return 0.0;
        double w = 1.0 - u * u;
        return c * (-6.0 * w * w + 24.0 * u * u * w);
    }
    /// First absolute moment of the kernel.
    static constexpr double abs_moment = 35.0 / 128.0;
};

/// Values and first two derivatives on a uniform grid; cubic Hermite between
/// nodes, clamped outside.
struct SmoothTable {
    double x0 = 0.0;
    double dx = 1.0;
    std::vector<double> v, d1, d2;

    std::size_t size() const { return v.size(); }
    double xmax() const { return x0 + dx * static_cast<double>(v.size() - 1); }

    std::pair<std::size_t, double> cell(double x) const {
        double s = (x - x0) / dx;
        if (s <= 0) return {0, 0.0};
        auto j = static_cast<std::size_t>(s);
        if (j >= v.size() - 1) return {v.size() - 2, 1.0};
        return {j, s - static_cast<double>(j)};
    }

    double value(double x) const {
        auto [j, s] = cell(x);
        if (s == 0.0) return v[j];
        double s2 = s * s, s3 = s2 * s;
        double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
        return h00 * v[j] + h10 * dx * d1[j] + h01 * v[j + 1] + h11 * dx * d1[j + 1];
    }

    double deriv(double x) const {
        auto [j, s] = cell(x);
        if (s == 0.0) return d1[j];
        double s2 = s * s, s3 = s2 * s;
        double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
        return h00 * d1[j] + h10 * dx * d2[j] + h01 * d1[j + 1] + h11 * dx * d2[j + 1];
    }

    double deriv2(double x) const {
        auto [j, s] = cell(x);
        return (1 - s) * d2[j] + s * d2[j + 1];
    }

    double sup_abs_d2() const {
        double m = 0;
        for (double a : d2) m = std::max(m, std::abs(a));
        return m;
    }
};

/// Convolution of f with the kernel at bandwidth eps, tabulated on the nodes
/// of a uniform axis.  Derivatives come from differentiating the kernel.
inline SmoothTable mollify_function(const std::function<double(double)>& f, double eps,
                                    const std::vector<double>& nodes) {
    if (nodes.size() < 2) throw ArgumentError("mollification needs at least two nodes");
    double dx = (nodes.back() - nodes.front()) / static_cast<double>(nodes.size() - 1);
    if (!(eps >= dx * (1.0 - 1e-12))) throw ResolutionError("bandwidth smaller than the grid spacing");
    auto J = static_cast<std::ptrdiff_t>(std::floor(eps / dx * (1.0 + 1e-12)));
    std::size_t n = nodes.size();
    // Samples on the axis extended by the kernel support.
    std::vector<double> fs(n + 2 * static_cast<std::size_t>(J));
    for (std::ptrdiff_t i = -J; i < static_cast<std::ptrdiff_t>(n) + J; ++i) {
        double xv = nodes.front() + dx * static_cast<double>(i);
        double fv = f(xv);
        if (!std::isfinite(fv)) throw EvaluationError("non-finite value while mollifying");
        fs[static_cast<std::size_t>(i + J)] = fv;
    }
    std::vector<double> w0(2 * J + 1), w1(2 * J + 1), w2(2 * J + 1);
    double S = 0.0;
    for (std::ptrdiff_t j = -J; j <= J; ++j) S += Kernel::value(static_cast<double>(j) * dx / eps);
    for (std::ptrdiff_t j = -J; j <= J; ++j) {
        double u = static_cast<double>(j) * dx / eps;
        w0[j + J] = Kernel::value(u) / S;
        w1[j + J] = Kernel::d1(u) / (eps * S);
        w2[j + J] = Kernel::d2(u) / (eps * eps * S);
    }
    SmoothTable out;
    out.x0 = nodes.front();
    out.dx = dx;
    out.v.resize(n);
    out.d1.resize(n);
    out.d2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double fc = fs[i + J];
        double a = 0, b = 0, c = 0;
        for (std::ptrdiff_t j = -J; j <= J; ++j) {
            // f_eps(x) = sum f(x - s_j) K(s_j)
            double fv = fs[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + J - j)];
            a += fv * w0[j + J];
            b += (fv - fc) * w1[j + J];
            c += (fv - fc) * w2[j + J];
        }
        out.v[i] = a;
        out.d1[i] = b;
        out.d2[i] = c;
    }
    return out;
}

/// Quadrature stencil of the kernel: nodes in (-1, 1) and normalised weights.
struct KernelStencil {
    std::vector<double> u, w;
    explicit KernelStencil(std::size_t half = 6) {
        double S = 0;
        for (std::size_t q = 0; q <= 2 * half; ++q) {
            double uq = (static_cast<double>(q) - static_cast<double>(half)) / static_cast<double>(half + 1);
            u.push_back(uq);
            w.push_back(Kernel::value(uq));
            S += w.back();
        }
        for (double& a : w) a /= S;
    }
};

/// Tensor-product mollification of a function of up to four arguments in the
/// selected argument slots, evaluated lazily by quadrature.
class TensorMollifier {
public:
    using Fn4 = std::function<double(const std::array<double, 4>&)>;
    TensorMollifier(Fn4 f, std::array<double, 4> eps, std::size_t half = 6)
        : f_(std::move(f)), eps_(eps), st_(half) {
        for (std::size_t k = 0; k < 4; ++k)
            if (eps_[k] > 0) active_.push_back(k);
    }

    double operator()(std::array<double, 4> a) const { return rec(a, 0); }

private:
    double rec(std::array<double, 4>& a, std::size_t d) const {
        if (d == active_.size()) return f_(a);
        std::size_t k = active_[d];
        double base = a[k];
        double s = 0;
        for (std::size_t q = 0; q < st_.u.size(); ++q) {
            a[k] = base - eps_[k] * st_.u[q];
            s += st_.w[q] * rec(a, d + 1);
        }
        a[k] = base;
        return s;
    }

    Fn4 f_;
    std::array<double, 4> eps_;
    KernelStencil st_;
    std::vector<std::size_t> active_;
};

// ---------------------------------------------------------------------------
// Cascade

struct CoefficientLevel {
    std::string name;
    double eps = 0.0;                 // 0 when the coefficient is left unchanged
    double error = 0.0;               // certified sup error on the measurement set
    std::vector<std::string> smoothed;  // argument names that were mollified
};

struct MollifiedLevel {
    int n = 0;
    CoefficientBundle bundle;
    std::vector<CoefficientLevel> coefficients;
    std::shared_ptr<const SmoothTable> g_table;  // null when g was left unchanged
    double min_sigma2 = 0, max_sigma2 = 0;
    bool ellipticity_ok = true;

    double max_error() const {
        double m = 0;
        for (auto& c : coefficients) m = std::max(m, c.error);
        return m;
    }
};

struct Rejection {
    int n = 0;
    std::string coefficient;
    double best_error = 0.0;
};

struct MollifiedFamily {
    std::vector<MollifiedLevel> levels;
    std::vector<Rejection> rejected;
    bool ok() const { return rejected.empty(); }
};

struct CascadeOptions {
    double eps_max = 1.0;
    std::optional<double> eps_min;  // default: four grid spacings, so every level smooths
    int bisection_steps = 40;
    std::size_t samples = 400;      // measurement points for multivariate coefficients
    std::size_t stencil_half = 6;
    std::pair<double, double> y_range{-2.0, 2.0};
    std::pair<double, double> z_range{-2.0, 2.0};
};

namespace detail {

/// Which of the four arguments a coefficient actually depends on, probed on
/// scattered points.
inline std::array<bool, 4> probe_dependence(const TensorMollifier::Fn4& f, std::size_t nargs,
                                            const std::array<std::pair<double, double>, 4>& box) {
    std::array<bool, 4> dep{false, false, false, false};
    for (std::size_t i = 0; i < 64; ++i) {
        std::array<double, 4> a;
        for (std::size_t k = 0; k < 4; ++k) a[k] = box[k].first + (box[k].second - box[k].first) * halton(i, k);
        double f0 = f(a);
        for (std::size_t k = 0; k < nargs; ++k) {
            auto b = a;
            b[k] = box[k].first + (box[k].second - box[k].first) * halton(i, k + 5);
            if (f(b) != f0) dep[k] = true;
        }
    }
    return dep;
}

inline double table_error(const std::function<double(double)>& f, const SmoothTable& tab,
                          const std::vector<double>& nodes) {
    double e = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        e = std::max(e, std::abs(tab.v[i] - f(nodes[i])));
        if (i + 1 < nodes.size())
            // Points close to both ends of the cell catch jumps between nodes.
            for (double w : {1.0 / 16, 0.25, 0.5, 0.75, 15.0 / 16}) {
                double xm = nodes[i] + w * (nodes[i + 1] - nodes[i]);
                e = std::max(e, std::abs(tab.value(xm) - f(xm)));
            }
    }
    return e;
}

/// Largest eps in [lo, hi] with err(eps) <= target, by bisection in log eps.
template <class Err>
std::pair<double, double> bisect_bandwidth(Err&& err, double lo, double hi, double target, int steps,
                                           bool& feasible) {
    double ehi = err(hi);
    if (ehi <= target) {
        feasible = true;
        return {hi, ehi};
    }
    double elo = err(lo);
    if (elo > target) {
        feasible = false;
        return {lo, elo};
    }
    feasible = true;
    double best = lo, best_err = elo;
    for (int i = 0; i < steps; ++i) {
        double mid = std::sqrt(lo * hi);
        double em = err(mid);
        if (em <= target) {
            lo = mid;
            best = mid;
            best_err = em;
        } else {
            hi = mid;
        }
        if (hi / lo < 1.0 + 1e-6) break;
    }
    return {best, best_err};
}

}  // namespace detail

/// Builds the mollified family for the schedule n_1 < n_2 < ...; each level
/// certifies a sup error of at most 1/n per coefficient.
inline MollifiedFamily build_cascade(const CoefficientBundle& c, const std::vector<int>& schedule,
                                     const Grid& grid, const CascadeOptions& opt = {}) {
    if (schedule.empty()) throw ArgumentError("empty cascade schedule");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (schedule[i] <= 0) throw ArgumentError("cascade levels must be positive");
        if (i > 0 && schedule[i] <= schedule[i - 1]) throw ArgumentError("cascade schedule must be increasing");
    }
    MollifiedFamily fam;
    double T = grid.T(), L = grid.L();
    double eps_min = opt.eps_min.value_or(4.0 * grid.dx);
    std::array<std::pair<double, double>, 4> box4 = {std::pair{0.0, T}, std::pair{-L, L}, opt.y_range, opt.z_range};

    struct Coef {
        std::string name;
        std::size_t nargs;
        TensorMollifier::Fn4 f;
    };
    std::vector<Coef> coefs = {
        {"b", 4, [c](const std::array<double, 4>& a) { return c.b(a[0], a[1], a[2], a[3]); }},
        {"sigma", 3, [c](const std::array<double, 4>& a) { return c.sigma(a[0], a[1], a[2]); }},
        {"h", 4, [c](const std::array<double, 4>& a) { return c.h(a[0], a[1], a[2], a[3]); }},
    };
    static const char* argn[4] = {"t", "x", "y", "z"};
    std::vector<std::array<bool, 4>> deps;
    for (auto& cf : coefs) deps.push_back(detail::probe_dependence(cf.f, cf.nargs, box4));
    bool g_const = true;
    {
        double g0 = c.g(grid.x.front());
        for (double xv : grid.x)
            if (c.g(xv) != g0) g_const = false;
    }

    std::vector<double> prev_eps(coefs.size() + 1, opt.eps_max);
    std::vector<double> prev_err(coefs.size() + 1, std::numeric_limits<double>::infinity());
    for (int n : schedule) {
        double target = 1.0 / static_cast<double>(n);
        MollifiedLevel lvl;
        lvl.n = n;
        lvl.bundle = c;
        lvl.bundle.label = c.label + "_n" + std::to_string(n);
        bool level_ok = true;
        for (std::size_t ci = 0; ci < coefs.size(); ++ci) {
            auto& cf = coefs[ci];
            CoefficientLevel cl;
            cl.name = cf.name;
            // Time is never smoothed; only x, y, z.
            std::array<bool, 4> smooth{false, deps[ci][1], deps[ci][2], deps[ci][3] && cf.nargs > 3};
            bool any = smooth[1] || smooth[2] || smooth[3];
            if (!any) {
                lvl.coefficients.push_back(cl);
                continue;
            }
            for (std::size_t k = 0; k < 4; ++k)
                if (smooth[k]) cl.smoothed.push_back(argn[k]);
            auto scaled = [&](double e) {
                std::array<double, 4> eps{0, 0, 0, 0};
                for (std::size_t k = 1; k < 4; ++k)
                    if (smooth[k]) eps[k] = e;
                return eps;
            };
            auto err = [&](double e) {
                TensorMollifier m(cf.f, scaled(e), opt.stencil_half);
                double worst = 0;
                for (std::size_t i = 0; i < opt.samples; ++i) {
                    std::array<double, 4> a;
                    for (std::size_t k = 0; k < 4; ++k)
                        a[k] = box4[k].first + (box4[k].second - box4[k].first) * halton(i, k + 2);
                    worst = std::max(worst, std::abs(m(a) - cf.f(a)));
                }
                return worst;
            };
            bool feasible = false;
            auto [e, er] = detail::bisect_bandwidth(err, eps_min, std::max(eps_min, prev_eps[ci]), target,
                                                    opt.bisection_steps, feasible);
            if (!feasible) {
                fam.rejected.push_back({n, cf.name, er});
                level_ok = false;
                continue;
            }
            if (er > prev_err[ci] && prev_eps[ci] >= eps_min) {
                e = prev_eps[ci];
                er = prev_err[ci];
            }
            prev_eps[ci] = e;
            prev_err[ci] = er;
            cl.eps = e;
            cl.error = er;
            auto mol = std::make_shared<TensorMollifier>(cf.f, scaled(e), opt.stencil_half);
            if (cf.name == "b")
                lvl.bundle.b = [mol](double t, double x, double y, double z) { return (*mol)({t, x, y, z}); };
            else if (cf.name == "sigma")
                lvl.bundle.sigma = [mol](double t, double x, double y) { return (*mol)({t, x, y, 0.0}); };
            else
                lvl.bundle.h = [mol](double t, double x, double y, double z) { return (*mol)({t, x, y, z}); };
            lvl.coefficients.push_back(cl);
        }
        // Terminal condition: tabulated on the grid nodes.
        {
            CoefficientLevel cl;
            cl.name = "g";
            std::size_t gi = coefs.size();
            if (!g_const) {
                cl.smoothed = {"x"};
                auto err = [&](double e) { return detail::table_error(c.g, mollify_function(c.g, e, grid.x), grid.x); };
                bool feasible = false;
                auto [e, er] = detail::bisect_bandwidth(err, eps_min, std::max(eps_min, prev_eps[gi]), target,
                                                        opt.bisection_steps, feasible);
                if (!feasible) {
                    fam.rejected.push_back({n, "g", er});
                    level_ok = false;
                } else {
                    if (er > prev_err[gi]) {
                        e = prev_eps[gi];
                        er = prev_err[gi];
                    }
                    prev_eps[gi] = e;
                    prev_err[gi] = er;
                    cl.eps = e;
                    cl.error = er;
                    auto tab = std::make_shared<const SmoothTable>(mollify_function(c.g, e, grid.x));
                    lvl.g_table = tab;
                    lvl.bundle.g = [tab](double x) { return tab->value(x); };
                }
            }
            lvl.coefficients.push_back(cl);
        }
        if (!level_ok) continue;
        // Re-audit ellipticity of the smoothed diffusion.
        lvl.min_sigma2 = std::numeric_limits<double>::infinity();
        lvl.max_sigma2 = 0;
        for (std::size_t i = 0; i < 512; ++i) {
            double t = T * halton(i, 1), x = -L + 2 * L * halton(i, 2);
            double y = opt.y_range.first + (opt.y_range.second - opt.y_range.first) * halton(i, 3);
            double s = lvl.bundle.sigma(t, x, y);
            lvl.min_sigma2 = std::min(lvl.min_sigma2, s * s);
            lvl.max_sigma2 = std::max(lvl.max_sigma2, s * s);
        }
        lvl.ellipticity_ok = lvl.min_sigma2 >= 1.0 / c.K && lvl.max_sigma2 <= c.K;
        fam.levels.push_back(std::move(lvl));
    }
    return fam;
}

}  // namespace fbmp
