#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/model.hpp"
#include "fbmp/parallel.hpp"
#include "fbmp/pde.hpp"
#include "fbmp/rng.hpp"
#include "fbmp/stats.hpp"

namespace fbmp {

/// Simulated paths of (W, X, Y, Z) on a common time grid, stored path-major.
/// A block may hold a contiguous range of global path indices.
struct PathEnsemble {
    std::vector<double> t;
    std::size_t M = 0;
    std::size_t first_path = 0;
    std::vector<double> W, X, Y, Z;
    std::vector<std::uint8_t> reflected;
    std::uint64_t seed = 0;
    std::size_t substeps = 1;
    double x0 = 0.0;
    double L = 0.0;

    std::size_t nt() const { return t.size(); }
    std::size_t idx(std::size_t p, std::size_t k) const { return p * t.size() + k; }
    double T() const { return t.back(); }
    double dt() const { return (t.back() - t.front()) / static_cast<double>(t.size() - 1); }
    std::size_t reflected_count() const {
        return static_cast<std::size_t>(std::count(reflected.begin(), reflected.end(), std::uint8_t{1}));
    }
    /// Node index of a time on the grid (nearest node).
    std::size_t node(double time) const {
        double s = (time - t.front()) / dt();
        auto k = static_cast<std::ptrdiff_t>(std::llround(s));
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(t.size()) - 1));
    }
};

struct SimulationOptions {
    std::size_t substeps = 1;
    bool strict = false;
    double max_reflected_fraction = 0.01;
    unsigned threads = 1;
    std::size_t first_path = 0;
};

/// Time nodes of a field grid refined by an integer number of substeps.
inline std::vector<double> refine_times(const std::vector<double>& tn, std::size_t substeps) {
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < tn.size(); ++k)
        for (std::size_t s = 0; s < substeps; ++s)
            out.push_back(tn[k] + (tn[k + 1] - tn[k]) * static_cast<double>(s) / static_cast<double>(substeps));
    out.push_back(tn.back());
    return out;
}

/// Reads Y and Z off a tabulated field along a path.  Generalised by the
/// discrete-functional simulator.
struct FieldCursor {
    const FieldSolution* field;
    std::vector<std::size_t> kcell;
    std::vector<double> wt;

    FieldCursor(const FieldSolution& f, const std::vector<double>& times) : field(&f) {
        for (double tv : times) {
            auto [k, w] = f.grid.locate_t(tv);
            kcell.push_back(k);
            wt.push_back(w);
        }
    }

    void read(std::size_t node, double x, double& u, double& ux) const {
        auto [j, wx] = field->grid.locate_x(x);
        field->interpolate_cell(kcell[node], wt[node], j, wx, u, ux);
    }
};

namespace detail {

inline double reflect(double x, double L, bool& flagged) {
    if (x > L) {
        flagged = true;
        x = 2 * L - x;
    } else if (x < -L) {
        flagged = true;
        x = -2 * L - x;
    }
    return std::clamp(x, -L, L);
}

/// Euler-Maruyama for one path; `reader(node, x, y, z_slope, path)` returns u
/// and u_x at the current state.
template <class Reader, class Sigma, class Drift>
void euler_path(PathEnsemble& e, std::size_t p, const Reader& reader, const Sigma& sigma, const Drift& drift) {
    std::size_t nt = e.nt();
    NormalStream rng(e.seed, e.first_path + p);
    double* W = &e.W[p * nt];
    double* X = &e.X[p * nt];
    double* Y = &e.Y[p * nt];
    double* Z = &e.Z[p * nt];
    bool flagged = false;
    W[0] = 0.0;
    X[0] = e.x0;
    for (std::size_t k = 0;; ++k) {
        double u, ux;
        reader(k, X, u, ux);
        double s = sigma(e.t[k], X, k, u);
        Y[k] = u;
        Z[k] = ux * s;
        if (k + 1 == nt) break;
        double h = e.t[k + 1] - e.t[k];
        double dW = std::sqrt(h) * rng();
        W[k + 1] = W[k] + dW;
        double xn = X[k] + drift(e.t[k], X, k, u, Z[k]) * h + s * dW;
        X[k + 1] = reflect(xn, e.L, flagged);
    }
    e.reflected[p] = flagged ? 1 : 0;
}

inline void allocate(PathEnsemble& e, std::size_t M) {
    e.M = M;
    std::size_t n = M * e.nt();
    e.W.assign(n, 0.0);
    e.X.assign(n, 0.0);
    e.Y.assign(n, 0.0);
    e.Z.assign(n, 0.0);
    e.reflected.assign(M, 0);
}

inline void check_reflections(const PathEnsemble& e, const SimulationOptions& opt) {
    double frac = e.M ? static_cast<double>(e.reflected_count()) / static_cast<double>(e.M) : 0.0;
    if (opt.strict && frac > opt.max_reflected_fraction) {
        std::ostringstream os;
        os << "truncation domain too small: " << frac * 100 << "% of paths reflected at +-" << e.L;
        throw ResolutionError(os.str());
    }
}

}  // namespace detail

/// Forward Euler-Maruyama paths of X with Y = u(t, X), Z = u_x(t, X) sigma.
inline PathEnsemble simulate_forward(const FieldSolution& field, const CoefficientBundle& c, double x0,
                                     std::size_t M, std::uint64_t seed, const SimulationOptions& opt = {}) {
    if (M == 0) throw ArgumentError("ensemble needs at least one path");
    if (opt.substeps == 0) throw ArgumentError("substeps must be positive");
    PathEnsemble e;
    e.t = refine_times(field.grid.t, opt.substeps);
    e.first_path = opt.first_path;
    e.seed = seed;
    e.substeps = opt.substeps;
    e.x0 = x0;
    e.L = field.grid.L();
    if (std::abs(x0) > e.L) throw ArgumentError("initial state outside the truncation domain");
    detail::allocate(e, M);
    FieldCursor cur(field, e.t);
    auto reader = [&](std::size_t k, const double* X, double& u, double& ux) { cur.read(k, X[k], u, ux); };
    auto sig = [&](double t, const double* X, std::size_t k, double y) { return c.sigma(t, X[k], y); };
    auto drift = [&](double t, const double* X, std::size_t k, double y, double z) { return c.b(t, X[k], y, z); };
    parallel_for(M, opt.threads, [&](std::size_t b, std::size_t end) {
        for (std::size_t p = b; p < end; ++p) detail::euler_path(e, p, reader, sig, drift);
    });
    for (double v : e.Y)
        if (!std::isfinite(v)) throw EvaluationError("non-finite value along a simulated path");
    detail::check_reflections(e, opt);
    return e;
}

// ---------------------------------------------------------------------------
// Brownian reconstruction and slope/weight conversion

struct BrownianReport {
    std::vector<double> W;            // reconstructed increments summed, path-major
    double mean_sup_qv_error = 0.0;   // mean over paths of sup_t |[W']_t - t|
    double sup_mean_qv_error = 0.0;   // sup_t |mean_p [W']_t - t|
};

inline BrownianReport reconstruct_brownian(const PathEnsemble& e, const CoefficientBundle& c) {
    std::size_t nt = e.nt();
    BrownianReport r;
    r.W.assign(e.M * nt, 0.0);
    std::vector<double> sup(e.M, 0.0);
    std::vector<double> qv(e.M * nt, 0.0);
    for (std::size_t p = 0; p < e.M; ++p) {
        double q = 0;
        for (std::size_t k = 0; k + 1 < nt; ++k) {
            std::size_t i = e.idx(p, k);
            double s = c.sigma(e.t[k], e.X[i], e.Y[i]);
            if (std::abs(s) < 1e-12) {
                std::ostringstream os;
                os << "diffusion vanishes at (t, x) = (" << e.t[k] << ", " << e.X[i] << "); Brownian motion not recoverable";
                throw DegeneracyError(os.str());
            }
            double h = e.t[k + 1] - e.t[k];
            double dw = (e.X[i + 1] - e.X[i] - c.b(e.t[k], e.X[i], e.Y[i], e.Z[i]) * h) / s;
            r.W[i + 1] = r.W[i] + dw;
            q += dw * dw;
            qv[i + 1] = q;
            sup[p] = std::max(sup[p], std::abs(q - (e.t[k + 1] - e.t[0])));
        }
    }
    r.mean_sup_qv_error = stats::mean(sup);
    std::vector<double> col(e.M);
    for (std::size_t k = 1; k < nt; ++k) {
        for (std::size_t p = 0; p < e.M; ++p) col[p] = qv[e.idx(p, k)];
        r.sup_mean_qv_error = std::max(r.sup_mean_qv_error, std::abs(stats::mean(col) - (e.t[k] - e.t[0])));
    }
    return r;
}

/// Slope z = Z / sigma along the ensemble.
inline std::vector<double> z_to_weight(const PathEnsemble& e, const CoefficientBundle& c) {
    std::vector<double> z(e.Z.size());
    for (std::size_t p = 0; p < e.M; ++p)
        for (std::size_t k = 0; k < e.nt(); ++k) {
            std::size_t i = e.idx(p, k);
            double s = c.sigma(e.t[k], e.X[i], e.Y[i]);
            if (std::abs(s) < 1e-12) throw DegeneracyError("diffusion vanishes; slope undefined");
            z[i] = e.Z[i] / s;
        }
    return z;
}

/// Weight Z = z sigma from slopes along the ensemble.
inline std::vector<double> weight_to_z(const PathEnsemble& e, const CoefficientBundle& c, const std::vector<double>& z) {
    if (z.size() != e.Z.size()) throw ArgumentError("slope array does not match the ensemble");
    std::vector<double> out(z.size());
    for (std::size_t p = 0; p < e.M; ++p)
        for (std::size_t k = 0; k < e.nt(); ++k) {
            std::size_t i = e.idx(p, k);
            out[i] = z[i] * c.sigma(e.t[k], e.X[i], e.Y[i]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Backward residual

struct ResidualReport {
    std::vector<double> rms;   // per time node
    std::vector<double> ms;
    double max_rms = 0.0;
    double max_ms = 0.0;
};

/// R_t = Y_t - g(X_T) - sum_{s>=t} h ds + sum_{s>=t} Z dW, per path.
inline std::vector<double> bsde_residual_paths(const PathEnsemble& e, const CoefficientBundle& c) {
    std::size_t nt = e.nt();
    std::vector<double> R(e.M * nt);
    for (std::size_t p = 0; p < e.M; ++p) {
        std::size_t last = e.idx(p, nt - 1);
        double gT = c.g(e.X[last]);
        double H = 0, S = 0;
        R[last] = e.Y[last] - gT;
        for (std::size_t k = nt - 1; k-- > 0;) {
            std::size_t i = e.idx(p, k);
            double h = e.t[k + 1] - e.t[k];
            H += c.h(e.t[k], e.X[i], e.Y[i], e.Z[i]) * h;
            S += e.Z[i] * (e.W[i + 1] - e.W[i]);
            R[i] = e.Y[i] - gT - H + S;
        }
    }
    return R;
}

inline ResidualReport bsde_residual(const PathEnsemble& e, const CoefficientBundle& c) {
    auto R = bsde_residual_paths(e, c);
    ResidualReport r;
    std::size_t nt = e.nt();
    std::vector<double> sq(e.M);
    for (std::size_t k = 0; k < nt; ++k) {
        for (std::size_t p = 0; p < e.M; ++p) {
            double v = R[e.idx(p, k)];
            sq[p] = v * v;
        }
        double ms = stats::mean(sq);
        r.ms.push_back(ms);
        r.rms.push_back(std::sqrt(ms));
        r.max_ms = std::max(r.max_ms, ms);
        r.max_rms = std::max(r.max_rms, std::sqrt(ms));
    }
    return r;
}

// ---------------------------------------------------------------------------
// First variation and representation of Z

/// Tabulated effective coefficients sigma~(t,x) = sigma(t,x,u) and
/// h~(t,x) = h(t,x,u,u_x sigma~) with their x-derivatives, stored as fields.
struct EffectiveCoefficients {
    FieldSolution sigma;  // u = sigma~, ux = d/dx sigma~
    FieldSolution h;      // u = h~, ux = d/dx h~
};

inline EffectiveCoefficients effective_coefficients(const FieldSolution& f, const CoefficientBundle& c) {
    EffectiveCoefficients e;
    e.sigma.grid = f.grid;
    e.h.grid = f.grid;
    std::size_t nx = f.nx();
    e.sigma.u.resize(f.u.size());
    e.h.u.resize(f.u.size());
    e.sigma.ux.resize(f.u.size());
    e.h.ux.resize(f.u.size());
    for (std::size_t k = 0; k < f.nt(); ++k)
        for (std::size_t j = 0; j < nx; ++j) {
            std::size_t i = k * nx + j;
            double s = c.sigma(f.grid.t[k], f.grid.x[j], f.u[i]);
            e.sigma.u[i] = s;
            e.h.u[i] = c.h(f.grid.t[k], f.grid.x[j], f.u[i], f.ux[i] * s);
        }
    for (std::size_t k = 0; k < f.nt(); ++k) {
        differentiate_row(&e.sigma.u[k * nx], &e.sigma.ux[k * nx], nx, f.grid.dx);
        differentiate_row(&e.h.u[k * nx], &e.h.ux[k * nx], nx, f.grid.dx);
    }
    e.sigma.label = "sigma_eff";
    e.h.label = "h_eff";
    return e;
}

/// First variation d(grad X) = d/dx sigma~(t, X) grad X dW, integrated in
/// log space so it stays positive.  Path-major like the ensemble.
inline std::vector<double> simulate_variation(const PathEnsemble& e, const FieldSolution& sigma_eff) {
    if (sigma_eff.ux.size() != sigma_eff.u.size() || sigma_eff.ux.empty())
        throw ArgumentError("effective diffusion must carry its x-derivative table");
    std::size_t nt = e.nt();
    std::vector<double> G(e.M * nt);
    FieldCursor cur(sigma_eff, e.t);
    for (std::size_t p = 0; p < e.M; ++p) {
        double lg = 0;
        G[e.idx(p, 0)] = 1.0;
        for (std::size_t k = 0; k + 1 < nt; ++k) {
            std::size_t i = e.idx(p, k);
            double s, ds;
            cur.read(k, e.X[i], s, ds);
            double h = e.t[k + 1] - e.t[k];
            double dW = e.W[i + 1] - e.W[i];
            lg += ds * dW - 0.5 * ds * ds * h;
            G[i + 1] = std::exp(lg);
        }
    }
    return G;
}

struct BucketEstimate {
    double center = 0.0;  // mean of the conditioning variable in the bucket
    double estimate = 0.0;
    double se = 0.0;
    std::size_t count = 0;
};

/// Z^{s}_r = E[d/dx h~(s, X_s) grad X_s | X_r] / grad X_r * sigma~(r, X_r),
/// estimated on equal-count buckets of X_r.
inline std::vector<BucketEstimate> representation_z(const PathEnsemble& e, const std::vector<double>& grad,
                                                    const std::function<double(double, double)>& dh_dx,
                                                    const std::function<double(double, double)>& sigma_eff,
                                                    double r, double s, std::size_t buckets,
                                                    std::size_t min_per_bucket = 30) {
    if (!(r < s)) throw ArgumentError("representation needs r < s");
    if (grad.size() != e.X.size()) throw ArgumentError("variation process does not match the ensemble");
    if (buckets == 0 || e.M / buckets < min_per_bucket) {
        std::ostringstream os;
        os << "bucket occupancy below " << min_per_bucket << " paths";
        throw PowerError(os.str());
    }
    std::size_t kr = e.node(r), ks = e.node(s);
    std::vector<double> key(e.M), q(e.M);
    for (std::size_t p = 0; p < e.M; ++p) {
        double xr = e.X[e.idx(p, kr)], xs = e.X[e.idx(p, ks)];
        key[p] = xr;
        q[p] = dh_dx(e.t[ks], xs) * grad[e.idx(p, ks)] / grad[e.idx(p, kr)] * sigma_eff(e.t[kr], xr);
    }
    auto label = stats::equal_count_buckets(key, buckets);
    auto sm = stats::bucket_means(q, label, buckets);
    auto cm = stats::bucket_means(key, label, buckets);
    std::vector<BucketEstimate> out(buckets);
    for (std::size_t b = 0; b < buckets; ++b) {
        if (sm.count[b] < min_per_bucket) throw PowerError("bucket occupancy below the minimum");
        out[b] = {cm.mean[b], sm.mean[b], sm.se[b], sm.count[b]};
    }
    return out;
}

}  // namespace fbmp
