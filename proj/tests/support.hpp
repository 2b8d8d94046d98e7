#pragma once

#include <cmath>
#include <functional>

#include "fbmp/pde.hpp"

namespace fbmp::testing {

/// Field with analytic values and slopes on a grid.
inline FieldSolution analytic_field(const Grid& g, const std::function<double(double, double)>& u,
                                    const std::function<double(double, double)>& ux) {
    FieldSolution f;
    f.grid = g;
    f.u.resize(g.nt() * g.nx());
    f.ux.resize(f.u.size());
    for (std::size_t k = 0; k < g.nt(); ++k)
        for (std::size_t j = 0; j < g.nx(); ++j) {
            f.u[k * g.nx() + j] = u(g.t[k], g.x[j]);
            f.ux[k * g.nx() + j] = ux(g.t[k], g.x[j]);
        }
    return f;
}

inline CoefficientBundle heat_quadratic() {
    CoefficientBundle c;
    c.g = [](double x) { return x * x; };
    c.K = 25.0;
    return c;
}

inline Grid heat_grid(double dt = 1e-3) { return Grid::from_spacing(1.0, dt, 5.0, 0.01); }

inline FieldSolution heat_quadratic_field(double dt = 1e-3) {
    return analytic_field(heat_grid(dt), [](double t, double x) { return x * x + (1.0 - t); },
                          [](double, double x) { return 2 * x; });
}

}  // namespace fbmp::testing
