#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "fbmp/functional.hpp"
#include "fbmp/stats.hpp"

using namespace fbmp;

namespace {

FunctionalCascadeOptions cascade_opts(std::size_t nodes = 21, unsigned threads = 1, double budget = 5e9) {
    FunctionalCascadeOptions o;
    o.param_nodes = nodes;
    o.threads = threads;
    o.max_cell_updates = budget;
    return o;
}

Grid coarse_grid() { return Grid::from_spacing(1.0, 1e-2, 5.0, 0.05); }

FunctionalSpec two_slot(FunctionalTerminal g) {
    FunctionalSpec s;
    s.partition = make_partition({0.0, 0.5, 1.0});
    s.g = std::move(g);
    return s;
}

CoefficientBundle curved_bundle() {
    CoefficientBundle c;
    c.sigma = [](double, double x, double) { return 1.0 + 0.3 * std::tanh(x); };
    c.h = [](double, double x, double y, double z) { return 0.2 * std::sin(x) - 0.1 * y + 0.1 * std::tanh(z); };
    c.g = [](double x) { return std::sin(x); };
    c.K = 1.69;
    c.label = "curved";
    return c;
}

}  // namespace

TEST(Cascade, SingleIntervalMatchesPlainSolve) {
    auto c = curved_bundle();
    Grid g = coarse_grid();
    auto s = lift_markovian(c, make_partition({0.0, 1.0}), 0.0);
    auto cas = solve_cascade(s, g);
    ASSERT_EQ(cas.levels.size(), 1u);
    ASSERT_EQ(cas.levels[0].tuples(), 1u);
    auto plain = solve_quasilinear(c, g);
    const auto& u = cas.levels[0].fields[0].u;
    ASSERT_EQ(u.size(), plain.u.size());
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], plain.u[i], 1e-10);
}

TEST(Cascade, FinalSlotCollapsesToHeat) {
    auto s = two_slot([](const Slots& xs) { return xs[1]; });
    Grid g = coarse_grid();
    auto cas = solve_cascade(s, g);
    const auto& u1 = cas.levels[0].fields[0];
    for (double x : {-2.0, -0.5, 0.0, 0.7, 2.0}) EXPECT_NEAR(u1.value(0.0, x), x, 1e-8);
}

TEST(Cascade, FirstSlotHandComposition) {
    auto s = two_slot([](const Slots& xs) { return xs[0]; });
    s.x0 = 0.4;
    Grid g = coarse_grid();
    auto cas = solve_cascade(s, g);
    const auto& l2 = cas.levels[1];
    ASSERT_EQ(l2.axes.size(), 1u);
    for (std::size_t i = 0; i < l2.tuples(); ++i) {
        double x1 = l2.axes[0].node(i);
        for (double v : l2.fields[i].u) ASSERT_NEAR(v, x1, 1e-10);
    }
    const auto& u1 = cas.levels[0].fields[0];
    for (double x : {-1.0, 0.0, 0.4, 1.5}) EXPECT_NEAR(u1.value(0.0, x), x, 1e-8);
    EXPECT_NEAR(u1.value(0.0, s.x0), s.x0, 1e-8);
    auto est = nested_mc_oracle(s, 4000, 0, 11, {.dt = 1e-2});
    EXPECT_NEAR(u1.value(0.0, s.x0), est.mean, 3 * est.se);
}

TEST(Cascade, StitchingWithinInterpolationTolerance) {
    auto s = two_slot([](const Slots& xs) { return std::sin(xs[0]) * std::tanh(xs[1]) + 0.3 * xs[1] * xs[1] / (1 + xs[0] * xs[0]); });
    s.sigma = [](double, const Slots& xs, double) { return 1.0 + 0.2 * std::tanh(xs[0] - xs[1]); };
    s.K = 1.44;
    auto cas = solve_cascade(s, coarse_grid(), cascade_opts(31));
    const auto& l1 = cas.levels[0];
    EXPECT_GT(l1.stitch_tolerance, 0.0);
    EXPECT_LE(l1.stitch_error, 2 * l1.stitch_tolerance);
}

TEST(Cascade, ThreeIntervalStitching) {
    FunctionalSpec s;
    s.partition = make_partition({0.0, 0.3, 0.6, 1.0});
    s.g = [](const Slots& xs) { return std::tanh(xs[0] + xs[1] - xs[2]); };
    auto cas = solve_cascade(s, Grid::from_spacing(1.0, 2e-2, 5.0, 0.1), cascade_opts(15));
    ASSERT_EQ(cas.levels.size(), 3u);
    EXPECT_EQ(cas.levels[2].tuples(), 15u * 15u);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_LE(cas.levels[k].stitch_error, 2 * cas.levels[k].stitch_tolerance);
}

TEST(Cascade, ThreadCountDoesNotChangeResult) {
    auto s = two_slot([](const Slots& xs) { return std::cos(xs[0]) + xs[1] * xs[1]; });
    auto a = solve_cascade(s, coarse_grid(), cascade_opts(21, 1));
    auto b = solve_cascade(s, coarse_grid(), cascade_opts(21, 3));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t f = 0; f < a.levels[k].tuples(); ++f) EXPECT_EQ(a.levels[k].fields[f].u, b.levels[k].fields[f].u);
}

TEST(Cascade, DeskScaleGuard) {
    FunctionalSpec s;
    s.partition = make_partition(1.0, 4);
    s.g = [](const Slots& xs) { return xs[0]; };
    EXPECT_THROW(solve_cascade(s, coarse_grid()), BudgetError);
    auto t = two_slot([](const Slots& xs) { return xs[0]; });
    try {
        solve_cascade(t, coarse_grid(), cascade_opts(42));
        FAIL() << "expected refusal";
    } catch (const BudgetError& e) {
        EXPECT_NE(std::string(e.what()).find("estimated"), std::string::npos);
    }
    EXPECT_THROW(solve_cascade(t, coarse_grid(), cascade_opts(21, 1, 100)), BudgetError);
    EXPECT_THROW(solve_cascade(t, coarse_grid(), cascade_opts(1)), ArgumentError);
}

TEST(Cascade, PicardFailureNamesTuple) {
    auto s = two_slot([](const Slots& xs) { return std::sin(3 * xs[1]) + xs[0]; });
    s.h = [](double, const Slots&, double y, double z) { return std::sin(y) + z * z; };
    FunctionalCascadeOptions o;
    o.param_nodes = 5;
    o.solver.picard_max = 1;
    o.solver.picard_tol = 1e-14;
    try {
        solve_cascade(s, coarse_grid(), o);
        FAIL() << "expected a convergence failure";
    } catch (const ConvergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("parameter tuple"), std::string::npos);
    }
}

TEST(Cascade, PartitionMustMatchGrid) {
    FunctionalSpec s;
    s.partition = make_partition({0.0, 0.505, 1.0});
    s.g = [](const Slots& xs) { return xs[0]; };
    EXPECT_THROW(solve_cascade(s, coarse_grid()), ArgumentError);
    s.partition = make_partition({0.0, 2.0});
    EXPECT_THROW(solve_cascade(s, coarse_grid()), ArgumentError);
}

TEST(Simulation, FrozenWithoutDiffusion) {
    auto s = two_slot([](const Slots& xs) { return xs[0] * xs[0] + xs[1]; });
    s.sigma = [](double, const Slots&, double) { return 0.0; };
    s.h = [](double, const Slots& xs, double, double) { return 0.5 * xs[0]; };
    s.x0 = 0.3;
    auto cas = solve_cascade(s, coarse_grid());
    auto e = simulate_functional(s, cas, 5, 3);
    // u(t) = x0^2 + x0 + 0.5 x0 (1 - t) along the frozen path.
    for (std::size_t p = 0; p < e.M; ++p)
        for (std::size_t k = 0; k < e.nt(); ++k) {
            EXPECT_DOUBLE_EQ(e.X[e.idx(p, k)], s.x0);
            EXPECT_NEAR(e.Y[e.idx(p, k)], 0.09 + 0.3 + 0.15 * (1 - e.t[k]), 1e-8);
            EXPECT_EQ(e.Y[e.idx(p, k)], e.Y[e.idx(0, k)]);
        }
}

TEST(Simulation, SingleIntervalBitIdenticalToForward) {
    auto c = curved_bundle();
    Grid g = coarse_grid();
    auto s = lift_markovian(c, make_partition({0.0, 1.0}), 0.2);
    auto cas = solve_cascade(s, g);
    auto field = solve_quasilinear(c, g);
    SimulationOptions so;
    so.substeps = 2;
    auto a = simulate_forward(field, c, 0.2, 200, 42, so);
    auto b = simulate_functional(s, cas, 200, 42, {.sim = so});
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.W, b.W);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(a.Y, b.Y);
    EXPECT_EQ(a.Z, b.Z);
}

TEST(Simulation, FirstSlotFreezesAfterObservation) {
    auto s = two_slot([](const Slots& xs) { return xs[0]; });
    s.K = 1.0;
    auto cas = solve_cascade(s, coarse_grid());
    auto e = simulate_functional(s, cas, 500, 5);
    std::size_t k1 = e.node(0.5);
    for (std::size_t p = 0; p < e.M; ++p) {
        double x1 = e.X[e.idx(p, k1)];
        if (e.clamped[p]) continue;
        for (std::size_t k = k1 + 1; k < e.nt(); ++k) {
            ASSERT_NEAR(e.Y[e.idx(p, k)], x1, 1e-9);
            ASSERT_NEAR(e.Z[e.idx(p, k)], 0.0, 1e-9);
        }
    }
    EXPECT_LT(e.clamped_count(), e.M / 100 + 1);
}

TEST(Simulation, AgreesWithOracleProductFunctional) {
    auto s = two_slot([](const Slots& xs) { return xs[0] * xs[1]; });
    Grid g = coarse_grid();
    auto cas = solve_cascade(s, g);
    auto e = simulate_functional(s, cas, 4000, 9);
    auto est = nested_mc_oracle(s, 8000, 0, 10, {.dt = 1e-2});
    double y0 = e.Y[e.idx(0, 0)];
    EXPECT_NEAR(y0, 0.5, 1e-3);
    EXPECT_NEAR(y0, est.mean, 3 * est.se + 1e-3);
    std::vector<double> yT(e.M);
    for (std::size_t p = 0; p < e.M; ++p) yT[p] = e.Y[e.idx(p, e.nt() - 1)];
    auto ms = stats::mean_se(yT);
    EXPECT_NEAR(ms.mean, est.mean, 3 * std::hypot(ms.se, est.se));
}

TEST(Simulation, ThreadsAndBlocksReproduce) {
    auto s = two_slot([](const Slots& xs) { return std::tanh(xs[0]) + xs[1]; });
    auto cas = solve_cascade(s, coarse_grid());
    auto a = simulate_functional(s, cas, 300, 17);
    FunctionalSimOptions o;
    o.sim.threads = 3;
    auto b = simulate_functional(s, cas, 300, 17, o);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(a.Y, b.Y);
    o.sim.first_path = 100;
    auto c = simulate_functional(s, cas, 50, 17, o);
    for (std::size_t p = 0; p < 50; ++p)
        for (std::size_t k = 0; k < c.nt(); ++k) EXPECT_EQ(c.Y[c.idx(p, k)], a.Y[a.idx(p + 100, k)]);
}

TEST(Simulation, ParametersOutsideTable) {
    auto s = two_slot([](const Slots& xs) { return xs[0]; });
    s.K = 0.01;  // tabulated reach far below the actual spread
    auto cas = solve_cascade(s, coarse_grid());
    auto e = simulate_functional(s, cas, 200, 1);
    EXPECT_GT(e.clamped_count(), 0u);
    FunctionalSimOptions o;
    o.strict_params = true;
    EXPECT_THROW(simulate_functional(s, cas, 200, 1, o), ResolutionError);
}

TEST(Simulation, SliceKeepsInterval) {
    auto s = two_slot([](const Slots& xs) { return xs[0] + xs[1]; });
    auto cas = solve_cascade(s, coarse_grid());
    auto e = simulate_functional(s, cas, 20, 2);
    auto sl = slice_ensemble(e, 0.5, 1.0);
    std::size_t a = e.node(0.5);
    ASSERT_EQ(sl.nt(), e.nt() - a);
    EXPECT_DOUBLE_EQ(sl.t.front(), 0.5);
    for (std::size_t p = 0; p < e.M; ++p) {
        EXPECT_EQ(sl.X[sl.idx(p, 0)], e.X[e.idx(p, a)]);
        EXPECT_EQ(sl.Z[sl.idx(p, sl.nt() - 1)], e.Z[e.idx(p, e.nt() - 1)]);
    }
    EXPECT_THROW(slice_ensemble(e, 0.5, 0.5), ArgumentError);
}

TEST(Simulation, MismatchedCascade) {
    auto s = two_slot([](const Slots& xs) { return xs[0]; });
    auto cas = solve_cascade(s, coarse_grid());
    FunctionalSpec one;
    one.partition = make_partition({0.0, 1.0});
    one.g = [](const Slots& xs) { return xs[0]; };
    EXPECT_THROW(simulate_functional(one, cas, 10, 1), ArgumentError);
    EXPECT_THROW(simulate_functional(s, cas, 0, 1), ArgumentError);
}

TEST(Oracle, ConstantIsExact) {
    auto s = two_slot([](const Slots&) { return 2.5; });
    auto est = nested_mc_oracle(s, 100, 0, 1, {.dt = 1e-2});
    EXPECT_EQ(est.mean, 2.5);
    EXPECT_EQ(est.se, 0.0);
}

TEST(Oracle, MartingaleMean) {
    auto s = two_slot([](const Slots& xs) { return xs[0]; });
    s.x0 = -0.7;
    auto est = nested_mc_oracle(s, 5000, 0, 4, {.dt = 1e-2});
    EXPECT_NEAR(est.mean, s.x0, 3 * est.se);
    EXPECT_GT(est.se, 0.0);
}

TEST(Oracle, BrownianCovariance) {
    auto s = two_slot([](const Slots& xs) { return xs[0] * xs[1]; });
    auto est = nested_mc_oracle(s, 20000, 0, 5, {.dt = 1e-2});
    EXPECT_NEAR(est.mean, 0.5, 3 * est.se);
}

TEST(Oracle, PicardSweepWithDriver) {
    auto s = two_slot([](const Slots& xs) { return xs[1]; });
    s.h = [](double, const Slots&, double, double z) { return 0.5 + z; };
    auto est = nested_mc_oracle(s, 400, 200, 6, {.dt = 1e-2, .quadrature_points = 5, .h_zero = false});
    // Z = 1 along every path, so Y_0 = x0 + 1.5 T.
    EXPECT_NEAR(est.mean, 1.5, 3 * est.se + 0.02);
    EXPECT_EQ(est.inner, 200u);
    EXPECT_THROW(nested_mc_oracle(s, 10, 1, 6, {.dt = 1e-2, .h_zero = false}), ArgumentError);
}

TEST(Oracle, Refusals) {
    auto s = two_slot([](const Slots& xs) { return std::exp(1000 * xs[1]); });
    EXPECT_THROW(nested_mc_oracle(s, 200, 0, 1, {.dt = 1e-2}), PowerError);
    auto t = two_slot([](const Slots& xs) { return xs[0]; });
    t.sigma = [](double, const Slots&, double y) { return 1.0 + 0.1 * std::tanh(y); };
    EXPECT_THROW(nested_mc_oracle(t, 200, 0, 1, {.dt = 1e-2}), ArgumentError);
    EXPECT_THROW(nested_mc_oracle(two_slot([](const Slots& xs) { return xs[0]; }), 1, 0, 1), ArgumentError);
}
