#include <gtest/gtest.h>

#include <cmath>

#include "fbmp/mollify.hpp"
#include "fbmp/rng.hpp"

using namespace fbmp;

namespace {

std::vector<double> axis(double lo, double hi, std::size_t cells) {
    std::vector<double> v(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cells);
    return v;
}

// Simpson quadrature of the kernel's first absolute moment.
double kernel_abs_moment(std::size_t n = 200000) {
    double h = 2.0 / static_cast<double>(n), s = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        double u = -1.0 + h * static_cast<double>(i);
        double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
        s += w * std::abs(u) * Kernel::value(u);
    }
    return s * h / 3.0;
}

double kernel_mass(std::size_t n = 200000) {
    double h = 2.0 / static_cast<double>(n), s = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        double u = -1.0 + h * static_cast<double>(i);
        double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
        s += w * Kernel::value(u);
    }
    return s * h / 3.0;
}

}  // namespace

TEST(Kernel, UnitMassCompactSupport) {
    EXPECT_NEAR(kernel_mass(), 1.0, 1e-10);
    EXPECT_EQ(Kernel::value(1.0), 0.0);
    EXPECT_EQ(Kernel::value(-1.5), 0.0);
    EXPECT_GE(Kernel::value(0.3), 0.0);
}

TEST(MollifyFunction, ConstantIsPreserved) {
    auto nodes = axis(-2, 2, 400);
    auto t = mollify_function([](double) { return 3.25; }, 0.2, nodes);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t.v[i], 3.25, 1e-13);
    EXPECT_NEAR(t.value(0.123), 3.25, 1e-13);
    EXPECT_NEAR(t.deriv(0.5), 0.0, 1e-10);
}

TEST(MollifyFunction, MonotoneStaysMonotoneWithinHull) {
    auto nodes = axis(-3, 3, 600);
    auto f = [](double x) { return std::floor(2 * x) + 0.1 * x; };
    auto t = mollify_function(f, 0.3, nodes);
    double lo = 1e9, hi = -1e9;
    for (double x = -3.3; x <= 3.3; x += 0.01) {
        lo = std::min(lo, f(x));
        hi = std::max(hi, f(x));
    }
    for (std::size_t i = 1; i < t.size(); ++i) {
        EXPECT_GE(t.v[i], t.v[i - 1] - 1e-12);
        EXPECT_GE(t.v[i], lo - 1e-12);
        EXPECT_LE(t.v[i], hi + 1e-12);
    }
}

TEST(MollifyFunction, AbsAtOriginIsBandwidthTimesKernelMoment) {
    double m1 = kernel_abs_moment();
    auto nodes = axis(-1, 1, 20000);
    auto t = mollify_function([](double x) { return std::abs(x); }, 0.1, nodes);
    EXPECT_NEAR(t.value(0.0), 0.1 * m1, 1e-6);
}

TEST(MollifyFunction, DerivativesComeFromKernel) {
    auto nodes = axis(-3, 3, 3000);
    auto t = mollify_function([](double x) { return std::sin(x); }, 0.2, nodes);
    // Convolution of sin with a symmetric kernel scales it by a constant close
    // to 1; the kernel-derivative sums carry an O((dx/eps)^2) quadrature error.
    double s = t.value(M_PI / 2);
    EXPECT_NEAR(t.deriv(0.0), s, 1e-5);
    EXPECT_NEAR(t.deriv2(M_PI / 2), -s, 2e-3);
}

TEST(MollifyFunction, BandwidthBelowSpacingIsResolutionError) {
    auto nodes = axis(-1, 1, 10);
    EXPECT_THROW(mollify_function([](double x) { return x; }, 0.05, nodes), ResolutionError);
}

TEST(Cascade, LipschitzBundleCertifiesAtAnalyticBandwidth) {
    // g = sin(x) is Lipschitz with constant 1: any eps <= 1/n gives error <= 1/n.
    auto nodes = axis(-4, 4, 1600);
    for (int n : {2, 5, 10}) {
        double eps = 1.0 / n;
        auto t = mollify_function([](double x) { return std::sin(x); }, eps, nodes);
        EXPECT_LE(detail::table_error([](double x) { return std::sin(x); }, t, nodes), 1.0 / n);
    }
    CoefficientBundle c;
    c.g = [](double x) { return std::sin(x); };
    auto fam = build_cascade(c, {2, 5, 10}, Grid::from_spacing(1.0, 0.01, 4.0, 0.005));
    ASSERT_TRUE(fam.ok());
    for (auto& lvl : fam.levels) EXPECT_LE(lvl.max_error(), 1.0 / lvl.n);
}

TEST(Cascade, SignFunctionIsRejected) {
    CoefficientBundle c;
    c.g = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
    auto fam = build_cascade(c, {2}, Grid::from_spacing(1.0, 0.01, 3.0, 0.01));
    ASSERT_FALSE(fam.ok());
    EXPECT_EQ(fam.rejected.front().coefficient, "g");
    EXPECT_GE(fam.rejected.front().best_error, 0.5);
    EXPECT_NEAR(fam.rejected.front().best_error, 1.0, 0.1);
}

TEST(Cascade, TanhCertifiedAgainstDenseOracle) {
    CoefficientBundle c;
    c.g = [](double x) { return std::tanh(x); };
    Grid grid = Grid::from_spacing(1.0, 0.01, 4.0, 0.01);
    auto fam = build_cascade(c, {2, 5, 10, 20}, grid);
    ASSERT_TRUE(fam.ok());
    double prev = 1e9;
    for (auto& lvl : fam.levels) {
        ASSERT_TRUE(lvl.g_table);
        // Ten times denser than the certification grid.
        double worst = 0;
        for (double x = -4.0; x <= 4.0; x += 0.001) worst = std::max(worst, std::abs(lvl.bundle.g(x) - std::tanh(x)));
        EXPECT_LE(worst, 1.0 / lvl.n) << "n = " << lvl.n;
        double e = lvl.max_error();
        EXPECT_LE(e, prev);
        prev = e;
    }
}

TEST(Cascade, MultivariateSigmaKeepsEllipticityAndError) {
    CoefficientBundle c;
    c.K = 2.0;
    c.sigma = [](double, double x, double y) { return 1.0 + 0.2 * std::sin(3 * x) * std::cos(y); };
    c.h = [](double, double x, double, double z) { return 0.3 * std::abs(x) * std::tanh(z); };
    c.g = [](double x) { return std::cos(x); };
    Grid grid = Grid::from_spacing(1.0, 0.01, 3.0, 0.01);
    auto fam = build_cascade(c, {5, 10}, grid);
    ASSERT_TRUE(fam.ok());
    UniformStream u(9, 0);
    for (auto& lvl : fam.levels) {
        EXPECT_TRUE(lvl.ellipticity_ok);
        EXPECT_GE(lvl.min_sigma2, 1.0 / c.K);
        EXPECT_LE(lvl.max_sigma2, c.K);
        double es = 0, eh = 0;
        for (int i = 0; i < 300; ++i) {
            double t = u(), x = -2.5 + 5 * u(), y = -2 + 4 * u(), z = -2 + 4 * u();
            es = std::max(es, std::abs(lvl.bundle.sigma(t, x, y) - c.sigma(t, x, y)));
            eh = std::max(eh, std::abs(lvl.bundle.h(t, x, y, z) - c.h(t, x, y, z)));
        }
        // Sampled off the certification set, so allow a small slack.
        EXPECT_LE(es, 1.1 / lvl.n);
        EXPECT_LE(eh, 1.1 / lvl.n);
    }
}

TEST(Cascade, ScheduleMustIncrease) {
    CoefficientBundle c;
    Grid grid = Grid::from_spacing(1.0, 0.01, 3.0, 0.01);
    EXPECT_THROW(build_cascade(c, {5, 5}, grid), ArgumentError);
    EXPECT_THROW(build_cascade(c, {}, grid), ArgumentError);
}
