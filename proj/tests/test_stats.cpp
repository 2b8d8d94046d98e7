#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "fbmp/parallel.hpp"
#include "fbmp/rng.hpp"
#include "fbmp/stats.hpp"

using namespace fbmp;

TEST(Rng, StreamsAreReproducibleAndDistinct) {
    NormalStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    bool differ_stream = false, differ_seed = false;
    for (int i = 0; i < 100; ++i) {
        double x = a(), y = b(), z = c(), w = d();
        EXPECT_EQ(x, y);
        differ_stream |= x != z;
        differ_seed |= x != w;
    }
    EXPECT_TRUE(differ_stream);
    EXPECT_TRUE(differ_seed);
}

TEST(Rng, NormalMomentsAndUniformRange) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 200; ++s) {
        NormalStream n(1, s);
        for (int i = 0; i < 500; ++i) v.push_back(n());
    }
    auto ms = stats::mean_se(v);
    EXPECT_NEAR(ms.mean, 0.0, 4 * ms.se);
    double var = stats::variance(v, ms.mean);
    // Var of the sample variance of a standard normal is about 2 / n.
    EXPECT_NEAR(var, 1.0, 4 * std::sqrt(2.0 / static_cast<double>(v.size())));
    UniformStream u(5, 0);
    for (int i = 0; i < 10000; ++i) {
        double x = u();
        ASSERT_GT(x, 0.0);
        ASSERT_LT(x, 1.0);
    }
}

TEST(Rng, HaltonIsLowDiscrepancyInUnitInterval) {
    EXPECT_DOUBLE_EQ(radical_inverse(1, 2), 0.5);
    EXPECT_DOUBLE_EQ(radical_inverse(3, 2), 0.75);
    EXPECT_DOUBLE_EQ(radical_inverse(1, 3), 1.0 / 3.0);
    std::size_t below = 0, n = 4096;
    for (std::size_t i = 0; i < n; ++i)
        if (halton(i, 0) < 0.3) ++below;
    EXPECT_NEAR(static_cast<double>(below) / static_cast<double>(n), 0.3, 2e-3);
}

TEST(Stats, PairwiseSumIsAccurate) {
    std::vector<double> v(1 << 20, 0.1);
    EXPECT_NEAR(stats::pairwise_sum(v), 0.1 * static_cast<double>(v.size()), 1e-6);
    EXPECT_EQ(stats::mean(std::vector<double>{1, 2, 3, 4}), 2.5);
}

TEST(Stats, MeanSeOfKnownSample) {
    std::vector<double> v = {1, 2, 3, 4, 5};
    auto ms = stats::mean_se(v);
    EXPECT_DOUBLE_EQ(ms.mean, 3.0);
    EXPECT_NEAR(ms.se, std::sqrt(2.5 / 5.0), 1e-12);
}

TEST(Stats, QuantilesAndNormalTails) {
    std::vector<double> v(101);
    std::iota(v.begin(), v.end(), 0.0);
    EXPECT_DOUBLE_EQ(stats::quantile(v, 0.5), 50.0);
    EXPECT_DOUBLE_EQ(stats::quantile(v, 0.99), 99.0);
    EXPECT_NEAR(stats::normal_cdf(1.959963984540054), 0.975, 1e-9);
    EXPECT_NEAR(stats::normal_upper_quantile(0.025), 1.959963984540054, 1e-7);
    // Bonferroni with one test keeps the plain threshold.
    EXPECT_NEAR(stats::bonferroni_threshold(1), 3.0, 1e-7);
    EXPECT_GT(stats::bonferroni_threshold(100), 3.0);
}

TEST(Stats, WilsonInterval) {
    auto w = stats::wilson(0, 100, 3.0);
    EXPECT_EQ(w.lo, 0.0);
    EXPECT_NEAR(w.hi, 9.0 / 109.0, 1e-12);
    auto m = stats::wilson(50, 100, 2.0);
    EXPECT_LT(m.lo, 0.5);
    EXPECT_GT(m.hi, 0.5);
    EXPECT_NEAR(0.5 * (m.lo + m.hi), 0.5, 1e-12);
}

TEST(Stats, LinearFitExactLine) {
    std::vector<double> x = {0, 1, 2, 3}, y = {1, 3, 5, 7};
    auto f = stats::linear_fit(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.intercept, 1.0, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(Stats, EqualCountBucketsAreBalancedAndOrdered) {
    std::vector<double> key;
    for (std::uint64_t i = 0; i < 1000; ++i) key.push_back(std::sin(static_cast<double>(i) * 1.7));
    auto lab = stats::equal_count_buckets(key, 8);
    std::vector<std::size_t> cnt(8);
    std::vector<double> lo(8, 1e9), hi(8, -1e9);
    for (std::size_t i = 0; i < key.size(); ++i) {
        cnt[lab[i]]++;
        lo[lab[i]] = std::min(lo[lab[i]], key[i]);
        hi[lab[i]] = std::max(hi[lab[i]], key[i]);
    }
    for (std::size_t b = 0; b < 8; ++b) EXPECT_NEAR(static_cast<double>(cnt[b]), 125.0, 1.0);
    for (std::size_t b = 1; b < 8; ++b) EXPECT_LE(hi[b - 1], lo[b]);
    auto bm = stats::bucket_means(key, lab, 8);
    for (std::size_t b = 1; b < 8; ++b) EXPECT_LT(bm.mean[b - 1], bm.mean[b]);
}

TEST(Stats, BootstrapSeOfMeanMatchesAnalytic) {
    std::vector<double> v;
    NormalStream n(3, 0);
    for (int i = 0; i < 2000; ++i) v.push_back(n());
    double se = stats::bootstrap_se(v.size(), 400, 11, [&](std::span<const std::size_t> idx) {
        double s = 0;
        for (auto i : idx) s += v[i];
        return s / static_cast<double>(idx.size());
    });
    EXPECT_NEAR(se, stats::mean_se(v).se, 0.15 * stats::mean_se(v).se);
}

TEST(Parallel, CoversRangeExactlyOnce) {
    for (unsigned threads : {1u, 2u, 3u, 7u}) {
        std::vector<std::atomic<int>> hit(1001);
        parallel_for(hit.size(), threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) hit[i]++;
        });
        for (auto& h : hit) EXPECT_EQ(h.load(), 1);
    }
}

TEST(Parallel, RethrowsWorkerErrors) {
    EXPECT_THROW(parallel_for(100, 4,
                              [](std::size_t b, std::size_t) {
                                  if (b > 0) throw std::runtime_error("boom");
                              }),
                 std::runtime_error);
}
