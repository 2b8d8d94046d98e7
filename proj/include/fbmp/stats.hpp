#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "fbmp/error.hpp"
#include "fbmp/rng.hpp"

namespace fbmp::stats {

/// Pairwise summation in a fixed order determined only by the length.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    std::size_t h = v.size() / 2;
    return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

/// Mean computed around the first element, so constant inputs are exact.
inline double mean(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double x0 = v[0];
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] - x0;
    return x0 + pairwise_sum(d) / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v, double m) {
    if (v.size() < 2) return 0.0;
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = (v[i] - m) * (v[i] - m);
    return pairwise_sum(d) / static_cast<double>(v.size() - 1);
}

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

/// Sample mean and its jackknife standard error.  For the mean the
/// leave-one-out jackknife reduces to s / sqrt(n).
inline MeanSE mean_se(std::span<const double> v) {
    MeanSE r;
    r.n = v.size();
    r.mean = mean(v);
    double var = variance(v, r.mean);
    r.se = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size())) : 0.0;
    return r;
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double w = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - w) + v[hi] * w;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Upper-tail critical value: returns z with P(N > z) = p.
inline double normal_upper_quantile(double p) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(mid / std::sqrt(2.0)) > p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Two-sided critical value for a family of m tests at overall 3-sigma level.
inline double bonferroni_threshold(std::size_t m, double sigma_level = 3.0) {
    double alpha = std::erfc(sigma_level / std::sqrt(2.0));
    double per = alpha / static_cast<double>(std::max<std::size_t>(m, 1));
    return normal_upper_quantile(per / 2.0);
}

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson(std::size_t successes, std::size_t n, double z = 3.0) {
    if (n == 0) return {0.0, 1.0};
    double nn = static_cast<double>(n);
    double p = static_cast<double>(successes) / nn;
    double z2 = z * z;
    double den = 1.0 + z2 / nn;
    double c = (p + z2 / (2.0 * nn)) / den;
    double h = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / den;
    return {std::max(0.0, c - h), std::min(1.0, c + h)};
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

/// Ordinary least squares y = a + b x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    LinearFit f;
    f.n = x.size();
    if (x.size() < 2) throw InsufficientDataError("linear fit needs at least two points");
    double mx = mean(x), my = mean(y);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0) throw InsufficientDataError("linear fit with degenerate abscissae");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

/// Equal-count bucket labels for one key; ties broken by index.
inline std::vector<std::size_t> equal_count_buckets(std::span<const double> key, std::size_t buckets) {
    std::size_t n = key.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return key[a] < key[b] || (key[a] == key[b] && a < b);
    });
    std::vector<std::size_t> label(n);
    for (std::size_t r = 0; r < n; ++r) label[idx[r]] = r * buckets / n;
    return label;
}

/// Equal-count buckets on a pair of keys: strata on the first key, then
/// sub-strata on the second.  Returns labels in [0, bx * by).
inline std::vector<std::size_t> equal_count_buckets_2d(std::span<const double> k1,
                                                       std::span<const double> k2,
                                                       std::size_t bx, std::size_t by) {
    std::size_t n = k1.size();
    auto l1 = equal_count_buckets(k1, bx);
    std::vector<std::size_t> label(n);
    if (by <= 1) return l1;
    std::vector<std::vector<std::size_t>> members(bx);
    for (std::size_t i = 0; i < n; ++i) members[l1[i]].push_back(i);
    for (std::size_t b = 0; b < bx; ++b) {
        auto& m = members[b];
        std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t c) {
            return k2[a] < k2[c] || (k2[a] == k2[c] && a < c);
        });
        for (std::size_t r = 0; r < m.size(); ++r) label[m[r]] = b * by + r * by / m.size();
    }
    return label;
}

/// Per-bucket means and standard errors of a sample column.
struct BucketSummary {
    std::vector<std::size_t> count;
    std::vector<double> mean;
    std::vector<double> se;
};

inline BucketSummary bucket_means(std::span<const double> v, std::span<const std::size_t> label,
                                  std::size_t buckets) {
    std::vector<std::vector<double>> parts(buckets);
    for (std::size_t i = 0; i < v.size(); ++i) parts[label[i]].push_back(v[i]);
    BucketSummary s;
    s.count.resize(buckets);
    s.mean.resize(buckets);
    s.se.resize(buckets);
    for (std::size_t b = 0; b < buckets; ++b) {
        auto ms = mean_se(parts[b]);
        s.count[b] = parts[b].size();
        s.mean[b] = ms.mean;
        s.se[b] = ms.se;
    }
    return s;
}

/// Bootstrap standard error of a statistic of resampled indices.
template <class Stat>
double bootstrap_se(std::size_t n, std::size_t resamples, std::uint64_t seed, Stat&& stat) {
    std::vector<double> vals(resamples);
    std::vector<std::size_t> idx(n);
    for (std::size_t r = 0; r < resamples; ++r) {
        UniformStream u(seed, r, 7);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::size_t>(u.index(n));
        vals[r] = stat(std::span<const std::size_t>(idx));
    }
    double m = mean(vals);
    return std::sqrt(variance(vals, m));
}

}  // namespace fbmp::stats
