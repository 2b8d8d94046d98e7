#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fbmp {

/// Philox4x32-10 counter-based generator.  A (key, counter) pair fully
/// determines the output, so any path can be regenerated independently.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static Counter round(const Counter& c, const Key& k) {
        std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
        std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
        auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        auto lo0 = static_cast<std::uint32_t>(p0);
        auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    static Counter generate(Counter c, Key k) {
        c = round(c, k);
        for (int r = 1; r < 10; ++r) {
            k[0] += kW0;
            k[1] += kW1;
            c = round(c, k);
        }
        return c;
    }
};

inline double u53(std::uint32_t a, std::uint32_t b) {
    // Open interval (0, 1); never returns 0 so log() is safe.
    std::uint64_t k = (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);
    return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

/// Standard normal draws for one stream (seed, stream id).  Draw j is a pure
/// function of (seed, stream, j).
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t stream, std::uint32_t domain = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream), domain_(domain) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        Philox4x32::Counter c{static_cast<std::uint32_t>(stream_),
                              static_cast<std::uint32_t>(stream_ >> 32), block_, domain_};
        ++block_;
        auto r = Philox4x32::generate(c, key_);
        double u1 = u53(r[0], r[1]);
        double u2 = u53(r[2], r[3]);
        double rad = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * std::numbers::pi * u2;
        spare_ = rad * std::sin(th);
        have_spare_ = true;
        return rad * std::cos(th);
    }

private:
    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint32_t domain_;
    std::uint32_t block_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Uniform draws on (0, 1) and bounded integers for one stream.
class UniformStream {
public:
    UniformStream(std::uint64_t seed, std::uint64_t stream, std::uint32_t domain = 1)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream), domain_(domain) {}

    double operator()() {
        if (pos_ == 2) {
            Philox4x32::Counter c{static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32), block_, domain_};
            ++block_;
            buf_ = Philox4x32::generate(c, key_);
            pos_ = 0;
        }
        double u = u53(buf_[2 * pos_], buf_[2 * pos_ + 1]);
        ++pos_;
        return u;
    }

    /// Integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        auto i = static_cast<std::uint64_t>((*this)() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

private:
    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint32_t domain_;
    std::uint32_t block_ = 0;
    Philox4x32::Counter buf_{};
    int pos_ = 2;
};

/// Radical inverse in the given base; index 0 maps to 0.
inline double radical_inverse(std::uint64_t i, unsigned base) {
    double inv = 1.0 / base;
    double f = inv;
    double r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

/// Halton point i (1-based internally) in dimension d < 12.
inline double halton(std::uint64_t i, unsigned d) {
    static constexpr unsigned primes[12] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    return radical_inverse(i + 1, primes[d % 12]);
}

}  // namespace fbmp
