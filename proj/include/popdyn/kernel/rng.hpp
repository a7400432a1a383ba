#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace popdyn::kernel {

/// Philox4x32-10 block function (Salmon et al., SC'11).
struct Philox4x32 {
    using counter_type = std::array<std::uint32_t, 4>;
    using key_type = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t M0 = 0xD2511F53u;
    static constexpr std::uint32_t M1 = 0xCD9E8D57u;
    static constexpr std::uint32_t W0 = 0x9E3779B9u;
    static constexpr std::uint32_t W1 = 0xBB67AE85u;

    static constexpr counter_type round(counter_type c, key_type k) noexcept {
        const std::uint64_t p0 = std::uint64_t{M0} * c[0];
        const std::uint64_t p1 = std::uint64_t{M1} * c[2];
        return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
                static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }

    static constexpr counter_type apply(counter_type c, key_type k) noexcept {
        for (int r = 0; r < 10; ++r) {
            c = round(c, k);
            if (r < 9) {
                k[0] += W0;
                k[1] += W1;
            }
        }
        return c;
    }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// FNV-1a, used to turn textual tags into substream keys.
constexpr std::uint64_t hash_tag(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    return h;
}

/**
 * Counter-based random stream. The pair (seed, stream_id) fully determines the
 * sequence, so replicate i can be generated without touching replicates < i.
 * Every sampler below is implemented here rather than via <random> distributions
 * because the latter are not specified bit-for-bit across standard libraries.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_; }

    /// Independent stream derived from this one and a 64-bit tag.
    RngStream substream(std::uint64_t tag) const {
        return RngStream(splitmix64(seed_ ^ splitmix64(tag + 0x5851F42D4C957F2Dull)), stream_);
    }
    RngStream substream(std::string_view tag) const { return substream(hash_tag(tag)); }

    std::uint32_t next_u32() {
        if (buf_pos_ == 4) refill();
        return buf_[buf_pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform on [0,1) with 53 random bits.
    double uniform() {
        const std::uint64_t a = next_u32() >> 5;
        const std::uint64_t b = next_u32() >> 6;
        return static_cast<double>(a * 67108864ull + b) * 0x1.0p-53;
    }

    /// Uniform on the open interval (0,1).
    double uniform_open() {
        const std::uint64_t a = next_u32() >> 5;
        const std::uint64_t b = next_u32() >> 6;
        return (static_cast<double>(a * 67108864ull + b) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
        // Lemire's method with rejection keeps the draw unbiased.
        while (true) {
            const std::uint64_t x = next_u64();
            const __uint128_t m = static_cast<__uint128_t>(x) * n;
            const std::uint64_t l = static_cast<std::uint64_t>(m);
            if (l >= n) return static_cast<std::uint64_t>(m >> 64);
            const std::uint64_t t = (0 - n) % n;
            if (l >= t) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential(double rate) {
        if (!(rate > 0.0)) throw std::invalid_argument("RngStream::exponential: rate must be positive");
        return -std::log(uniform_open()) / rate;
    }

    /// Marsaglia-Tsang for shape >= 1, boosted by U^{1/a} below 1.
    double gamma(double shape, double scale = 1.0) {
        if (!(shape > 0.0) || !(scale > 0.0)) throw std::invalid_argument("RngStream::gamma: bad parameters");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0, 1.0);
            return scale * g * std::pow(uniform_open(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    /// Poisson: inversion for small means, PTRS (Hormann 1993) otherwise.
    std::uint64_t poisson(double mean) {
        if (!(mean >= 0.0) || !std::isfinite(mean))
            throw std::invalid_argument("RngStream::poisson: mean must be finite and nonnegative");
        if (mean == 0.0) return 0;
        if (mean < 10.0) {
            const double l = std::exp(-mean);
            std::uint64_t k = 0;
            double p = l, s = l;
            const double u = uniform();
            while (u > s) {
                ++k;
                p *= mean / static_cast<double>(k);
                const double s_next = s + p;
                if (s_next == s) break;
                s = s_next;
            }
            return k;
        }
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        while (true) {
            const double u = uniform() - 0.5;
            const double v = uniform_open();
            const double us = 0.5 - std::fabs(u);
            const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
            if (k < 0.0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
                -mean + k * loglam - std::lgamma(k + 1.0))
                return static_cast<std::uint64_t>(k);
        }
    }

    /// Index drawn from unnormalized nonnegative weights.
    std::size_t discrete(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) total += x;
        if (!(total > 0.0)) throw std::invalid_argument("RngStream::discrete: weights sum to zero");
        double u = uniform() * total;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (u < w[i]) return i;
            u -= w[i];
        }
        for (std::size_t i = w.size(); i-- > 0;)
            if (w[i] > 0.0) return i;
        return w.size() - 1;
    }

private:
    void refill() {
        const Philox4x32::counter_type ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                           static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        const Philox4x32::key_type key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
        buf_ = Philox4x32::apply(ctr, key);
        ++block_;
        buf_pos_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace popdyn::kernel
