#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace upbench {

// All randomness in the project flows through the generators below so that
// every draw is reproducible bit-for-bit across platforms and compilers.
// (std::normal_distribution and friends are implementation-defined.)

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** with a Marsaglia-polar Gaussian on top.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform over {0, ..., n-1}; n must be >= 1.
    int uniform_int(int n) { return static_cast<int>(uniform01() * static_cast<double>(n)); }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal via the polar method (pairs cached).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double gaussian(double mu, double sigma) { return mu + sigma * gaussian(); }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace detail {

inline std::uint64_t fold_token(std::uint64_t h, std::uint64_t v) {
    std::uint64_t s = h ^ (v + 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

inline std::uint64_t fold_token(std::uint64_t h, std::string_view s) {
    std::uint64_t acc = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        acc ^= c;
        acc *= 0x100000001b3ULL;
    }
    return fold_token(h, acc);
}

inline std::uint64_t fold_token(std::uint64_t h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return fold_token(h, bits);
}

inline std::uint64_t fold_token(std::uint64_t h, int v) {
    return fold_token(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
}

}  // namespace detail

/// Derives an independent stream seed from a master seed and a tag sequence.
/// Tokens are order-sensitive; distinct tag sequences give unrelated streams.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t master, Parts... parts) {
    std::uint64_t h = splitmix64(master);
    ((h = detail::fold_token(h, parts)), ...);
    return h;
}

}  // namespace upbench
