#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fedirl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a numeric routine fails to reach its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when inputs violate a documented precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic sub-seed derivation: same (master, tag, a, b) always yields
/// the same stream, independent streams for different tags/indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(master ^ fnv1a(tag));
    h = splitmix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (b + 0x7f4a7c159e3779b9ULL));
    return h;
}

/// mt19937_64 wrapper producing platform-independent uniforms
/// (std::*_distribution sequences are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw InvalidInput("Rng::uniform_int: n must be positive");
        return static_cast<int>(uniform() * n) % n;
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

/// Sample an index from a categorical row (weights need not be normalized).
inline int sample_categorical(const Vector& w, Rng& rng) {
    const double total = w.sum();
    double u = rng.uniform() * total;
    for (int i = 0; i < w.size(); ++i) {
        u -= w[i];
        if (u <= 0.0) return i;
    }
    return static_cast<int>(w.size()) - 1;
}

inline double logsumexp(const Vector& x) {
    const double m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.array() - m).exp().sum());
}

}  // namespace fedirl
