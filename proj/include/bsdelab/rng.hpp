#pragma once

#include <cmath>
#include <cstdint>

namespace bsdelab {

// Counter-based generator: every draw is a pure function of
// (seed, path index, draw index), so path i is bit-identical no matter how
// many paths are simulated or how work is scheduled across threads.
namespace rng {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t path_key(std::uint64_t seed, std::uint64_t path) {
    return mix64(mix64(seed) ^ (0xA24BAED4963EE407ULL + path * 0x9FB21C651E98DF25ULL));
}

// Uniform in (0, 1]; never returns 0 so it is safe under log().
inline double uniform(std::uint64_t key, std::uint64_t counter) {
    const std::uint64_t bits = mix64(key + counter * 0xD6E8FEB86659FD93ULL);
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace rng

/// One independent Gaussian stream per (seed, path). Draws are indexed by an
/// internal counter; Box-Muller pairs are cached so consecutive draws cost one
/// transform per two values.
class PathRng {
  public:
    PathRng(std::uint64_t seed, std::uint64_t path)
        : key_(rng::path_key(seed, path)) {}

    double gaussian() {
        if (haveSpare_) {
            haveSpare_ = false;
            return spare_;
        }
        const double u1 = rng::uniform(key_, counter_++);
        const double u2 = rng::uniform(key_, counter_++);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        haveSpare_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool haveSpare_ = false;
};

}  // namespace bsdelab
