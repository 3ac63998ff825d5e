#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mssm/tensor.hpp"

namespace mssm {

// Deterministic RNG used everywhere. Uniform and normal draws are generated
// from raw engine output directly so results do not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::int64_t index(std::int64_t n) { return static_cast<std::int64_t>(engine_() % static_cast<std::uint64_t>(n)); }

    // Box-Muller; one fresh pair per two draws.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Tensor normal_tensor(std::vector<std::int64_t> shape, double std_dev = 1.0) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std_dev * normal();
        return t;
    }

    Tensor uniform_tensor(std::vector<std::int64_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    // Independent child stream, stable under call order.
    Rng child(std::uint64_t salt) const {
        return Rng(mix(seed_of(engine_), salt));
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    static std::uint64_t hash_str(const std::string& s) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    // Children derive from a hash of the engine's current draw; advancing the
    // parent exactly once keeps sibling streams distinct.
    static std::uint64_t seed_of(std::mt19937_64& e) { return e(); }
    // child() must not perturb this stream, so it operates on a copy.
    static std::uint64_t seed_of(const std::mt19937_64& e) {
        std::mt19937_64 copy = e;
        return copy();
    }

    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mssm
