#pragma once
// Deterministic random sampling. The engine is std::mt19937_64 (sequence fixed
// by the standard); the distributions are implemented here because the
// standard does not pin distribution algorithms across library versions, and
// results files are expected to be bit-reproducible.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace paramgate {

class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return double(eng_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (cached second value).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    // Index in [0, p.size()) with probability proportional to p (p need not be
    // normalized but must be non-negative).
    int categorical(const std::vector<double>& p) {
        double total = 0.0;
        for (double v : p) {
            if (v < -1e-12) throw std::invalid_argument("rng: negative probability");
            total += std::max(v, 0.0);
        }
        if (total <= 0.0) throw std::invalid_argument("rng: zero probability vector");
        double r = uniform() * total;
        for (size_t i = 0; i < p.size(); ++i) {
            r -= std::max(p[i], 0.0);
            if (r < 0.0) return int(i);
        }
        return int(p.size()) - 1;
    }

    // Histogram of `shots` categorical draws.
    std::vector<long> multinomial(long shots, const std::vector<double>& p) {
        std::vector<long> counts(p.size(), 0);
        for (long s = 0; s < shots; ++s) counts[size_t(categorical(p))]++;
        return counts;
    }

    uint64_t raw() { return eng_(); }

    // Decorrelated child stream (for per-setting seeding).
    static uint64_t derive_seed(uint64_t master, uint64_t stream) {
        // splitmix64 finalizer on the combined value
        uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace paramgate
