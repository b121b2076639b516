#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace stcal {

// Deterministic RNG with fully specified output, independent of the standard
// library's distribution implementations. All randomness in a run flows from
// named seeds through instances of this class, so reruns are bit-identical.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    // splitmix64 step
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Box-Muller, one value per call (the pair's second half is discarded so
    // the stream position stays a simple function of call count)
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. per-epoch shuffle streams).
    Rng fork(uint64_t tag) const {
        Rng r(state_ ^ (0xd1342543de82ef95ull * (tag + 1)));
        r.next_u64();
        return r;
    }

  private:
    uint64_t state_;
};

}  // namespace stcal
