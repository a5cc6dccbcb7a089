#ifndef HFT_RNG_HPP
#define HFT_RNG_HPP

#include <cstdint>
#include <vector>

namespace hft {

// Deterministic generator with explicitly pinned sampling algorithms.
// The standard <random> distributions are implementation-defined, which
// would tie plan/schedule reproducibility to a particular libstdc++; every
// draw below is specified down to the bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    // splitmix64 step
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n) via rejection
    std::uint64_t below(std::uint64_t n);

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, always consumes two draws
    double normal();

    // fork an independent stream (for per-epoch / per-worker use)
    Rng fork(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), order = seeded permutation prefix
    std::vector<int> sample_without_replacement(int n, int k);

private:
    std::uint64_t state_;
};

}  // namespace hft

#endif
