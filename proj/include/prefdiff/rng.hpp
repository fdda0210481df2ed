#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace prefdiff {

// Seeded random stream. Every consumer derives its own named substream from
// one root seed (e.g. derive("curate/cpo/item/17")), so results do not depend
// on evaluation order or worker count. Gaussian draws use Box-Muller on the
// raw 64-bit stream instead of std::normal_distribution, which keeps the
// sequence identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // standard normal via Box-Muller (cosine branch only)
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t seed() const { return seed_; }

    // Substream keyed by (root seed, name); does not consume this stream.
    Rng derive(std::string_view name) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

// FNV-1a over the name folded into the seed, then finalized with a
// splitmix64 round so nearby seeds do not produce correlated streams.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

}  // namespace prefdiff
