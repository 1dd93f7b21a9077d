#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace gradbench {

// 64-bit FNV-1a, used to turn parameter names into stream keys.
std::uint64_t hash_name(std::string_view name);

// Derives an independent seed from a base seed and a sequence of keys.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the conversions to floating point are
// done here because the std distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace gradbench
