#include "trajex/rng.hpp"

#include <cmath>
#include <numbers>

namespace trajex {

std::uint64_t mix64(std::uint64_t x) noexcept {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) noexcept
    : key_(mix64(seed)) {
    for (std::uint64_t s : stream) {
        key_ = mix64(key_ ^ mix64(s + 0x632be59bd9b4e019ULL));
    }
}

std::uint64_t CounterRng::bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter));
}

double CounterRng::uniform(std::uint64_t counter) const noexcept {
    // 53 random mantissa bits, shifted by half an ulp to stay inside (0, 1).
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::uniform(std::uint64_t counter, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(counter);
}

double CounterRng::normal(std::uint64_t counter) const noexcept {
    // Separate lane from uniform() so mixed use of one counter range stays independent.
    const CounterRng lane(key_, {0x6e6f726d616cULL});
    const double u1 = lane.uniform(2 * counter);
    const double u2 = lane.uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
    if (n <= 1) {
        return 0;
    }
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = bits();
    while (x >= limit) {
        x = bits();
    }
    return x % n;
}

}  // namespace trajex
