#pragma once

#include <cstdint>
#include <initializer_list>

namespace trajex {

// Counter-based generator: every draw is a pure function of (seed, stream
// key, counter), so results never depend on call order or global state.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) noexcept;

    std::uint64_t bits(std::uint64_t counter) const noexcept;
    // Uniform on the open interval (0, 1).
    double uniform(std::uint64_t counter) const noexcept;
    double uniform(std::uint64_t counter, double lo, double hi) const noexcept;
    // Standard normal via Box-Muller on counters (2c, 2c+1).
    double normal(std::uint64_t counter) const noexcept;

    std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

// Stateful view over a CounterRng for sequential draws.
class RngStream {
public:
    explicit RngStream(CounterRng rng) noexcept : rng_(rng) {}
    double uniform(double lo = 0.0, double hi = 1.0) noexcept { return rng_.uniform(next_++, lo, hi); }
    double normal() noexcept { return rng_.normal(next_++); }
    std::uint64_t bits() noexcept { return rng_.bits(next_++); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

private:
    CounterRng rng_;
    std::uint64_t next_ = 0;
};

}  // namespace trajex
