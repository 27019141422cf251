#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace npdiff {

// Philox4x32-10 counter-based block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

// Deterministic stream of random values keyed by (seed, stream id). The value
// at draw position i depends only on (seed, stream, i), so named substreams can
// be consumed in any order or concurrently without affecting one another.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

    CounterRng substream(std::string_view label) const;
    CounterRng substream(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Standard normal via Box-Muller; the paired value is cached.
    double normal();
    void fill_normal(std::span<double> out);
    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_index_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int block_pos_ = 4;
    std::optional<double> cached_normal_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

} // namespace npdiff
