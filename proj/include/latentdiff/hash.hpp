#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace latentdiff {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a 64-bit. `state` lets callers hash discontiguous buffers.
constexpr std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                                std::uint64_t state = kFnvOffsetBasis) noexcept {
    for (std::byte b : bytes) {
        state ^= static_cast<std::uint64_t>(b);
        state *= kFnvPrime;
    }
    return state;
}

constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t state = kFnvOffsetBasis) noexcept {
    for (char c : text) {
        state ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        state *= kFnvPrime;
    }
    return state;
}

class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [-1, 1): top 53 bits scaled to [0,1), then affinely mapped.
    constexpr double next_signed_unit() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }

private:
    std::uint64_t state_;
};

/// "0x" + 16 lowercase hex digits.
std::string hex_digest(std::uint64_t value);

}  // namespace latentdiff
