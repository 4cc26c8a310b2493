#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "cyborg/errors.hpp"

namespace cyborg {

inline void write_f32le(std::ostream& out, std::span<const float> values) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    for (float v : values) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
}

inline std::vector<float> read_f32le(std::istream& in, std::size_t count) {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated f32le payload");
        std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                             (std::uint32_t{b[3]} << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

/// FNV-1a, 64-bit. Stable across platforms, used for config hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// SplitMix64 finalizer, used to derive per-epoch and per-sample seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cyborg
