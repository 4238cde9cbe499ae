#pragma once
#include <cstdint>
#include <random>
#include <string_view>

namespace beamsense {

using Rng = std::mt19937_64;

// One splitmix64 round; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

// Child seed for a named sub-stream. Stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace beamsense
