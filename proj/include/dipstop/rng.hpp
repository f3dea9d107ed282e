#pragma once

#include <cstdint>
#include <random>

namespace dipstop {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based seed derivation: independent streams keyed by (seed, stream, counter).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
{
    return mix64(mix64(mix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ counter);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
{
    return Rng(derive_seed(seed, stream, counter));
}

/// Stream identifiers, kept in one place so no two consumers share a stream.
namespace stream {
inline constexpr std::uint64_t kPhantom = 1;
inline constexpr std::uint64_t kGaussianNoise = 2;
inline constexpr std::uint64_t kPoissonNoise = 3;
inline constexpr std::uint64_t kNetworkInit = 4;
inline constexpr std::uint64_t kPerturbation = 5;
inline constexpr std::uint64_t kProbe = 6;
inline constexpr std::uint64_t kIteration = 7;
inline constexpr std::uint64_t kFixedInput = 8;
inline constexpr std::uint64_t kObservation = 9;
}  // namespace stream

}  // namespace dipstop
