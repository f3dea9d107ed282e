#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dipstop/image.hpp"

namespace dipstop {

enum class NoiseKind { gaussian, poisson };

std::string to_string(NoiseKind kind);
/// Throws ArgumentError for unknown names.
NoiseKind parse_noise_kind(std::string_view name);

/// Noise model of an observation. `sigma` is on the [0,1] intensity scale
/// (25/255 for the usual sigma = 25); `zeta` is the Poisson scale.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double sigma = 0.0;
    double zeta = 0.0;
    std::uint64_t seed = 0;

    static NoiseSpec gaussian(double sigma, std::uint64_t seed) { return {NoiseKind::gaussian, sigma, 0.0, seed}; }
    static NoiseSpec poisson(double zeta, std::uint64_t seed) { return {NoiseKind::poisson, 0.0, zeta, seed}; }
};

struct NoisyObservation {
    Image y;
    NoiseSpec spec;
};

/// y = x + n, n ~ N(0, sigma^2) i.i.d. Not clipped.
Image add_gaussian_noise(const Image& x, double sigma, std::uint64_t seed);

/// y = zeta * Poisson(x / zeta), so E[y] = x and Var[y] = zeta * x.
Image add_poisson_noise(const Image& x, double zeta, std::uint64_t seed);

NoisyObservation synthesize(const Image& x, const NoiseSpec& spec);

}  // namespace dipstop
