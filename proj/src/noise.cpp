#include "dipstop/noise.hpp"

#include <cmath>
#include <random>

#include "dipstop/errors.hpp"
#include "dipstop/rng.hpp"

namespace dipstop {

std::string to_string(NoiseKind kind)
{
    return kind == NoiseKind::gaussian ? "gaussian" : "poisson";
}

NoiseKind parse_noise_kind(std::string_view name)
{
    if (name == "gaussian") return NoiseKind::gaussian;
    if (name == "poisson") return NoiseKind::poisson;
    throw ArgumentError("unknown noise kind '" + std::string(name) + "'");
}

Image add_gaussian_noise(const Image& x, double sigma, std::uint64_t seed)
{
    if (!(sigma >= 0.0)) throw DomainError("gaussian noise: sigma must be >= 0");
    Image y = x;
    if (sigma == 0.0) return y;
    Rng rng = make_rng(seed, stream::kGaussianNoise);
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : y.data()) v += normal(rng);
    return y;
}

Image add_poisson_noise(const Image& x, double zeta, std::uint64_t seed)
{
    if (!(zeta > 0.0)) throw DomainError("poisson noise: zeta must be > 0");
    for (double v : x.data()) {
        if (v < 0.0) throw DomainError("poisson noise: negative pixel value");
    }
    Image y = Image::zeros_like(x);
    Rng rng = make_rng(seed, stream::kPoissonNoise);
    auto src = x.data();
    auto dst = y.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double rate = src[i] / zeta;
        if (rate == 0.0) continue;
        std::poisson_distribution<long long> poisson(rate);
        dst[i] = zeta * static_cast<double>(poisson(rng));
    }
    return y;
}

NoisyObservation synthesize(const Image& x, const NoiseSpec& spec)
{
    if (spec.kind == NoiseKind::gaussian) return {add_gaussian_noise(x, spec.sigma, spec.seed), spec};
    return {add_poisson_noise(x, spec.zeta, spec.seed), spec};
}

}  // namespace dipstop
