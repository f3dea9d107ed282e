#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "dipstop/errors.hpp"
#include "dipstop/noise.hpp"
#include "dipstop/phantom.hpp"
#include "dipstop/risk.hpp"
#include "test_support.hpp"

using namespace dipstop;
using testing_support::sample_stats;

namespace {

constexpr double kSigma = 25.0 / 255.0;

// Reference MSE, written out independently of the library.
double true_mse(const Image& a, const Image& b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    return acc / static_cast<double>(a.size());
}

Image phantom8() { return generate_phantom(PhantomKind::disks, 8, 8, 1, 0); }

ProbeVector normal_probe(const Image& y, std::uint64_t seed)
{
    return ProbeVector::draw(y.shape(), ProbeDistribution::standard_normal, seed);
}

ProbeVector rademacher_probe(const Image& y, std::uint64_t seed)
{
    return ProbeVector::draw(y.shape(), ProbeDistribution::rademacher, seed);
}

// Paired differences estimate - truth over `draws` noise realizations.
std::vector<double> paired_differences(int draws, const std::function<std::pair<double, double>(int)>& sample)
{
    std::vector<double> d;
    for (int k = 0; k < draws; ++k) {
        const auto [estimate, truth] = sample(k);
        d.push_back(estimate - truth);
    }
    return d;
}

class NoGradientMap final : public DifferentiableMap {
public:
    Image apply(const Image& y) const override { return y; }
};

ArchSpec tiny_smooth_spec()
{
    ArchSpec spec;
    spec.depth = 2;
    spec.channels = {4, 6};
    spec.skip_channels = {2, 2};
    spec.activation = Activation::softplus;
    return spec;
}

}  // namespace

TEST(Mse, Examples)
{
    const Image zeros(8, 8, 1), ones(8, 8, 1, 1.0), tenth(8, 8, 1, 0.1);
    EXPECT_EQ(mse(ones, ones), 0.0);
    EXPECT_DOUBLE_EQ(mse(zeros, ones), 1.0);
    EXPECT_NEAR(mse(zeros, tenth), 0.01, 1e-15);
    EXPECT_THROW(mse(zeros, Image(8, 9, 1)), ShapeError);
}

TEST(Probe, DistributionsAndDeterminism)
{
    const Image y(16, 16, 3);
    const auto r = rademacher_probe(y, 3);
    for (double v : r.values.data()) EXPECT_TRUE(v == 1.0 || v == -1.0);
    EXPECT_EQ(normal_probe(y, 3).values, normal_probe(y, 3).values);
    EXPECT_FALSE(normal_probe(y, 3).values == normal_probe(y, 4).values);
}

TEST(McDivergence, IdentityAndZero)
{
    const Image y = phantom8();
    const auto probe = normal_probe(y, 1);
    EXPECT_NEAR(mc_divergence(IdentityMap{}, y, probe), dot(probe.values, probe.values) / 64.0, 1e-15);
    EXPECT_EQ(mc_divergence(ZeroMap{}, y, probe), 0.0);
}

TEST(McDivergence, DenseMapMatchesTrace)
{
    const auto a = DenseLinearMap::random(64, 17);
    const Image y = phantom8();
    std::vector<double> values;
    for (int k = 0; k < 2000; ++k) values.push_back(mc_divergence(a, y, normal_probe(y, 1000 + k)));
    const double expected = a.trace() / 64.0;
    EXPECT_LT(std::abs(sample_stats(values).mean - expected), 0.02 * std::abs(expected));
}

TEST(McDivergence, PerProbeValueIsQuadraticForm)
{
    const auto a = DenseLinearMap::random(64, 5);
    const Image y = phantom8();
    const auto probe = normal_probe(y, 9);
    const Eigen::Map<const Eigen::VectorXd> n(probe.values.data().data(), 64);
    EXPECT_NEAR(mc_divergence(a, y, probe), n.dot(a.matrix().transpose() * n) / 64.0, 1e-13);
}

TEST(McDivergence, Errors)
{
    const Image y = phantom8();
    EXPECT_THROW(mc_divergence(NoGradientMap{}, y, normal_probe(y, 0)), CapabilityError);
    EXPECT_THROW(mc_divergence(IdentityMap{}, y, rademacher_probe(y, 0)), ArgumentError);
}

TEST(SureLoss, IdentityWithExactDivergenceIsSigmaSquared)
{
    // Exact divergence of the identity is 1; the estimate's fields compose to sigma^2.
    const Image y = add_gaussian_noise(phantom8(), kSigma, 1);
    const auto r = sure_loss(IdentityMap{}, y, kSigma, normal_probe(y, 2));
    EXPECT_EQ(r.data_fidelity, 0.0);
    EXPECT_NEAR(r.data_fidelity + 2.0 * kSigma * kSigma * 1.0 - kSigma * kSigma, kSigma * kSigma, 1e-18);
    EXPECT_NEAR(r.divergence_term / (2.0 * kSigma * kSigma), r.df_mc, 1e-15);
}

TEST(SureLoss, ZeroMapIsMeanSquareMinusSigmaSquared)
{
    const Image y = add_gaussian_noise(phantom8(), kSigma, 3);
    const auto r = sure_loss(ZeroMap{}, y, kSigma, normal_probe(y, 4));
    EXPECT_NEAR(r.total, dot(y, y) / 64.0 - kSigma * kSigma, 1e-15);
    EXPECT_THROW(sure_loss(ZeroMap{}, y, -1.0, normal_probe(y, 4)), DomainError);
}

TEST(SureLoss, ScaledIdentityTracksTrueRisk)
{
    const Image x = generate_phantom(PhantomKind::disks, 32, 32, 1, 2);
    const ScaleMap h(0.5);
    std::vector<double> sure, truth;
    for (int k = 0; k < 500; ++k) {
        const Image y = add_gaussian_noise(x, kSigma, 100 + k);
        sure.push_back(sure_loss(h, y, kSigma, normal_probe(y, 5000 + k)).total);
        truth.push_back(true_mse(h.apply(y), x));
    }
    const double t = sample_stats(truth).mean;
    EXPECT_LT(std::abs(sample_stats(sure).mean - t), 0.03 * t);
}

TEST(SureLoss, UnbiasedForLinearDenoisers)
{
    const Image x = phantom8();
    std::vector<std::unique_ptr<DifferentiableMap>> maps;
    maps.push_back(std::make_unique<IdentityMap>());
    maps.push_back(std::make_unique<ZeroMap>());
    maps.push_back(std::make_unique<ScaleMap>(0.5));
    maps.push_back(std::make_unique<BoxBlurMap>());
    maps.push_back(std::make_unique<DenseLinearMap>(DenseLinearMap::random(64, 23)));
    for (const auto& h : maps) {
        const auto d = paired_differences(1000, [&](int k) {
            const Image y = add_gaussian_noise(x, kSigma, 7000 + k);
            return std::pair{sure_loss(*h, y, kSigma, normal_probe(y, 9000 + k)).total, true_mse(h->apply(y), x)};
        });
        const auto s = sample_stats(d);
        EXPECT_LT(std::abs(s.mean), 3.0 * s.std_error);
    }
}

TEST(SteLoss, ZeroWidthReproducesSure)
{
    const auto net = HourglassNet::init(tiny_smooth_spec(), 1, 3);
    const NetworkMap h(net);
    const Image y = add_gaussian_noise(phantom8(), kSigma, 8);
    const auto ste = ste_loss(h, y, kSigma, 0.0, 77);
    const auto sure = sure_loss(h, y, kSigma, normal_probe(y, 77));
    EXPECT_EQ(ste.total, sure.total);
    EXPECT_EQ(ste.data_fidelity, sure.data_fidelity);
    EXPECT_EQ(ste.divergence_term, sure.divergence_term);
}

TEST(SteLoss, IdentityExpectation)
{
    // E over sigma_gamma ~ U(0, b) of sigma_gamma^2 is b^2 / 3.
    const Image y = add_gaussian_noise(phantom8(), kSigma, 9);
    const double b = kSigma;
    std::vector<double> totals;
    for (int k = 0; k < 10000; ++k) totals.push_back(ste_loss(IdentityMap{}, y, kSigma, b, k).total);
    const double expected = b * b / 3.0 + kSigma * kSigma;
    EXPECT_LT(std::abs(sample_stats(totals).mean - expected), 0.03 * expected);
}

TEST(SteLoss, ZeroMapIgnoresPerturbation)
{
    const Image y = add_gaussian_noise(phantom8(), kSigma, 10);
    for (int k = 0; k < 5; ++k)
        EXPECT_NEAR(ste_loss(ZeroMap{}, y, kSigma, kSigma, k).total, dot(y, y) / 64.0 - kSigma * kSigma, 1e-15);
    EXPECT_THROW(ste_loss(ZeroMap{}, y, kSigma, -0.1, 0), DomainError);
}

TEST(SteLoss, UnbiasedForLinearDenoisersWithRespectToPerturbedInput)
{
    // For linear h the estimate tracks the risk of h(y + gamma) against x.
    const Image x = phantom8();
    std::vector<std::unique_ptr<DifferentiableMap>> maps;
    maps.push_back(std::make_unique<ScaleMap>(0.5));
    maps.push_back(std::make_unique<BoxBlurMap>());
    maps.push_back(std::make_unique<DenseLinearMap>(DenseLinearMap::random(64, 29)));
    for (const auto& h : maps) {
        const auto d = paired_differences(1000, [&](int k) {
            const Image y = add_gaussian_noise(x, kSigma, 11000 + k);
            const SteDraw draw = draw_ste(y.shape(), kSigma, 13000 + k);
            return std::pair{ste_loss(*h, y, kSigma, draw).total, true_mse(h->apply(y + draw.gamma), x)};
        });
        const auto s = sample_stats(d);
        EXPECT_LT(std::abs(s.mean), 3.0 * s.std_error);
    }
}

TEST(PureLoss, ZeroAndIdentity)
{
    const Image x = phantom8();
    const double zeta = 0.1;
    const Image y = add_poisson_noise(x, zeta, 1);
    const auto probe = rademacher_probe(y, 2);
    EXPECT_NEAR(pure_loss(ZeroMap{}, y, zeta, kDefaultPureEps, probe).total, dot(y, y) / 64.0 - zeta * mean(y), 1e-15);
    EXPECT_NEAR(pure_loss(IdentityMap{}, y, zeta, kDefaultPureEps, probe).total, zeta * mean(y), 1e-12);
    EXPECT_THROW(pure_loss(IdentityMap{}, y, zeta, 0.0, probe), DomainError);
    EXPECT_THROW(pure_loss(IdentityMap{}, y, zeta, kDefaultPureEps, normal_probe(y, 2)), ArgumentError);
}

TEST(PureLoss, ScaledIdentityTracksTrueRisk)
{
    const Image x = generate_phantom(PhantomKind::disks, 32, 32, 1, 4);
    const ScaleMap h(0.7);
    const double zeta = 0.1;
    std::vector<double> pure, truth;
    for (int k = 0; k < 2000; ++k) {
        const Image y = add_poisson_noise(x, zeta, 200 + k);
        pure.push_back(pure_loss(h, y, zeta, kDefaultPureEps, rademacher_probe(y, 3000 + k)).total);
        truth.push_back(true_mse(h.apply(y), x));
    }
    const double t = sample_stats(truth).mean;
    EXPECT_LT(std::abs(sample_stats(pure).mean - t), 0.05 * t);
}

TEST(PureLoss, UnbiasedForLinearDenoisers)
{
    const Image x = phantom8();
    std::vector<std::unique_ptr<DifferentiableMap>> maps;
    maps.push_back(std::make_unique<IdentityMap>());
    maps.push_back(std::make_unique<ZeroMap>());
    maps.push_back(std::make_unique<ScaleMap>(0.5));
    maps.push_back(std::make_unique<BoxBlurMap>());
    maps.push_back(std::make_unique<DenseLinearMap>(DenseLinearMap::random(64, 31)));
    for (double zeta : {0.1, 0.2})
        for (const auto& h : maps) {
            const auto d = paired_differences(1000, [&](int k) {
                const Image y = add_poisson_noise(x, zeta, 15000 + k);
                return std::pair{pure_loss(*h, y, zeta, kDefaultPureEps, rademacher_probe(y, 17000 + k)).total,
                                 true_mse(h->apply(y), x)};
            });
            const auto s = sample_stats(d);
            EXPECT_LT(std::abs(s.mean), 3.0 * s.std_error) << "zeta " << zeta;
        }
}

TEST(RiskEstimate, TotalRecomposes)
{
    const auto net = HourglassNet::init(tiny_smooth_spec(), 1, 4);
    const NetworkMap h(net);
    const Image x = phantom8();
    const Image yg = add_gaussian_noise(x, kSigma, 1);
    const Image yp = add_poisson_noise(x, 0.1, 1);
    for (const RiskEstimate& r :
         {sure_loss(h, yg, kSigma, normal_probe(yg, 1)), ste_loss(h, yg, kSigma, kSigma, 2),
          pure_loss(h, yp, 0.1, kDefaultPureEps, rademacher_probe(yp, 3))})
        EXPECT_EQ(r.total, r.data_fidelity + r.divergence_term - r.constant_offset);
}

TEST(DfGt, Examples)
{
    const Image x = generate_phantom(PhantomKind::disks, 64, 64, 1, 5);
    const double n = static_cast<double>(x.size());
    const Image y = add_gaussian_noise(x, kSigma, 6);
    EXPECT_LT(std::abs(df_gt(x, x, y, kSigma)), 5.0 * (kSigma * kSigma * std::sqrt(2.0 / n)) / (2.0 * kSigma * kSigma));

    std::vector<double> identity, zero;
    for (int k = 0; k < 200; ++k) {
        const Image yk = add_gaussian_noise(x, kSigma, 300 + k);
        identity.push_back(df_gt(yk, x, yk, kSigma));
        zero.push_back(df_gt(Image::zeros_like(x), x, yk, kSigma));
    }
    const auto si = sample_stats(identity), sz = sample_stats(zero);
    EXPECT_LT(std::abs(si.mean - 1.0), 3.0 * si.std_error);
    EXPECT_LT(std::abs(sz.mean), 3.0 * sz.std_error);
    EXPECT_THROW(df_gt(x, x, y, 0.0), DomainError);
}

TEST(Optimism, ExpectationsAndLinkToDf)
{
    const Image x = phantom8();
    std::vector<double> ident, perfect, zero;
    for (int k = 0; k < 2000; ++k) {
        const Image y = add_gaussian_noise(x, kSigma, 400 + 2 * k);
        const Image yt = add_gaussian_noise(x, kSigma, 401 + 2 * k);
        ident.push_back(estimate_optimism(y, y, yt));
        perfect.push_back(estimate_optimism(x, y, yt));
        zero.push_back(estimate_optimism(Image::zeros_like(x), y, yt));
    }
    const auto si = sample_stats(ident), sp = sample_stats(perfect), sz = sample_stats(zero);
    EXPECT_LT(std::abs(si.mean - 2.0 * kSigma * kSigma), 3.0 * si.std_error);
    EXPECT_LT(std::abs(sp.mean), 3.0 * sp.std_error);
    EXPECT_LT(std::abs(sz.mean), 3.0 * sz.std_error);
    EXPECT_THROW(estimate_optimism(x, Image(8, 9, 1), x), ShapeError);
}

TEST(Optimism, MatchesTwiceSigmaSquaredDfForLinearDenoisers)
{
    const Image x = phantom8();
    std::vector<std::unique_ptr<DifferentiableMap>> maps;
    maps.push_back(std::make_unique<ScaleMap>(0.5));
    maps.push_back(std::make_unique<BoxBlurMap>());
    maps.push_back(std::make_unique<DenseLinearMap>(DenseLinearMap::random(64, 37)));
    for (const auto& h : maps) {
        const auto d = paired_differences(2000, [&](int k) {
            const Image y = add_gaussian_noise(x, kSigma, 20000 + 2 * k);
            const Image yt = add_gaussian_noise(x, kSigma, 20001 + 2 * k);
            const Image out = h->apply(y);
            return std::pair{estimate_optimism(out, y, yt), 2.0 * kSigma * kSigma * df_gt(out, x, y, kSigma)};
        });
        const auto s = sample_stats(d);
        EXPECT_LT(std::abs(s.mean), 3.0 * s.std_error);
    }
}

TEST(Perturbation, SmallNoiseEnergyApproachesJacobianNorm)
{
    // E_gamma ||h(y + gamma) - h(y)||^2 / (N sigma_gamma^2) -> ||J||_F^2 / N.
    const auto net = HourglassNet::init(tiny_smooth_spec(), 1, 12);
    const Image y = generate_phantom(PhantomKind::disks, 16, 16, 1, 3);
    const double n = static_cast<double>(y.size());

    double frob = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        Image e = Image::zeros_like(y);
        e.data()[i] = 1.0;
        const Image col = net.input_jvp(y, e);
        frob += dot(col, col);
    }
    const double expected = frob / n;

    const Image hy = net.forward(y);
    for (double sg : {1e-3, 5e-4}) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(sg * 1e7));
        std::normal_distribution<double> normal(0.0, sg);
        std::vector<double> ratios;
        for (int k = 0; k < 400; ++k) {
            Image g = Image::zeros_like(y);
            for (double& v : g.data()) v = normal(rng);
            ratios.push_back(true_mse(net.forward(y + g), hy) / (sg * sg));
        }
        EXPECT_LT(std::abs(sample_stats(ratios).mean - expected), 0.05 * expected) << "sigma_gamma " << sg;
    }
}
