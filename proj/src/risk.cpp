#include "dipstop/risk.hpp"

#include <cmath>
#include <random>

#include "dipstop/errors.hpp"
#include "dipstop/rng.hpp"

namespace dipstop {

Image DifferentiableMap::vjp(const Image&, const Image&) const
{
    throw CapabilityError("map does not provide input gradients");
}

Image BoxBlurMap::apply(const Image& y) const
{
    Image out = Image::zeros_like(y);
    const int h = y.height(), w = y.width();
    for (int c = 0; c < y.channels(); ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int ii = i + di, jj = j + dj;
                        if (ii >= 0 && ii < h && jj >= 0 && jj < w) acc += y.at(c, ii, jj);
                    }
                out.at(c, i, j) = acc / 9.0;
            }
    return out;
}

DenseLinearMap DenseLinearMap::random(int n, std::uint64_t seed, double off_scale)
{
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, off_scale / std::sqrt(static_cast<double>(n)));
    std::uniform_real_distribution<double> diag(0.5, 1.5);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = i == j ? diag(rng) : normal(rng);
    return DenseLinearMap(std::move(a));
}

namespace {

Eigen::Map<const Eigen::VectorXd> as_vector(const Image& img)
{
    return {img.data().data(), static_cast<Eigen::Index>(img.size())};
}

void check_dense_size(const Eigen::MatrixXd& a, const Image& y)
{
    if (a.rows() != static_cast<Eigen::Index>(y.size()) || a.cols() != a.rows())
        throw ShapeError("dense linear map: matrix size does not match the image");
}

}  // namespace

Image DenseLinearMap::apply(const Image& y) const
{
    check_dense_size(a_, y);
    Image out = Image::zeros_like(y);
    Eigen::Map<Eigen::VectorXd>(out.data().data(), a_.rows()) = a_ * as_vector(y);
    return out;
}

Image DenseLinearMap::vjp(const Image& y, const Image& v) const
{
    check_dense_size(a_, y);
    require_same_shape(y, v, "dense linear map vjp");
    Image out = Image::zeros_like(y);
    Eigen::Map<Eigen::VectorXd>(out.data().data(), a_.rows()) = a_.transpose() * as_vector(v);
    return out;
}

std::string to_string(ProbeDistribution d)
{
    return d == ProbeDistribution::standard_normal ? "standard_normal" : "rademacher";
}

ProbeVector ProbeVector::draw(const Shape& shape, ProbeDistribution distribution, std::uint64_t seed)
{
    ProbeVector p{Image(shape), distribution, seed};
    Rng rng = make_rng(seed, stream::kProbe);
    if (distribution == ProbeDistribution::standard_normal) {
        std::normal_distribution<double> normal;
        for (double& v : p.values.data()) v = normal(rng);
    } else {
        std::bernoulli_distribution coin(0.5);
        for (double& v : p.values.data()) v = coin(rng) ? 1.0 : -1.0;
    }
    return p;
}

double mse(const Image& a, const Image& b)
{
    require_same_shape(a, b, "mse");
    return mean_squared_difference(a.data(), b.data());
}

double mc_divergence(const DifferentiableMap& h, const Image& y, const ProbeVector& probe)
{
    if (probe.distribution != ProbeDistribution::standard_normal)
        throw ArgumentError("mc_divergence: probe must be standard normal");
    require_same_shape(y, probe.values, "mc_divergence");
    return dot(probe.values, h.vjp(y, probe.values)) / static_cast<double>(y.size());
}

namespace {

RiskEstimate gaussian_estimate(double fidelity, double divergence, double sigma)
{
    RiskEstimate r;
    r.data_fidelity = fidelity;
    r.divergence_term = 2.0 * sigma * sigma * divergence;
    r.constant_offset = sigma * sigma;
    r.total = r.data_fidelity + r.divergence_term - r.constant_offset;
    r.df_mc = divergence;
    return r;
}

}  // namespace

RiskEstimate sure_loss(const DifferentiableMap& h, const Image& y, double sigma, const ProbeVector& probe)
{
    if (!(sigma >= 0.0)) throw DomainError("sure_loss: sigma must be >= 0");
    return gaussian_estimate(mse(y, h.apply(y)), mc_divergence(h, y, probe), sigma);
}

SteDraw draw_ste(const Shape& shape, double b, std::uint64_t seed)
{
    if (!(b >= 0.0)) throw DomainError("ste: b must be >= 0");
    SteDraw d;
    d.gamma = Image(shape);
    d.probe = ProbeVector::draw(shape, ProbeDistribution::standard_normal, seed);
    if (b > 0.0) {
        Rng rng = make_rng(seed, stream::kPerturbation);
        d.sigma_gamma = std::uniform_real_distribution<double>(0.0, b)(rng);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : d.gamma.data()) v = d.sigma_gamma * normal(rng);
    }
    return d;
}

RiskEstimate ste_loss(const DifferentiableMap& h, const Image& y, double sigma, const SteDraw& draw)
{
    if (!(sigma >= 0.0)) throw DomainError("ste_loss: sigma must be >= 0");
    const Image y2 = y + draw.gamma;
    return gaussian_estimate(mse(y, h.apply(y2)), mc_divergence(h, y2, draw.probe), sigma);
}

RiskEstimate ste_loss(const DifferentiableMap& h, const Image& y, double sigma, double b, std::uint64_t seed)
{
    return ste_loss(h, y, sigma, draw_ste(y.shape(), b, seed));
}

RiskEstimate pure_loss(const DifferentiableMap& h, const Image& y, double zeta, double eps,
                       const ProbeVector& probe)
{
    if (!(eps > 0.0)) throw DomainError("pure_loss: eps must be > 0");
    if (!(zeta > 0.0)) throw DomainError("pure_loss: zeta must be > 0");
    if (probe.distribution != ProbeDistribution::rademacher)
        throw ArgumentError("pure_loss: probe must be rademacher");
    require_same_shape(y, probe.values, "pure_loss");

    const Image hy = h.apply(y);
    const Image hp = h.apply(y + eps * Image(probe.values));
    const auto p = probe.values.data(), yy = y.data(), a = hp.data(), b = hy.data();
    double acc = 0.0, acc_plain = 0.0;
    for (std::size_t i = 0; i < yy.size(); ++i) {
        const double diff = p[i] * (a[i] - b[i]);
        acc += yy[i] * diff;
        acc_plain += diff;
    }
    const double n = static_cast<double>(y.size());

    RiskEstimate r;
    r.data_fidelity = mse(hy, y);
    r.divergence_term = 2.0 * zeta * acc / (eps * n);
    r.constant_offset = zeta * mean(y);
    r.total = r.data_fidelity + r.divergence_term - r.constant_offset;
    r.df_mc = acc_plain / (eps * n);
    return r;
}

double df_gt(const Image& h_out, const Image& x, const Image& y, double sigma)
{
    if (!(sigma > 0.0)) throw DomainError("df_gt: sigma must be > 0");
    const double s2 = sigma * sigma;
    return (mse(x, h_out) - mse(y, h_out) + s2) / (2.0 * s2);
}

double estimate_optimism(const Image& h_out, const Image& y, const Image& y_tilde)
{
    return mse(y_tilde, h_out) - mse(y, h_out);
}

}  // namespace dipstop
