#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>

#include "dipstop/image.hpp"
#include "dipstop/network.hpp"

namespace dipstop {

/// Image-to-image map h used by the risk estimators. Implementations that
/// cannot provide input gradients leave vjp() at its default, which throws
/// CapabilityError.
class DifferentiableMap {
public:
    virtual ~DifferentiableMap() = default;

    virtual Image apply(const Image& y) const = 0;
    /// J(y)^T v.
    virtual Image vjp(const Image& y, const Image& v) const;
};

class IdentityMap final : public DifferentiableMap {
public:
    Image apply(const Image& y) const override { return y; }
    Image vjp(const Image&, const Image& v) const override { return v; }
};

class ZeroMap final : public DifferentiableMap {
public:
    Image apply(const Image& y) const override { return Image::zeros_like(y); }
    Image vjp(const Image& y, const Image&) const override { return Image::zeros_like(y); }
};

/// h(y) = alpha y.
class ScaleMap final : public DifferentiableMap {
public:
    explicit ScaleMap(double alpha) : alpha_(alpha) {}
    Image apply(const Image& y) const override { return alpha_ * y; }
    Image vjp(const Image&, const Image& v) const override { return alpha_ * v; }

private:
    double alpha_;
};

/// 3x3 mean filter per channel with zero padding (a symmetric operator).
class BoxBlurMap final : public DifferentiableMap {
public:
    Image apply(const Image& y) const override;
    Image vjp(const Image& y, const Image& v) const override { return (void)y, apply(v); }
};

/// h(y) = A vec(y) for an N x N matrix, N = H W C in the planar element order.
class DenseLinearMap final : public DifferentiableMap {
public:
    explicit DenseLinearMap(Eigen::MatrixXd a) : a_(std::move(a)) {}

    /// Diagonal U(0.5, 1.5) plus N(0, (off_scale / sqrt(n))^2) off-diagonal
    /// entries. Deterministic in `seed`.
    static DenseLinearMap random(int n, std::uint64_t seed, double off_scale = 0.1);

    const Eigen::MatrixXd& matrix() const { return a_; }
    double trace() const { return a_.trace(); }

    /// Throws ShapeError if y has the wrong number of elements.
    Image apply(const Image& y) const override;
    Image vjp(const Image& y, const Image& v) const override;

private:
    Eigen::MatrixXd a_;
};

/// Adapter over a network; the network must outlive the map.
class NetworkMap final : public DifferentiableMap {
public:
    explicit NetworkMap(const HourglassNet& net) : net_(&net) {}
    Image apply(const Image& y) const override { return net_->forward(y); }
    Image vjp(const Image& y, const Image& v) const override { return net_->input_vjp(y, v); }

private:
    const HourglassNet* net_;
};

enum class ProbeDistribution { standard_normal, rademacher };

std::string to_string(ProbeDistribution d);

/// Random probe with the shape of an image. Values depend only on (shape, distribution, seed).
struct ProbeVector {
    Image values;
    ProbeDistribution distribution = ProbeDistribution::standard_normal;
    std::uint64_t seed = 0;

    static ProbeVector draw(const Shape& shape, ProbeDistribution distribution, std::uint64_t seed);
};

/// Decomposed objective value. On every path
/// total = data_fidelity + divergence_term - constant_offset.
/// df_mc is the per-pixel divergence estimate (1/N) sum_i dh_i/dy_i.
struct RiskEstimate {
    double data_fidelity = 0.0;
    double divergence_term = 0.0;
    double constant_offset = 0.0;
    double total = 0.0;
    double df_mc = 0.0;
};

/// Mean squared difference over all elements. Throws ShapeError.
double mse(const Image& a, const Image& b);

/// (1/N) n^T grad_y(n^T h(y)) with the gradient taken by h.vjp. The probe
/// must be standard normal (ArgumentError otherwise). Throws CapabilityError
/// for maps without input gradients.
double mc_divergence(const DifferentiableMap& h, const Image& y, const ProbeVector& probe);

/// mse(y, h(y)) + 2 sigma^2 div - sigma^2. Throws DomainError for sigma < 0.
RiskEstimate sure_loss(const DifferentiableMap& h, const Image& y, double sigma, const ProbeVector& probe);

/// Randomness of one stochastic-ensembling evaluation.
struct SteDraw {
    double sigma_gamma = 0.0;
    Image gamma;
    ProbeVector probe;
};

/// sigma_gamma ~ U(0, b), gamma ~ N(0, sigma_gamma^2 I) and a standard
/// normal probe, all derived from `seed`. With b = 0, gamma is zero and the
/// probe equals ProbeVector::draw(shape, standard_normal, seed).
SteDraw draw_ste(const Shape& shape, double b, std::uint64_t seed);

/// mse(y, h(y + gamma)) + 2 sigma^2 div_{y2} h(y2) - sigma^2 for an explicit draw.
RiskEstimate ste_loss(const DifferentiableMap& h, const Image& y, double sigma, const SteDraw& draw);

/// Samples a draw with draw_ste(y.shape(), b, seed). Throws DomainError for b < 0 or sigma < 0.
RiskEstimate ste_loss(const DifferentiableMap& h, const Image& y, double sigma, double b, std::uint64_t seed);

inline constexpr double kDefaultPureEps = 1e-3;

/// mse(h(y), y) - zeta mean(y) + (2 zeta / (eps N)) (p * y)^T (h(y + eps p) - h(y))
/// with a Rademacher probe p. Throws DomainError for eps <= 0 or zeta <= 0,
/// ArgumentError for a non-Rademacher probe.
RiskEstimate pure_loss(const DifferentiableMap& h, const Image& y, double zeta, double eps,
                       const ProbeVector& probe);

/// [mse(x, h_out) - mse(y, h_out) + sigma^2] / (2 sigma^2). Throws DomainError for sigma <= 0.
double df_gt(const Image& h_out, const Image& x, const Image& y, double sigma);

/// mse(y_tilde, h_out) - mse(y, h_out).
double estimate_optimism(const Image& h_out, const Image& y, const Image& y_tilde);

}  // namespace dipstop
