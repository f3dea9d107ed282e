#pragma once

// Building blocks of the hourglass network. Internal to the library.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "dipstop/network.hpp"
#include "dipstop/rng.hpp"
#include "dipstop/tensor.hpp"

namespace dipstop {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerCache {
    Tensor input;                // layer input (activations, 1x1 conv)
    Tensor aux;                  // normalized activations (batch norm)
    Tensor tangent_aux;          // normalized tangent (batch norm, tangent mode)
    RowMatrix col;               // im2col buffer
    std::vector<int> gather;     // im2col source offsets, (k*k) x out_plane
    int gather_h = -1, gather_w = -1;
    std::vector<double> stats;   // per-plane scalars
    int out_h = 0, out_w = 0;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual std::size_t num_params() const { return 0; }
    virtual void init(std::span<double> params, Rng& rng) const { (void)params, (void)rng; }

    /// `params` is this layer's slice of theta.
    virtual Tensor forward(std::span<const double> params, const Tensor& x, PassMode mode,
                           LayerCache& cache) const = 0;
    /// Accumulates parameter gradients into `grad` (this layer's slice) and
    /// returns the gradient with respect to the layer input.
    virtual Tensor backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                            std::span<double> grad) const = 0;

    std::size_t offset = 0;
};

/// Convolution with mirror padding (k - 1) / 2 and an optional stride.
class Conv2d final : public Layer {
public:
    Conv2d(int in, int out, int kernel, int stride);
    std::size_t num_params() const override;
    void init(std::span<double> params, Rng& rng) const override;
    Tensor forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const override;
    Tensor backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                    std::span<double> grad) const override;

private:
    bool pointwise() const { return kernel_ == 1 && stride_ == 1; }
    void build_gather(LayerCache& cache, int h, int w) const;

    int in_, out_, kernel_, stride_;
};

/// Per-channel normalization with learned scale/shift, statistics taken over
/// the spatial extent of each batch item (batch size is always 1 per input).
class BatchNorm final : public Layer {
public:
    explicit BatchNorm(int channels) : channels_(channels) {}
    std::size_t num_params() const override { return 2 * static_cast<std::size_t>(channels_); }
    void init(std::span<double> params, Rng& rng) const override;
    Tensor forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const override;
    Tensor backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                    std::span<double> grad) const override;

    static constexpr double kEps = 1e-5;

private:
    int channels_;
};

class Act final : public Layer {
public:
    explicit Act(Activation kind) : kind_(kind) {}
    Tensor forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const override;
    Tensor backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                    std::span<double> grad) const override;

    static constexpr double kLeakySlope = 0.1;

private:
    double value(double x) const;
    double slope(double x) const;
    double curvature(double x) const;

    Activation kind_;
};

/// x2 spatial upsampling (bilinear uses half-pixel centers).
class Upsample2x final : public Layer {
public:
    explicit Upsample2x(Upsample kind) : kind_(kind) {}
    Tensor forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const override;
    Tensor backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                    std::span<double> grad) const override;

private:
    Upsample kind_;
};

}  // namespace dipstop
