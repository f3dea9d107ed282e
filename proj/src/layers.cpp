#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dipstop {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

ConstRowMap as_matrix(const Tensor& t) { return ConstRowMap(t.data.data(), t.channels, t.row()); }
RowMap as_matrix(Tensor& t) { return RowMap(t.data.data(), t.channels, t.row()); }

}  // namespace

int mirror_index(int i, int n)
{
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in, int out, int kernel, int stride) : in_(in), out_(out), kernel_(kernel), stride_(stride) {}

std::size_t Conv2d::num_params() const
{
    return static_cast<std::size_t>(out_) * in_ * kernel_ * kernel_ + out_;
}

void Conv2d::init(std::span<double> params, Rng& rng) const
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * kernel_ * kernel_));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& p : params) p = dist(rng);
}

void Conv2d::build_gather(LayerCache& cache, int h, int w) const
{
    if (cache.gather_h == h && cache.gather_w == w) return;
    const int pad = (kernel_ - 1) / 2;
    const int oh = (h + 2 * pad - kernel_) / stride_ + 1;
    const int ow = (w + 2 * pad - kernel_) / stride_ + 1;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    cache.gather.resize(kernel_ * kernel_ * out_plane);
    for (int ky = 0; ky < kernel_; ++ky)
        for (int kx = 0; kx < kernel_; ++kx) {
            int* row = cache.gather.data() + (ky * kernel_ + kx) * out_plane;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = mirror_index(oy * stride_ + ky - pad, h);
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = mirror_index(ox * stride_ + kx - pad, w);
                    row[oy * ow + ox] = iy * w + ix;
                }
            }
        }
    cache.gather_h = h;
    cache.gather_w = w;
    cache.out_h = oh;
    cache.out_w = ow;
}

Tensor Conv2d::forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const
{
    const int kk = kernel_ * kernel_;
    ConstRowMap weights(params.data(), out_, in_ * kk);
    const double* bias = params.data() + static_cast<std::size_t>(out_) * in_ * kk;
    const int batch = x.batch;

    Tensor out;
    if (pointwise()) {
        cache.input = x;
        out = Tensor(out_, batch, x.height, x.width);
        as_matrix(out).noalias() = weights * as_matrix(cache.input);
    } else {
        build_gather(cache, x.height, x.width);
        const int oh = cache.out_h, ow = cache.out_w;
        const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
        cache.col.resize(in_ * kk, static_cast<Eigen::Index>(batch * out_plane));
        for (int c = 0; c < in_; ++c)
            for (int k = 0; k < kk; ++k) {
                double* dst = cache.col.data() + static_cast<std::size_t>(c * kk + k) * batch * out_plane;
                const int* src_index = cache.gather.data() + k * out_plane;
                for (int b = 0; b < batch; ++b) {
                    const double* src = x.plane_ptr(c, b);
                    double* d = dst + b * out_plane;
                    for (std::size_t p = 0; p < out_plane; ++p) d[p] = src[src_index[p]];
                }
            }
        out = Tensor(out_, batch, oh, ow);
        as_matrix(out).noalias() = weights * cache.col;
    }
    // A tangent direction carries no bias.
    const int biased = mode == PassMode::tangent ? 1 : batch;
    for (int o = 0; o < out_; ++o)
        for (int b = 0; b < biased; ++b) {
            double* p = out.plane_ptr(o, b);
            for (std::size_t i = 0; i < out.plane(); ++i) p[i] += bias[o];
        }
    return out;
}

Tensor Conv2d::backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                        std::span<double> grad) const
{
    const int kk = kernel_ * kernel_;
    ConstRowMap weights(params.data(), out_, in_ * kk);
    RowMap grad_w(grad.data(), out_, in_ * kk);
    double* grad_b = grad.data() + static_cast<std::size_t>(out_) * in_ * kk;
    const auto g_mat = as_matrix(g);
    const int batch = g.batch;

    const int biased = mode == PassMode::tangent ? 1 : batch;
    for (int o = 0; o < out_; ++o)
        for (int b = 0; b < biased; ++b) {
            const double* p = g.plane_ptr(o, b);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.plane(); ++i) acc += p[i];
            grad_b[o] += acc;
        }

    if (pointwise()) {
        grad_w.noalias() += g_mat * as_matrix(cache.input).transpose();
        Tensor gx(in_, batch, g.height, g.width);
        as_matrix(gx).noalias() = weights.transpose() * g_mat;
        return gx;
    }

    grad_w.noalias() += g_mat * cache.col.transpose();
    RowMatrix gcol = weights.transpose() * g_mat;
    Tensor gx(in_, batch, cache.gather_h, cache.gather_w);
    const std::size_t out_plane = static_cast<std::size_t>(cache.out_h) * cache.out_w;
    for (int c = 0; c < in_; ++c)
        for (int k = 0; k < kk; ++k) {
            const double* src = gcol.data() + static_cast<std::size_t>(c * kk + k) * batch * out_plane;
            const int* dst_index = cache.gather.data() + k * out_plane;
            for (int b = 0; b < batch; ++b) {
                double* dst = gx.plane_ptr(c, b);
                const double* s = src + b * out_plane;
                for (std::size_t p = 0; p < out_plane; ++p) dst[dst_index[p]] += s[p];
            }
        }
    return gx;
}

// ---------------------------------------------------------------- BatchNorm

void BatchNorm::init(std::span<double> params, Rng&) const
{
    std::fill(params.begin(), params.begin() + channels_, 1.0);
    std::fill(params.begin() + channels_, params.end(), 0.0);
}

Tensor BatchNorm::forward(std::span<const double> params, const Tensor& x, PassMode mode, LayerCache& cache) const
{
    const double* gamma = params.data();
    const double* beta = params.data() + channels_;
    const std::size_t n = x.plane();
    const int primal_items = mode == PassMode::tangent ? 1 : x.batch;
    Tensor out(x.channels, x.batch, x.height, x.width);
    cache.aux = Tensor(x.channels, x.batch, x.height, x.width);
    cache.stats.assign(static_cast<std::size_t>(x.channels) * x.batch, 0.0);
    if (mode == PassMode::tangent) cache.input = x;

    for (int c = 0; c < x.channels; ++c) {
        for (int b = 0; b < primal_items; ++b) {
            const double* src = x.plane_ptr(c, b);
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += src[i];
            mu /= n;
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
            var /= n;
            const double inv = 1.0 / std::sqrt(var + kEps);
            double* xhat = cache.aux.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            for (std::size_t i = 0; i < n; ++i) {
                xhat[i] = (src[i] - mu) * inv;
                dst[i] = gamma[c] * xhat[i] + beta[c];
            }
            cache.stats[static_cast<std::size_t>(c) * x.batch + b] = inv;
        }
        if (mode == PassMode::tangent) {
            // d xhat = (dt - mean(dt) - xhat * mean(xhat * dt)) / s
            const double inv = cache.stats[static_cast<std::size_t>(c) * x.batch];
            const double* xhat = cache.aux.plane_ptr(c, 0);
            const double* t = x.plane_ptr(c, 1);
            double mean_t = 0.0, mean_xt = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mean_t += t[i];
                mean_xt += xhat[i] * t[i];
            }
            mean_t /= n;
            mean_xt /= n;
            cache.stats[static_cast<std::size_t>(c) * x.batch + 1] = mean_xt;
            double* that = cache.aux.plane_ptr(c, 1);
            double* dst = out.plane_ptr(c, 1);
            for (std::size_t i = 0; i < n; ++i) {
                that[i] = (t[i] - mean_t - xhat[i] * mean_xt) * inv;
                dst[i] = gamma[c] * that[i];
            }
        }
    }
    return out;
}

namespace {

// out = inv * (u - mean(u) - xhat * mean(xhat * u)), the adjoint of the
// normalization Jacobian (it is symmetric).
void normalize_adjoint(const double* u, const double* xhat, double inv, std::size_t n, double* out)
{
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        m1 += u[i];
        m2 += u[i] * xhat[i];
    }
    m1 /= n;
    m2 /= n;
    for (std::size_t i = 0; i < n; ++i) out[i] += inv * (u[i] - m1 - xhat[i] * m2);
}

}  // namespace

Tensor BatchNorm::backward(std::span<const double> params, const Tensor& g, PassMode mode, const LayerCache& cache,
                           std::span<double> grad) const
{
    const double* gamma = params.data();
    double* grad_gamma = grad.data();
    double* grad_beta = grad.data() + channels_;
    const std::size_t n = g.plane();
    Tensor gx(g.channels, g.batch, g.height, g.width);
    std::vector<double> scratch(n);

    for (int c = 0; c < g.channels; ++c) {
        if (mode == PassMode::independent) {
            for (int b = 0; b < g.batch; ++b) {
                const double* gy = g.plane_ptr(c, b);
                const double* xhat = cache.aux.plane_ptr(c, b);
                const double inv = cache.stats[static_cast<std::size_t>(c) * g.batch + b];
                double sg = 0.0, sgx = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    sg += gy[i];
                    sgx += gy[i] * xhat[i];
                    scratch[i] = gamma[c] * gy[i];
                }
                grad_gamma[c] += sgx;
                grad_beta[c] += sg;
                normalize_adjoint(scratch.data(), xhat, inv, n, gx.plane_ptr(c, b));
            }
            continue;
        }

        const double* gy = g.plane_ptr(c, 0);
        const double* gt = g.plane_ptr(c, 1);
        const double* xhat = cache.aux.plane_ptr(c, 0);
        const double* that = cache.aux.plane_ptr(c, 1);
        const double* t = cache.input.plane_ptr(c, 1);
        const double inv = cache.stats[static_cast<std::size_t>(c) * 2];
        const double mean_xt = cache.stats[static_cast<std::size_t>(c) * 2 + 1];

        double sg = 0.0, sgx = 0.0, sgt = 0.0, s_gx = 0.0, s_gth = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sg += gy[i];
            sgx += gy[i] * xhat[i];
            sgt += gt[i] * that[i];
            const double big_g = gamma[c] * gt[i];
            s_gx += big_g * xhat[i];
            s_gth += big_g * that[i];
        }
        grad_gamma[c] += sgx + sgt;
        grad_beta[c] += sg;

        // Tangent input: same adjoint as the primal path.
        for (std::size_t i = 0; i < n; ++i) scratch[i] = gamma[c] * gt[i];
        normalize_adjoint(scratch.data(), xhat, inv, n, gx.plane_ptr(c, 1));

        // Primal input: direct path plus the dependence of the tangent on xhat and s.
        for (std::size_t i = 0; i < n; ++i) {
            scratch[i] = gamma[c] * gy[i] - mean_xt * inv * gamma[c] * gt[i] - inv * s_gx / n * t[i];
        }
        double* gxp = gx.plane_ptr(c, 0);
        normalize_adjoint(scratch.data(), xhat, inv, n, gxp);
        const double grad_s = -inv * s_gth;
        for (std::size_t i = 0; i < n; ++i) gxp[i] += grad_s * xhat[i] / n;
    }
    return gx;
}

// ---------------------------------------------------------------- Act

double Act::value(double x) const
{
    if (kind_ == Activation::leaky_relu) return x > 0.0 ? x : kLeakySlope * x;
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

double Act::slope(double x) const
{
    if (kind_ == Activation::leaky_relu) return x > 0.0 ? 1.0 : kLeakySlope;
    return 1.0 / (1.0 + std::exp(-x));
}

double Act::curvature(double x) const
{
    if (kind_ == Activation::leaky_relu) return 0.0;
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 - s);
}

Tensor Act::forward(std::span<const double>, const Tensor& x, PassMode mode, LayerCache& cache) const
{
    cache.input = x;
    Tensor out(x.channels, x.batch, x.height, x.width);
    const std::size_t n = x.plane();
    for (int c = 0; c < x.channels; ++c) {
        if (mode == PassMode::independent) {
            for (int b = 0; b < x.batch; ++b) {
                const double* src = x.plane_ptr(c, b);
                double* dst = out.plane_ptr(c, b);
                for (std::size_t i = 0; i < n; ++i) dst[i] = value(src[i]);
            }
        } else {
            const double* src = x.plane_ptr(c, 0);
            const double* t = x.plane_ptr(c, 1);
            double* dst = out.plane_ptr(c, 0);
            double* dt = out.plane_ptr(c, 1);
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] = value(src[i]);
                dt[i] = slope(src[i]) * t[i];
            }
        }
    }
    return out;
}

Tensor Act::backward(std::span<const double>, const Tensor& g, PassMode mode, const LayerCache& cache,
                     std::span<double>) const
{
    const Tensor& x = cache.input;
    Tensor gx(g.channels, g.batch, g.height, g.width);
    const std::size_t n = g.plane();
    for (int c = 0; c < g.channels; ++c) {
        if (mode == PassMode::independent) {
            for (int b = 0; b < g.batch; ++b) {
                const double* src = x.plane_ptr(c, b);
                const double* gy = g.plane_ptr(c, b);
                double* dst = gx.plane_ptr(c, b);
                for (std::size_t i = 0; i < n; ++i) dst[i] = slope(src[i]) * gy[i];
            }
        } else {
            const double* src = x.plane_ptr(c, 0);
            const double* t = x.plane_ptr(c, 1);
            const double* gy = g.plane_ptr(c, 0);
            const double* gt = g.plane_ptr(c, 1);
            double* dx = gx.plane_ptr(c, 0);
            double* dt = gx.plane_ptr(c, 1);
            for (std::size_t i = 0; i < n; ++i) {
                const double s = slope(src[i]);
                dx[i] = s * gy[i] + curvature(src[i]) * t[i] * gt[i];
                dt[i] = s * gt[i];
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------- Upsample2x

namespace {

struct Tap {
    int i0, i1;
    double w0, w1;
};

std::vector<Tap> bilinear_taps(int n)
{
    std::vector<Tap> taps(2 * n);
    for (int o = 0; o < 2 * n; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        if (src < 0.0) src = 0.0;
        const int i0 = std::min(static_cast<int>(src), n - 1);
        const int i1 = std::min(i0 + 1, n - 1);
        const double w1 = src - i0;
        taps[o] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
}

}  // namespace

Tensor Upsample2x::forward(std::span<const double>, const Tensor& x, PassMode, LayerCache&) const
{
    const int h = x.height, w = x.width;
    Tensor out(x.channels, x.batch, 2 * h, 2 * w);
    const auto ty = bilinear_taps(h);
    const auto tx = bilinear_taps(w);
    std::vector<double> rows(static_cast<std::size_t>(h) * 2 * w);
    for (int c = 0; c < x.channels; ++c)
        for (int b = 0; b < x.batch; ++b) {
            const double* src = x.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            if (kind_ == Upsample::nearest) {
                for (int y = 0; y < 2 * h; ++y)
                    for (int xo = 0; xo < 2 * w; ++xo) dst[y * 2 * w + xo] = src[(y / 2) * w + xo / 2];
                continue;
            }
            for (int y = 0; y < h; ++y)
                for (int xo = 0; xo < 2 * w; ++xo)
                    rows[y * 2 * w + xo] = tx[xo].w0 * src[y * w + tx[xo].i0] + tx[xo].w1 * src[y * w + tx[xo].i1];
            for (int yo = 0; yo < 2 * h; ++yo)
                for (int xo = 0; xo < 2 * w; ++xo)
                    dst[yo * 2 * w + xo] =
                        ty[yo].w0 * rows[ty[yo].i0 * 2 * w + xo] + ty[yo].w1 * rows[ty[yo].i1 * 2 * w + xo];
        }
    return out;
}

Tensor Upsample2x::backward(std::span<const double>, const Tensor& g, PassMode, const LayerCache&,
                            std::span<double>) const
{
    const int h = g.height / 2, w = g.width / 2;
    Tensor gx(g.channels, g.batch, h, w);
    const auto ty = bilinear_taps(h);
    const auto tx = bilinear_taps(w);
    std::vector<double> rows(static_cast<std::size_t>(h) * 2 * w);
    for (int c = 0; c < g.channels; ++c)
        for (int b = 0; b < g.batch; ++b) {
            const double* src = g.plane_ptr(c, b);
            double* dst = gx.plane_ptr(c, b);
            if (kind_ == Upsample::nearest) {
                for (int y = 0; y < 2 * h; ++y)
                    for (int xo = 0; xo < 2 * w; ++xo) dst[(y / 2) * w + xo / 2] += src[y * 2 * w + xo];
                continue;
            }
            std::fill(rows.begin(), rows.end(), 0.0);
            for (int yo = 0; yo < 2 * h; ++yo)
                for (int xo = 0; xo < 2 * w; ++xo) {
                    const double v = src[yo * 2 * w + xo];
                    rows[ty[yo].i0 * 2 * w + xo] += ty[yo].w0 * v;
                    rows[ty[yo].i1 * 2 * w + xo] += ty[yo].w1 * v;
                }
            for (int y = 0; y < h; ++y)
                for (int xo = 0; xo < 2 * w; ++xo) {
                    const double v = rows[y * 2 * w + xo];
                    dst[y * w + tx[xo].i0] += tx[xo].w0 * v;
                    dst[y * w + tx[xo].i1] += tx[xo].w1 * v;
                }
        }
    return gx;
}

}  // namespace dipstop
