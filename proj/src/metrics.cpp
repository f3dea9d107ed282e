#include "dipstop/metrics.hpp"

#include <array>
#include <cmath>

#include "dipstop/errors.hpp"

namespace dipstop {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::array<double, kWindow> gaussian_taps()
{
    std::array<double, kWindow> taps{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        taps[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

// Separable valid-mode filtering of one plane.
std::vector<double> filter_valid(std::span<const double> plane, int h, int w, const std::array<double, kWindow>& taps)
{
    const int oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += taps[k] * plane[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, bool clip)
{
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    if (clip) {
        mse = mean_squared_difference(clip01(a).data(), clip01(b).data());
    } else {
        mse = mean_squared_difference(a.data(), b.data());
    }
    if (mse == 0.0) return kPsnrCap;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b)
{
    require_same_shape(a, b, "ssim");
    const int h = a.height(), w = a.width();
    if (h < kWindow || w < kWindow) throw SizeError("ssim: image smaller than the 11x11 window");
    const auto taps = gaussian_taps();
    const double c1 = kK1 * kK1, c2 = kK2 * kK2;

    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        const auto pa = a.plane(c), pb = b.plane(c);
        std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, h, w, taps);
        const auto mu_b = filter_valid(pb, h, w, taps);
        const auto e_aa = filter_valid(aa, h, w, taps);
        const auto e_bb = filter_valid(bb, h, w, taps);
        const auto e_ab = filter_valid(ab, h, w, taps);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
            const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
            acc += num / den;
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / a.channels();
}

QualityReport quality(const Image& estimate, const Image& reference)
{
    const Image e = clip01(estimate);
    const Image r = clip01(reference);
    return {psnr(e, r, false), ssim(e, r)};
}

}  // namespace dipstop
