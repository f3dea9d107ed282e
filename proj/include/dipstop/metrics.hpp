#pragma once

#include <limits>

#include "dipstop/image.hpp"

namespace dipstop {

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrCap = std::numeric_limits<double>::infinity();

struct QualityReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// 10 log10(1 / MSE) with peak 1. When `clip` is set both inputs are clamped
/// to [0,1] first. Throws ShapeError on mismatched shapes.
double psnr(const Image& a, const Image& b, bool clip = true);

/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, evaluated over the valid region of each channel and
/// averaged over channels. Throws SizeError if a side is below 11.
double ssim(const Image& a, const Image& b);

/// PSNR and SSIM of `estimate` against `reference`, both clipped to [0,1].
QualityReport quality(const Image& estimate, const Image& reference);

}  // namespace dipstop
