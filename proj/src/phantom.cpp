#include "dipstop/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dipstop/errors.hpp"
#include "dipstop/rng.hpp"

namespace dipstop {

namespace {

void fill_gradient(Image& img)
{
    const int w = img.width();
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < w; ++x) img.at(c, y, x) = static_cast<double>(x) / (w - 1);
}

void fill_checkerboard(Image& img)
{
    const int block = std::max(2, std::min(img.height(), img.width()) / 8);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) img.at(c, y, x) = ((y / block + x / block) % 2) ? 1.0 : 0.0;
}

// Low-frequency shading in [lo, hi].
void fill_background(Image& img, Rng& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double px = phase(rng), py = phase(rng);
    const double h = img.height(), w = img.width();
    for (int c = 0; c < img.channels(); ++c) {
        const double tint = phase(rng) / (2.0 * std::numbers::pi) * 0.1;
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const double s = 0.5 + 0.25 * std::sin(std::numbers::pi * x / w + px) +
                                 0.25 * std::cos(std::numbers::pi * y / h + py);
                img.at(c, y, x) = std::clamp(lo + (hi - lo) * s + tint, 0.0, 1.0);
            }
        }
    }
}

void fill_disks(Image& img, Rng& rng)
{
    fill_background(img, rng, 0.25, 0.75);
    const int h = img.height(), w = img.width();
    const double side = std::min(h, w);
    const int count = std::max(4, h * w / 300);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < count; ++k) {
        const double cy = unit(rng) * h;
        const double cx = unit(rng) * w;
        const double radius = side * (0.06 + 0.14 * unit(rng));
        const bool striped = unit(rng) < 0.5;
        const double angle = unit(rng) * std::numbers::pi;
        const double period = 2.5 + 2.5 * unit(rng);
        double level[3];
        for (double& l : level) l = unit(rng);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                if (dx * dx + dy * dy > radius * radius) continue;
                for (int c = 0; c < img.channels(); ++c) {
                    double v = level[c];
                    if (striped) {
                        const double t = dx * std::cos(angle) + dy * std::sin(angle);
                        v = 0.5 + 0.45 * std::sin(2.0 * std::numbers::pi * t / period) * (2.0 * level[c] - 1.0);
                    }
                    img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
}

void fill_text_like(Image& img, Rng& rng)
{
    fill_background(img, rng, 0.6, 0.95);
    constexpr int kGlyphW = 5, kGlyphH = 7, kGapX = 2, kGapY = 4;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double ink = 0.05 + 0.15 * unit(rng);
    const int h = img.height(), w = img.width();
    for (int top = 2; top + kGlyphH <= h - 1; top += kGlyphH + kGapY) {
        for (int left = 2; left + kGlyphW <= w - 1; left += kGlyphW + kGapX) {
            if (unit(rng) < 0.15) continue;  // word gap
            // Each glyph is a union of random strokes on a 5x7 cell.
            const int strokes = 2 + static_cast<int>(unit(rng) * 3);
            for (int s = 0; s < strokes; ++s) {
                const int kind = static_cast<int>(unit(rng) * 4);
                const int r = static_cast<int>(unit(rng) * kGlyphH);
                const int q = static_cast<int>(unit(rng) * kGlyphW);
                for (int t = 0; t < std::max(kGlyphW, kGlyphH); ++t) {
                    int y = top, x = left;
                    switch (kind) {
                    case 0: y += r; x += t; break;                 // horizontal
                    case 1: y += t; x += q; break;                 // vertical
                    case 2: y += t; x += t * kGlyphW / kGlyphH; break;  // diagonal
                    default: y += t; x += kGlyphW - 1 - t * kGlyphW / kGlyphH; break;
                    }
                    if (y >= top + kGlyphH || x < left || x >= left + kGlyphW) continue;
                    for (int c = 0; c < img.channels(); ++c) img.at(c, y, x) = ink;
                }
            }
        }
    }
}

}  // namespace

std::string to_string(PhantomKind kind)
{
    switch (kind) {
    case PhantomKind::gradient: return "gradient";
    case PhantomKind::checkerboard: return "checkerboard";
    case PhantomKind::disks: return "disks";
    case PhantomKind::text_like: return "text-like";
    }
    return "unknown";
}

PhantomKind parse_phantom_kind(std::string_view name)
{
    if (name == "gradient") return PhantomKind::gradient;
    if (name == "checkerboard") return PhantomKind::checkerboard;
    if (name == "disks") return PhantomKind::disks;
    if (name == "text-like" || name == "text_like") return PhantomKind::text_like;
    throw ArgumentError("unknown phantom kind '" + std::string(name) + "'");
}

Image generate_phantom(PhantomKind kind, int h, int w, int c, std::uint64_t seed)
{
    Image img(h, w, c);
    Rng rng = make_rng(seed, stream::kPhantom, static_cast<std::uint64_t>(kind));
    switch (kind) {
    case PhantomKind::gradient: fill_gradient(img); break;
    case PhantomKind::checkerboard: fill_checkerboard(img); break;
    case PhantomKind::disks: fill_disks(img, rng); break;
    case PhantomKind::text_like: fill_text_like(img, rng); break;
    }
    return img;
}

}  // namespace dipstop
