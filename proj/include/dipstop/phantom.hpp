#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dipstop/image.hpp"

namespace dipstop {

enum class PhantomKind { gradient, checkerboard, disks, text_like };

std::string to_string(PhantomKind kind);
/// Accepts "gradient", "checkerboard", "disks", "text-like" (or "text_like").
PhantomKind parse_phantom_kind(std::string_view name);

/// Synthetic clean image with values in [0,1], deterministic in all arguments.
///
///  - gradient: every row ramps linearly from 0 (left) to 1 (right).
///  - checkerboard: 0/1 blocks of side max(2, min(h, w) / 8), top-left block 0.
///  - disks: smooth shaded background with random flat and striped disks.
///  - text_like: smooth background with rows of thin stroke glyphs.
///
/// Throws SizeError when h or w is below 8 or c is not 1 or 3.
Image generate_phantom(PhantomKind kind, int h, int w, int c, std::uint64_t seed);

}  // namespace dipstop
