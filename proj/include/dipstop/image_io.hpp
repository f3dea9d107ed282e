#pragma once

#include <filesystem>

#include "dipstop/image.hpp"

namespace dipstop {

/// Reads PNG (8/16-bit gray, gray+alpha, RGB, RGBA; alpha dropped) or binary
/// PGM/PPM (maxval 255 or 65535). Samples are divided by 2^bits - 1.
/// Throws IoError on unreadable or unsupported files.
Image read_image(const std::filesystem::path& path);

/// Writes by extension: .png, .pgm, .ppm or .pnm. Values are clamped to
/// [0,1] and rounded to the nearest code, so a round trip is exact to half an LSB.
void write_image(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

}  // namespace dipstop
