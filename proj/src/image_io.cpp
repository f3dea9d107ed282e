#include "dipstop/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dipstop/errors.hpp"

namespace dipstop {

namespace {

std::string lower_extension(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext;
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

unsigned to_code(double v, unsigned maxval)
{
    return static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

// Builds an image from interleaved samples.
Image from_interleaved(const std::vector<unsigned>& samples, int h, int w, int stored_channels, int keep_channels,
                       unsigned maxval)
{
    Image img(h, w, keep_channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < keep_channels; ++c)
                img.at(c, y, x) =
                    samples[(static_cast<std::size_t>(y) * w + x) * stored_channels + c] / static_cast<double>(maxval);
    return img;
}

Image read_png(const std::filesystem::path& path)
{
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng: cannot create info struct");
    }
    std::vector<unsigned> samples;
    std::vector<unsigned char> buffer;
    std::vector<png_bytep> rows;
    int h = 0, w = 0, stored = 0, bits = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path.string() + "' is not a readable PNG");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    bits = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (bits < 8) bits = 8;
    if (bits == 16) png_set_swap(png);  // host order on little-endian
    png_read_update_info(png, info);
    h = static_cast<int>(png_get_image_height(png, info));
    w = static_cast<int>(png_get_image_width(png, info));
    stored = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    samples.resize(static_cast<std::size_t>(h) * w * stored);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bits == 16) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            samples[i] = v;
        } else {
            samples[i] = buffer[i];
        }
    }
    const int keep = stored >= 3 ? 3 : 1;
    return from_interleaved(samples, h, w, stored, keep, bits == 16 ? 65535u : 255u);
}

void write_png(const std::filesystem::path& path, const Image& img, int bits)
{
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng: cannot create info struct");
    }
    const int h = img.height(), w = img.width(), ch = img.channels();
    const unsigned maxval = bits == 16 ? 65535u : 255u;
    const int bytes = bits / 8;
    std::vector<unsigned char> buffer(static_cast<std::size_t>(h) * w * ch * bytes);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const unsigned code = to_code(img.at(c, y, x), maxval);
                const std::size_t i = ((static_cast<std::size_t>(y) * w + x) * ch + c) * bytes;
                if (bytes == 2) {
                    buffer[i] = static_cast<unsigned char>(code >> 8);
                    buffer[i + 1] = static_cast<unsigned char>(code & 0xff);
                } else {
                    buffer[i] = static_cast<unsigned char>(code);
                }
            }
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * ch * bytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, bits, ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in)
{
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(in, rest);
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

Image read_pnm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    const std::string magic = pnm_token(in);
    if (magic != "P5" && magic != "P6") throw IoError("'" + path.string() + "': only binary P5/P6 is supported");
    int w = 0, h = 0;
    unsigned maxval = 0;
    try {
        w = std::stoi(pnm_token(in));
        h = std::stoi(pnm_token(in));
        maxval = static_cast<unsigned>(std::stoul(pnm_token(in)));
    } catch (const std::exception&) {
        throw IoError("'" + path.string() + "': malformed PNM header");
    }
    if (maxval == 0 || maxval > 65535) throw IoError("'" + path.string() + "': bad maxval");
    const int ch = magic == "P6" ? 3 : 1;
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * ch * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError("'" + path.string() + "': truncated");
    std::vector<unsigned> samples(static_cast<std::size_t>(w) * h * ch);
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = bytes == 2 ? (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
    return from_interleaved(samples, h, w, ch, ch, maxval);
}

void write_pnm(const std::filesystem::path& path, const Image& img, int bits)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const unsigned maxval = bits == 16 ? 65535u : 255u;
    const int ch = img.channels();
    out << (ch == 3 ? "P6" : "P5") << "\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < ch; ++c) {
                const unsigned code = to_code(img.at(c, y, x), maxval);
                if (bits == 16) out.put(static_cast<char>(code >> 8));
                out.put(static_cast<char>(code & 0xff));
            }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

Image read_image(const std::filesystem::path& path)
{
    const std::string ext = lower_extension(path);
    try {
        if (ext == ".png") return read_png(path);
        if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
    } catch (const SizeError& e) {
        throw IoError("'" + path.string() + "': " + e.what());
    }
    throw IoError("unsupported image format '" + ext + "'");
}

void write_image(const std::filesystem::path& path, const Image& img, int bit_depth)
{
    if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("bit depth must be 8 or 16");
    const std::string ext = lower_extension(path);
    if (ext == ".png") return write_png(path, img, bit_depth);
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
        if ((ext == ".pgm" && img.channels() != 1) || (ext == ".ppm" && img.channels() != 3))
            throw IoError("channel count does not match '" + ext + "'");
        return write_pnm(path, img, bit_depth);
    }
    throw IoError("unsupported image format '" + ext + "'");
}

}  // namespace dipstop
