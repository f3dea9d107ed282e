#include "dipstop/image.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dipstop/errors.hpp"

namespace dipstop {

Image::Image(int height, int width, int channels, double fill)
    : Image(Shape{height, width, channels}, fill)
{
}

Image::Image(Shape shape, double fill) : shape_(shape)
{
    if (shape.height < kMinSide || shape.width < kMinSide) {
        throw SizeError("image must be at least 8x8, got " + std::to_string(shape.height) + "x" +
                        std::to_string(shape.width));
    }
    if (shape.channels != 1 && shape.channels != 3) {
        throw SizeError("image must have 1 or 3 channels, got " + std::to_string(shape.channels));
    }
    data_.assign(shape.size(), fill);
}

std::span<double> Image::plane(int c)
{
    return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                            shape_.plane_size());
}

std::span<const double> Image::plane(int c) const
{
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                                  shape_.plane_size());
}

Image& Image::operator+=(const Image& other)
{
    require_same_shape(*this, other, "operator+=");
    std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::plus<>{});
    return *this;
}

Image& Image::operator-=(const Image& other)
{
    require_same_shape(*this, other, "operator-=");
    std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::minus<>{});
    return *this;
}

Image& Image::operator*=(double s)
{
    for (double& v : data_) v *= s;
    return *this;
}

Image operator+(Image a, const Image& b) { return a += b; }
Image operator-(Image a, const Image& b) { return a -= b; }
Image operator*(double s, Image a) { return a *= s; }

void require_same_shape(const Image& a, const Image& b, const char* what)
{
    if (!a.same_shape(b)) {
        const auto& s = a.shape();
        const auto& t = b.shape();
        throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(s.height) + "x" +
                         std::to_string(s.width) + "x" + std::to_string(s.channels) + " vs " +
                         std::to_string(t.height) + "x" + std::to_string(t.width) + "x" +
                         std::to_string(t.channels));
    }
}

Image clip01(Image img)
{
    for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

double dot(const Image& a, const Image& b)
{
    require_same_shape(a, b, "dot");
    const auto x = a.data();
    const auto y = b.data();
    return std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
}

double mean(const Image& img)
{
    const auto d = img.data();
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double mean_squared_difference(std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace dipstop
