#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dipstop {

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense planar raster (channel-major, then row-major). Reference images lie
/// in [0,1]; noisy observations and network outputs are not clamped.
class Image {
public:
    static constexpr int kMinSide = 8;

    Image() = default;
    /// Throws SizeError unless height, width >= 8 and channels is 1 or 3.
    Image(int height, int width, int channels, double fill = 0.0);
    explicit Image(Shape shape, double fill = 0.0);

    static Image zeros_like(const Image& other) { return Image(other.shape()); }

    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> plane(int c);
    std::span<const double> plane(int c) const;

    bool same_shape(const Image& other) const { return shape_ == other.shape_; }

    Image& operator+=(const Image& other);
    Image& operator-=(const Image& other);
    Image& operator*=(double s);

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int c, int y, int x) const
    {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<double> data_;
};

Image operator+(Image a, const Image& b);
Image operator-(Image a, const Image& b);
Image operator*(double s, Image a);

/// Throws ShapeError when the shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

/// Elementwise clamp to [0,1].
Image clip01(Image img);

double dot(const Image& a, const Image& b);
double mean(const Image& img);
/// Mean over all elements of (a - b)^2. No shape check.
double mean_squared_difference(std::span<const double> a, std::span<const double> b);

}  // namespace dipstop
