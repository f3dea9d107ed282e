#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dipstop/image.hpp"

namespace dipstop {

/// Activation tensor with layout [channel][batch][row][col]. Keeping the batch
/// inside the channel lets a convolution treat all batch items as one GEMM.
struct Tensor {
    int channels = 0;
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int b, int h, int w, double fill = 0.0)
        : channels(c), batch(b), height(h), width(w), data(static_cast<std::size_t>(c) * b * h * w, fill)
    {
    }

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    /// Elements per channel (all batch items).
    std::size_t row() const { return plane() * batch; }
    std::size_t size() const { return data.size(); }

    double* plane_ptr(int c, int b) { return data.data() + static_cast<std::size_t>(c) * row() + b * plane(); }
    const double* plane_ptr(int c, int b) const
    {
        return data.data() + static_cast<std::size_t>(c) * row() + b * plane();
    }

    bool same_dims(const Tensor& o) const
    {
        return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
    }
};

/// Packs images (all of the same shape) as the batch items of one tensor.
Tensor pack(std::span<const Image* const> items);
Tensor pack(const Image& a);
Tensor pack(const Image& a, const Image& b);
/// Extracts batch item `b` as an image.
Image unpack(const Tensor& t, int b);

}  // namespace dipstop
