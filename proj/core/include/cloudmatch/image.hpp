#pragma once

#include <cstdint>
#include <vector>

#include "cloudmatch/tensor.hpp"

namespace cloudmatch {

/// Dense raster in [C,H,W] layout with double storage. Pixel data loaded from
/// 8-bit files lives in [0,255]; normalized tensors are built via to_tensor.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0);

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    bool same_shape(const Image& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
};

/// Bilinear resample with half-pixel centers. Every output value is a convex
/// combination of input values, so the output range never leaves the input range.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Nearest-neighbor resample, for label masks.
Image resize_nearest(const Image& img, int out_h, int out_w);

/// Pads on the bottom/right by mirroring (edge pixel included) until the
/// image is at least min_h x min_w.
Image reflect_pad_to(const Image& img, int min_h, int min_w);

Image crop(const Image& img, int y0, int x0, int h, int w);
Image hflip(const Image& img);

/// Luma grayscale (0.299 R + 0.587 G + 0.114 B), replicated to all channels.
Image to_grayscale(const Image& img);

/// Separable Gaussian blur, kernel radius ceil(3*sigma), mirrored borders.
Image gaussian_blur(const Image& img, double sigma);

Tensor to_tensor(const Image& img, bool requires_grad = false);
Image from_tensor(const Tensor& t);

} // namespace cloudmatch
