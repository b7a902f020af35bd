#include "cloudmatch/image.hpp"

#include <algorithm>
#include <cmath>

#include "cloudmatch/errors.hpp"

namespace cloudmatch {

namespace {

void require_nonempty(const Image& img, const char* who) {
    if (img.channels <= 0 || img.height <= 0 || img.width <= 0)
        throw InputError(std::string(who) + ": empty image");
}

/// Mirror an index into [0, n) with the edge sample included, so n = 1 works.
int mirror_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

} // namespace

Image::Image(int c, int h, int w, double fill)
    : channels(c), height(h), width(w),
      data(static_cast<std::size_t>(c) * h * w, fill) {}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    require_nonempty(img, "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw ContractError("resize_bilinear: output must be >= 1x1");
    Image out(img.channels, out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
                const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image resize_nearest(const Image& img, int out_h, int out_w) {
    require_nonempty(img, "resize_nearest");
    if (out_h < 1 || out_w < 1) throw ContractError("resize_nearest: output must be >= 1x1");
    Image out(img.channels, out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * img.height / out_h), img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * img.width / out_w), img.width - 1);
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = img.at(c, sy, sx);
        }
    }
    return out;
}

Image reflect_pad_to(const Image& img, int min_h, int min_w) {
    require_nonempty(img, "reflect_pad_to");
    const int h = std::max(img.height, min_h);
    const int w = std::max(img.width, min_w);
    if (h == img.height && w == img.width) return img;
    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y) {
            const int sy = mirror_index(y, img.height);
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = img.at(c, sy, mirror_index(x, img.width));
        }
    return out;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
    require_nonempty(img, "crop");
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > img.height || x0 + w > img.width)
        throw ContractError("crop: window out of bounds");
    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

Image hflip(const Image& img) {
    require_nonempty(img, "hflip");
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

Image to_grayscale(const Image& img) {
    require_nonempty(img, "to_grayscale");
    Image out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double g;
            if (img.channels >= 3)
                g = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
            else
                g = img.at(0, y, x);
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = g;
        }
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    require_nonempty(img, "gaussian_blur");
    if (sigma <= 0.0) throw ContractError("gaussian_blur: sigma must be positive");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (double& k : kernel) k /= norm;

    Image tmp(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * img.at(c, y, mirror_index(x + i, img.width));
                tmp.at(c, y, x) = acc;
            }
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * tmp.at(c, mirror_index(y + i, img.height), x);
                out.at(c, y, x) = acc;
            }
    return out;
}

Tensor to_tensor(const Image& img, bool requires_grad) {
    require_nonempty(img, "to_tensor");
    return Tensor::from_data({img.channels, img.height, img.width}, img.data, requires_grad);
}

Image from_tensor(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() != 3) throw DimensionError("from_tensor: expected [C,H,W], got " + shape_to_string(s));
    Image out(s[0], s[1], s[2]);
    auto v = t.values();
    out.data.assign(v.begin(), v.end());
    return out;
}

} // namespace cloudmatch
