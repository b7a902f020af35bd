#include "cloudmatch/augment.hpp"

#include <algorithm>
#include <cmath>

#include "cloudmatch/errors.hpp"

namespace cloudmatch {

namespace {

Image scale_pad(const Image& img, double scale, int patch, bool nearest) {
    const int sh = std::max(1, static_cast<int>(std::llround(img.height * scale)));
    const int sw = std::max(1, static_cast<int>(std::llround(img.width * scale)));
    Image scaled = nearest ? resize_nearest(img, sh, sw) : resize_bilinear(img, sh, sw);
    return reflect_pad_to(scaled, patch, patch);
}

void clamp_pixels(Image& img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 255.0);
}

} // namespace

WeakView weak_augment(const Image& img, Rng& rng, const AugConfig& cfg) {
    if (img.height <= 0 || img.width <= 0 || img.channels <= 0)
        throw InputError("weak_augment: empty image");
    if (cfg.patch_size < 1) throw ContractError("weak_augment: patch_size must be >= 1");

    GeomRecord geom;
    geom.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    Image padded = scale_pad(img, geom.scale, cfg.patch_size, false);
    geom.crop_y = static_cast<int>(rng.uniform_int(padded.height - cfg.patch_size + 1));
    geom.crop_x = static_cast<int>(rng.uniform_int(padded.width - cfg.patch_size + 1));
    geom.flip = rng.bernoulli(cfg.flip_prob);

    Image view = crop(padded, geom.crop_y, geom.crop_x, cfg.patch_size, cfg.patch_size);
    if (geom.flip) view = hflip(view);
    return {std::move(view), geom};
}

WeakView weak_augment(const Image& img, std::uint64_t rng_seed, const AugConfig& cfg) {
    Rng rng(rng_seed);
    return weak_augment(img, rng, cfg);
}

Image replay_weak(const Image& img, const GeomRecord& geom, int patch_size, bool nearest) {
    Image padded = scale_pad(img, geom.scale, patch_size, nearest);
    Image view = crop(padded, geom.crop_y, geom.crop_x, patch_size, patch_size);
    return geom.flip ? hflip(view) : view;
}

Image strong_augment(const Image& view, Rng& rng, const AugConfig& cfg) {
    Image out = view;
    if (rng.bernoulli(cfg.jitter_prob)) {
        const double lo = 1.0 - cfg.jitter_intensity;
        const double hi = 1.0 + cfg.jitter_intensity;
        const double brightness = rng.uniform(lo, hi);
        const double contrast = rng.uniform(lo, hi);
        const double saturation = rng.uniform(lo, hi);

        for (double& v : out.data) v *= brightness;
        clamp_pixels(out);

        const Image gray = to_grayscale(out);
        double mean_luma = 0.0;
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) mean_luma += gray.at(0, y, x);
        mean_luma /= out.pixel_count();
        for (double& v : out.data) v = mean_luma + (v - mean_luma) * contrast;
        clamp_pixels(out);

        const Image gray2 = to_grayscale(out);
        for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width; ++x) {
                    const double g = gray2.at(c, y, x);
                    out.at(c, y, x) = g + (out.at(c, y, x) - g) * saturation;
                }
        clamp_pixels(out);
    }
    if (rng.bernoulli(cfg.gray_prob)) out = to_grayscale(out);
    if (rng.bernoulli(cfg.blur_prob)) {
        const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
        out = gaussian_blur(out, sigma);
        clamp_pixels(out);
    }
    return out;
}

Image strong_augment(const Image& view, std::uint64_t rng_seed, const AugConfig& cfg) {
    Rng rng(rng_seed);
    return strong_augment(view, rng, cfg);
}

std::vector<std::uint8_t> RectMask::to_grid(int height, int width) const {
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(height) * width, 0);
    for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x)
            grid[static_cast<std::size_t>(y) * width + x] = 1;
    return grid;
}

RectMask sample_rect_mask(Rng& rng, int h, int w, double area_min, double area_max,
                          double aspect_min, double aspect_max) {
    if (h < 8 || w < 8) throw ContractError("sample_rect_mask: grid must be at least 8x8");
    if (!(0.0 < area_min && area_min <= area_max && area_max <= 1.0))
        throw ContractError("sample_rect_mask: bad area range");
    if (!(0.0 < aspect_min && aspect_min <= aspect_max))
        throw ContractError("sample_rect_mask: bad aspect range");

    const double total = static_cast<double>(h) * w;
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double area = rng.uniform(area_min, area_max);
        // Restrict the aspect draw to ratios whose dimensions fit the grid at
        // this area. Rejecting the area along with an unrealizable aspect
        // would thin out large areas and skew the area distribution.
        const double px = area * total;
        const double r_lo = std::max(aspect_min, px / (static_cast<double>(h) * h));
        const double r_hi = std::min(aspect_max, static_cast<double>(w) * w / px);
        if (r_lo > r_hi) continue;
        const double aspect = rng.uniform(r_lo, r_hi);
        const int rw = static_cast<int>(std::llround(std::sqrt(area * total * aspect)));
        const int rh = static_cast<int>(std::llround(std::sqrt(area * total / aspect)));
        if (rw < 1 || rh < 1 || rw > w || rh > h) continue;
        const double realized_area = rw * rh / total;
        const double realized_aspect = static_cast<double>(rw) / rh;
        if (realized_area < area_min || realized_area > area_max) continue;
        if (realized_aspect < aspect_min || realized_aspect > aspect_max) continue;
        RectMask mask{0, 0, rh, rw};
        mask.y0 = static_cast<int>(rng.uniform_int(h - rh + 1));
        mask.x0 = static_cast<int>(rng.uniform_int(w - rw + 1));
        return mask;
    }
    const int side = std::max(1, std::min({static_cast<int>(std::floor(std::sqrt(area_max * total))),
                                           h, w}));
    RectMask mask{0, 0, side, side};
    mask.y0 = static_cast<int>(rng.uniform_int(h - side + 1));
    mask.x0 = static_cast<int>(rng.uniform_int(w - side + 1));
    return mask;
}

RectMask sample_rect_mask(std::uint64_t rng_seed, int h, int w, double area_min, double area_max,
                          double aspect_min, double aspect_max) {
    Rng rng(rng_seed);
    return sample_rect_mask(rng, h, w, area_min, area_max, aspect_min, aspect_max);
}

Image mix(const Image& inside, const Image& outside, const RectMask& mask) {
    if (!inside.same_shape(outside))
        throw DimensionError("mix: operand shapes differ");
    Image out = outside;
    for (int c = 0; c < inside.channels; ++c)
        for (int y = std::max(0, mask.y0); y < std::min(inside.height, mask.y0 + mask.h); ++y)
            for (int x = std::max(0, mask.x0); x < std::min(inside.width, mask.x0 + mask.w); ++x)
                out.at(c, y, x) = inside.at(c, y, x);
    return out;
}

Tensor mix_values(const Tensor& inside, const Tensor& outside, const RectMask& mask) {
    const Shape& s = inside.shape();
    if (s != outside.shape())
        throw DimensionError("mix_values: shapes " + shape_to_string(s) + " vs " +
                             shape_to_string(outside.shape()) + " differ");
    if (s.size() != 2 && s.size() != 3)
        throw DimensionError("mix_values: expected [H,W] or [C,H,W], got " + shape_to_string(s));
    const int c = s.size() == 3 ? s[0] : 1;
    const int h = s[s.size() - 2];
    const int w = s[s.size() - 1];

    std::vector<double> out(outside.values().begin(), outside.values().end());
    auto in = inside.values();
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int j = 0; j < c; ++j)
        for (int y = std::max(0, mask.y0); y < std::min(h, mask.y0 + mask.h); ++y)
            for (int x = std::max(0, mask.x0); x < std::min(w, mask.x0 + mask.w); ++x) {
                const std::int64_t i = j * hw + static_cast<std::int64_t>(y) * w + x;
                out[i] = in[i];
            }
    return Tensor::from_data(s, std::move(out));
}

ViewBundle make_views(const Image& scene_a, const Image& scene_b, std::uint64_t rng_seed,
                      const AugConfig& cfg) {
    Rng rng(rng_seed);
    ViewBundle bundle;
    bundle.w1a = weak_augment(scene_a, rng, cfg);
    bundle.w2a = weak_augment(scene_a, rng, cfg);
    bundle.wb = weak_augment(scene_b, rng, cfg);
    bundle.s1a = strong_augment(bundle.w1a.view, rng, cfg);
    bundle.s2a = strong_augment(bundle.w2a.view, rng, cfg);
    bundle.sb = strong_augment(bundle.wb.view, rng, cfg);

    const int p = cfg.patch_size;
    bundle.intra_mixed = rng.bernoulli(cfg.intra_mix_prob);
    bundle.m1 = bundle.intra_mixed
                    ? sample_rect_mask(rng, p, p, cfg.rect_area_min, cfg.rect_area_max,
                                       cfg.rect_aspect_min, cfg.rect_aspect_max)
                    : RectMask::full(p, p);
    bundle.inter_mixed = rng.bernoulli(cfg.inter_mix_prob);
    bundle.m2 = bundle.inter_mixed
                    ? sample_rect_mask(rng, p, p, cfg.rect_area_min, cfg.rect_area_max,
                                       cfg.rect_aspect_min, cfg.rect_aspect_max)
                    : RectMask::full(p, p);

    bundle.x_aa = mix(bundle.s1a, bundle.s2a, bundle.m1);
    bundle.x_ab = mix(bundle.s2a, bundle.sb, bundle.m2);
    return bundle;
}

} // namespace cloudmatch
