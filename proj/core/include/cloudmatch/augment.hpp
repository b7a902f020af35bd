#pragma once

#include <cstdint>
#include <vector>

#include "cloudmatch/image.hpp"
#include "cloudmatch/rng.hpp"
#include "cloudmatch/tensor.hpp"

namespace cloudmatch {

struct AugConfig {
    int patch_size = 96;
    double scale_min = 0.5;
    double scale_max = 2.0;
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double jitter_intensity = 0.5;
    double gray_prob = 0.2;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double rect_area_min = 0.02;
    double rect_area_max = 0.4;
    double rect_aspect_min = 0.3;
    double rect_aspect_max = 1.0 / 0.3;
    double intra_mix_prob = 0.8;
    double inter_mix_prob = 0.5;
};

/// Geometry of one weak view, sufficient to replay the identical crop on a
/// label mask (with nearest-neighbor resampling).
struct GeomRecord {
    double scale = 1.0;
    int crop_y = 0;
    int crop_x = 0;
    bool flip = false;
};

struct WeakView {
    Image view;
    GeomRecord geom;
};

/// Weak augmentation: random rescale, pad-reflect up to patch size if needed,
/// random crop, random horizontal flip. Consumes, in order: scale, crop_y,
/// crop_x, flip coin.
WeakView weak_augment(const Image& img, Rng& rng, const AugConfig& cfg);
WeakView weak_augment(const Image& img, std::uint64_t rng_seed, const AugConfig& cfg);

/// Applies a recorded geometry to another raster of the same source size;
/// nearest-neighbor keeps label masks binary.
Image replay_weak(const Image& img, const GeomRecord& geom, int patch_size, bool nearest);

/// Strong augmentation: photometric only, geometry untouched so strong views
/// stay pixel-aligned with their weak parent. Consumes, in order: jitter coin
/// (+ brightness/contrast/saturation factors when it fires), grayscale coin,
/// blur coin (+ sigma when it fires). Values stay clamped to [0,255].
Image strong_augment(const Image& view, Rng& rng, const AugConfig& cfg);
Image strong_augment(const Image& view, std::uint64_t rng_seed, const AugConfig& cfg);

/// Axis-aligned rectangle mask; pixels inside the rectangle take the first
/// mixing operand, pixels outside the second.
struct RectMask {
    int y0 = 0;
    int x0 = 0;
    int h = 0;
    int w = 0;

    bool contains(int y, int x) const { return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w; }
    bool covers(int height, int width) const {
        return y0 == 0 && x0 == 0 && h == height && w == width;
    }
    std::vector<std::uint8_t> to_grid(int height, int width) const;

    static RectMask full(int height, int width) { return {0, 0, height, width}; }
};

/// Samples a rectangle whose realized area ratio and aspect ratio (w/h) both
/// land inside the given ranges. The area is drawn uniformly; the aspect is
/// then drawn uniformly over the ratios whose dimensions fit the grid at that
/// area, which keeps the area distribution uniform instead of thinning out
/// large rectangles. Rounding can still push a draw out of range, so up to 10
/// redraws are attempted; after that a centered-by-draw square at the maximum
/// area is used. Requires h, w >= 8.
RectMask sample_rect_mask(Rng& rng, int h, int w, double area_min, double area_max,
                          double aspect_min, double aspect_max);
RectMask sample_rect_mask(std::uint64_t rng_seed, int h, int w, double area_min, double area_max,
                          double aspect_min, double aspect_max);

/// Per-pixel select: inside the mask the first operand, outside the second.
/// Exact copies, no arithmetic.
Image mix(const Image& inside, const Image& outside, const RectMask& mask);

/// Tensor variant of mix. The result is a fresh constant leaf: mixing is only
/// ever applied to images and to detached weak-branch values, never inside a
/// gradient path.
Tensor mix_values(const Tensor& inside, const Tensor& outside, const RectMask& mask);

/// The full augmentation bundle for one unlabeled scene pair: three weak
/// views (two of scene a, one of scene b), their strong counterparts, and the
/// two mixed composites
///   x_aa = m1 ? s1a : s2a   (within-scene)
///   x_ab = m2 ? s2a : sb    (cross-scene)
/// A mixing coin that fails degenerates the mask to full coverage, which
/// makes the composite equal its first operand.
struct ViewBundle {
    WeakView w1a, w2a, wb;
    Image s1a, s2a, sb;
    Image x_aa, x_ab;
    RectMask m1, m2;
    bool intra_mixed = false;
    bool inter_mixed = false;
};

ViewBundle make_views(const Image& scene_a, const Image& scene_b, std::uint64_t rng_seed,
                      const AugConfig& cfg);

} // namespace cloudmatch
