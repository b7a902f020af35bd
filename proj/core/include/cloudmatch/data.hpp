#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cloudmatch/image.hpp"

namespace cloudmatch {

enum class SplitRole { labeled, unlabeled, test };

/// One training unit: an image patch, optionally with its ground-truth cloud
/// mask ([1,H,W] with values 0 = clear, 1 = cloud). Unlabeled samples may
/// still carry a mask (held back for diagnostics, never trained on).
struct Sample {
    std::string id;
    Image image;
    std::optional<Image> mask;
    SplitRole split = SplitRole::unlabeled;
};

/// Role assignment for one labeled-ratio setting. The labeled sets of the
/// three ratios are nested (1/16 inside 1/8 inside 1/4); the test set is
/// shared verbatim across ratios.
struct SplitManifest {
    std::string ratio;
    std::uint64_t seed = 0;
    std::vector<std::string> labeled_ids;
    std::vector<std::string> unlabeled_ids;
    std::vector<std::string> test_ids;
};

struct NormStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
};

/// Cuts a raster into non-overlapping patch_size x patch_size tiles, row
/// major; partial tiles at the right/bottom edges are dropped. Tile ids are
/// "<base_id>_r<row>c<col>". An image smaller than the patch in either
/// dimension yields an empty list and a warning on stderr. patch_size >= 8.
std::vector<Sample> tile_raster(const std::string& base_id, const Image& image,
                                const Image* mask, int patch_size);

/// Splits the training pool into labeled/unlabeled for ratios 1/4, 1/8 and
/// 1/16 (in that order). Ids are sorted, then shuffled once with the seed;
/// the 1/4 labeled set is the prefix of length floor(n/4) and each smaller
/// set is the prefix of half its parent's length, which gives the nesting by
/// construction. Requires at least 16 train ids, no duplicates, and no
/// overlap with the test ids.
std::array<SplitManifest, 3> hierarchical_split(const std::vector<std::string>& train_ids,
                                                const std::vector<std::string>& test_ids,
                                                std::uint64_t seed);

/// Per-channel mean and population std over every pixel of the given images.
/// The stored std is floored at 1e-12 so it is always positive.
NormStats compute_norm_stats(const std::vector<const Image*>& images);

/// (x - mean) / std per channel. A channel whose std is <= 1e-12 maps to all
/// zeros rather than dividing by the guard value.
Image apply_norm(const Image& img, const NormStats& stats);

struct SyntheticScene {
    Image image; // [3,H,W], 8-bit values
    Image mask;  // [1,H,W], values 0/1, exactly the pixels the generator clouded
};

/// Procedural scene: multi-octave value noise shaded with one of eight
/// surface palettes, each jittered per scene (brightness gain and channel
/// tint) so one category spans a family of appearances, plus a cloud layer
/// thresholded at the requested coverage quantile. Cloud brightness, edge
/// softness and tint also vary per scene, overlapping the brighter surface
/// families. The mask marks exactly the pixels where cloud alpha is
/// positive. cloud_cover is clamped to [0.05, 0.95].
SyntheticScene generate_synthetic_scene(std::uint64_t seed, int height, int width,
                                        double cloud_cover);

/// Dataset directory layout. Images: images/<id>.png. Masks: masks/<id>.png
/// (8-bit gray, 0 = clear, 255 = cloud). Splits: splits/<seed>/<ratio>.manifest
/// with the ratio slash flattened to an underscore, plus norm_stats.txt
/// computed over that seed's training pool.
std::string manifest_path(const std::string& root, std::uint64_t seed, const std::string& ratio);
std::string norm_stats_path(const std::string& root, std::uint64_t seed);

/// Manifest file: one "<role>\t<id>" line per sample, roles ordered labeled,
/// unlabeled, test.
void write_manifest(const std::string& path, const SplitManifest& manifest);
SplitManifest read_manifest(const std::string& path);

void write_norm_stats(const std::string& path, const NormStats& stats);
NormStats read_norm_stats(const std::string& path);

/// In-memory dataset for one (seed, ratio) manifest: all referenced images,
/// with masks for labeled and test ids.
struct Dataset {
    SplitManifest manifest;
    NormStats stats;
    std::map<std::string, Sample> samples;

    const Sample& at(const std::string& id) const;
};

Dataset load_dataset(const std::string& root, std::uint64_t seed, const std::string& ratio);

/// Loads one sample from the dataset layout; with_mask = true requires the
/// mask file to exist.
Sample load_sample(const std::string& root, const std::string& id, bool with_mask);
void save_sample(const std::string& root, const Sample& sample);

} // namespace cloudmatch
