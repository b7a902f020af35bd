#include "cloudmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cloudmatch/errors.hpp"
#include "cloudmatch/png_io.hpp"
#include "cloudmatch/rng.hpp"

namespace fs = std::filesystem;

namespace cloudmatch {

std::vector<Sample> tile_raster(const std::string& base_id, const Image& image,
                                const Image* mask, int patch_size) {
    if (patch_size < 8) throw ContractError("tile_raster: patch_size must be >= 8");
    if (image.height <= 0 || image.width <= 0) throw InputError("tile_raster: empty image");
    if (mask && (mask->height != image.height || mask->width != image.width))
        throw DimensionError("tile_raster: mask size differs from image");
    if (image.height < patch_size || image.width < patch_size) {
        std::fprintf(stderr, "warning: image %s (%dx%d) smaller than patch %d, no tiles\n",
                     base_id.c_str(), image.height, image.width, patch_size);
        return {};
    }

    std::vector<Sample> tiles;
    const int rows = image.height / patch_size;
    const int cols = image.width / patch_size;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            Sample tile;
            tile.id = base_id + "_r" + std::to_string(r) + "c" + std::to_string(c);
            tile.image = crop(image, r * patch_size, c * patch_size, patch_size, patch_size);
            if (mask)
                tile.mask = crop(*mask, r * patch_size, c * patch_size, patch_size, patch_size);
            tiles.push_back(std::move(tile));
        }
    return tiles;
}

std::array<SplitManifest, 3> hierarchical_split(const std::vector<std::string>& train_ids,
                                                const std::vector<std::string>& test_ids,
                                                std::uint64_t seed) {
    if (train_ids.size() < 16)
        throw ContractError("hierarchical_split: need at least 16 train ids, got " +
                            std::to_string(train_ids.size()));

    std::vector<std::string> pool = train_ids;
    std::sort(pool.begin(), pool.end());
    if (std::adjacent_find(pool.begin(), pool.end()) != pool.end())
        throw InputError("hierarchical_split: duplicate train id");
    {
        std::set<std::string> test_set(test_ids.begin(), test_ids.end());
        if (test_set.size() != test_ids.size())
            throw InputError("hierarchical_split: duplicate test id");
        for (const std::string& id : pool)
            if (test_set.count(id))
                throw InputError("hierarchical_split: id in both train and test: " + id);
    }

    Rng rng(seed);
    for (std::size_t i = pool.size() - 1; i > 0; --i)
        std::swap(pool[i], pool[rng.uniform_int(i + 1)]);

    std::vector<std::string> sorted_test = test_ids;
    std::sort(sorted_test.begin(), sorted_test.end());

    const std::size_t n4 = pool.size() / 4;
    const std::array<std::pair<const char*, std::size_t>, 3> cuts = {
        std::pair{"1/4", n4}, {"1/8", n4 / 2}, {"1/16", n4 / 4}};

    std::array<SplitManifest, 3> manifests;
    for (std::size_t k = 0; k < 3; ++k) {
        SplitManifest& m = manifests[k];
        m.ratio = cuts[k].first;
        m.seed = seed;
        m.labeled_ids.assign(pool.begin(), pool.begin() + cuts[k].second);
        m.unlabeled_ids.assign(pool.begin() + cuts[k].second, pool.end());
        m.test_ids = sorted_test;
    }
    return manifests;
}

NormStats compute_norm_stats(const std::vector<const Image*>& images) {
    if (images.empty()) throw ContractError("compute_norm_stats: no images");
    NormStats stats;
    std::array<double, 3> sum{}, sumsq{};
    std::int64_t count = 0;
    for (const Image* img : images) {
        if (img->channels != 3) throw DimensionError("compute_norm_stats: images must be RGB");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img->height; ++y)
                for (int x = 0; x < img->width; ++x) {
                    const double v = img->at(c, y, x);
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
        count += static_cast<std::int64_t>(img->height) * img->width;
    }
    for (int c = 0; c < 3; ++c) {
        stats.mean[c] = sum[c] / count;
        const double var = std::max(0.0, sumsq[c] / count - stats.mean[c] * stats.mean[c]);
        stats.stddev[c] = std::max(std::sqrt(var), 1e-12);
    }
    return stats;
}

Image apply_norm(const Image& img, const NormStats& stats) {
    if (img.channels != 3) throw DimensionError("apply_norm: image must be RGB");
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < 3; ++c) {
        const double m = stats.mean[c];
        const double s = stats.stddev[c];
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y, x) = s <= 1e-12 ? 0.0 : (img.at(c, y, x) - m) / s;
    }
    return out;
}

namespace {

/// Multi-octave value noise in [0,1], smoothstep-interpolated on a lattice.
std::vector<double> fbm_field(Rng& rng, int h, int w, double base_cell, int octaves) {
    std::vector<double> field(static_cast<std::size_t>(h) * w, 0.0);
    double amplitude = 1.0;
    double norm = 0.0;
    for (int o = 0; o < octaves; ++o) {
        const double cell = base_cell / (1 << o);
        if (cell < 2.0) break;
        const int gh = static_cast<int>(std::ceil(h / cell)) + 2;
        const int gw = static_cast<int>(std::ceil(w / cell)) + 2;
        std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
        for (double& v : lattice) v = rng.uniform01();
        for (int y = 0; y < h; ++y) {
            const double v = y / cell;
            const int i0 = static_cast<int>(v);
            const double fv = v - i0;
            const double sv = fv * fv * (3 - 2 * fv);
            for (int x = 0; x < w; ++x) {
                const double u = x / cell;
                const int j0 = static_cast<int>(u);
                const double fu = u - j0;
                const double su = fu * fu * (3 - 2 * fu);
                const double a = lattice[static_cast<std::size_t>(i0) * gw + j0];
                const double b = lattice[static_cast<std::size_t>(i0) * gw + j0 + 1];
                const double c = lattice[static_cast<std::size_t>(i0 + 1) * gw + j0];
                const double d = lattice[static_cast<std::size_t>(i0 + 1) * gw + j0 + 1];
                const double top = a * (1 - su) + b * su;
                const double bot = c * (1 - su) + d * su;
                field[static_cast<std::size_t>(y) * w + x] += amplitude * (top * (1 - sv) + bot * sv);
            }
        }
        norm += amplitude;
        amplitude *= 0.5;
    }
    for (double& v : field) v /= norm;
    return field;
}

struct Palette {
    std::array<double, 3> lo, hi;
};

// Dark-to-bright shading anchors per surface type. snow_ice and urban sit
// close to cloud brightness on purpose.
constexpr Palette kPalettes[8] = {
    {{118, 96, 74}, {186, 158, 122}},   // barren
    {{18, 58, 26}, {64, 112, 52}},      // forest
    {{82, 108, 42}, {152, 170, 78}},    // grassland
    {{92, 88, 48}, {158, 140, 86}},     // shrubland
    {{196, 206, 222}, {242, 248, 254}}, // snow_ice
    {{108, 108, 112}, {188, 188, 194}}, // urban
    {{8, 28, 66}, {44, 84, 132}},       // water
    {{38, 70, 58}, {112, 130, 92}},     // wetland
};

} // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, int height, int width,
                                        double cloud_cover) {
    if (height < 8 || width < 8)
        throw ContractError("generate_synthetic_scene: scene must be at least 8x8");
    cloud_cover = std::clamp(cloud_cover, 0.05, 0.95);

    Rng rng(seed);
    const Palette& base = kPalettes[rng.uniform_int(8)];
    // Per-scene appearance spread within the surface category: a brightness
    // gain plus a channel tint, so two scenes of the same category still look
    // different and a few labeled scenes cannot cover the whole family.
    const double gain = rng.uniform(0.75, 1.2);
    std::array<double, 3> lo, hi;
    for (int c = 0; c < 3; ++c) {
        const double tint = rng.uniform(-14.0, 14.0);
        lo[c] = std::clamp(base.lo[c] * gain + tint, 0.0, 255.0);
        hi[c] = std::clamp(base.hi[c] * gain + tint, 0.0, 255.0);
    }
    const double side = std::min(height, width);

    const std::vector<double> terrain = fbm_field(rng, height, width, std::max(6.0, side / 6.0), 4);
    const std::vector<double> detail = fbm_field(rng, height, width, std::max(3.0, side / 16.0), 3);
    const std::vector<double> clouds = fbm_field(rng, height, width, std::max(8.0, side / 3.0), 3);

    std::vector<double> sorted = clouds;
    const std::size_t cut =
        static_cast<std::size_t>((1.0 - cloud_cover) * (sorted.size() - 1));
    std::nth_element(sorted.begin(), sorted.begin() + cut, sorted.end());
    const double threshold = sorted[cut];
    const double peak = *std::max_element(clouds.begin(), clouds.end());

    // Cloud styling varies mildly per scene but stays bright and mostly
    // crisp. Backgrounds spread wide while clouds stay recognizable, so
    // unlabeled scenes mainly add background variety.
    const double shade_base = rng.uniform(205.0, 235.0);
    const double shade_span = rng.uniform(10.0, 20.0);
    const double soft = rng.uniform(0.3, 0.5);
    const double cool = rng.uniform(0.0, 6.0);

    SyntheticScene scene;
    scene.image = Image(3, height, width);
    scene.mask = Image(1, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            const double t = 0.7 * terrain[i] + 0.3 * detail[i];
            std::array<double, 3> rgb;
            for (int c = 0; c < 3; ++c)
                rgb[c] = lo[c] + (hi[c] - lo[c]) * t + rng.uniform(-5.0, 5.0);

            const bool cloudy = clouds[i] > threshold;
            if (cloudy) {
                const double depth = (clouds[i] - threshold) / (peak - threshold + 1e-12);
                const double alpha = std::min(1.0, depth / soft);
                const double shade = shade_base + shade_span * depth;
                for (int c = 0; c < 3; ++c)
                    rgb[c] = rgb[c] * (1 - alpha) + (shade + (c == 2 ? cool : 0.0)) * alpha;
            }
            scene.mask.at(0, y, x) = cloudy ? 1.0 : 0.0;
            for (int c = 0; c < 3; ++c)
                scene.image.at(c, y, x) = std::clamp(std::round(rgb[c]), 0.0, 255.0);
        }
    return scene;
}

std::string manifest_path(const std::string& root, std::uint64_t seed, const std::string& ratio) {
    std::string flat = ratio;
    std::replace(flat.begin(), flat.end(), '/', '_');
    return (fs::path(root) / "splits" / std::to_string(seed) / (flat + ".manifest")).string();
}

std::string norm_stats_path(const std::string& root, std::uint64_t seed) {
    return (fs::path(root) / "splits" / std::to_string(seed) / "norm_stats.txt").string();
}

void write_manifest(const std::string& path, const SplitManifest& manifest) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("write_manifest: cannot open " + path);
    for (const std::string& id : manifest.labeled_ids) out << "labeled\t" << id << "\n";
    for (const std::string& id : manifest.unlabeled_ids) out << "unlabeled\t" << id << "\n";
    for (const std::string& id : manifest.test_ids) out << "test\t" << id << "\n";
}

SplitManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("read_manifest: cannot open " + path);
    SplitManifest m;
    const std::string stem = fs::path(path).stem().string();
    m.ratio = stem;
    std::replace(m.ratio.begin(), m.ratio.end(), '_', '/');
    try {
        m.seed = std::stoull(fs::path(path).parent_path().filename().string());
    } catch (...) {
        m.seed = 0;
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw InputError("read_manifest: missing tab at " + path + ":" +
                             std::to_string(lineno));
        const std::string role = line.substr(0, tab);
        const std::string id = line.substr(tab + 1);
        if (id.empty())
            throw InputError("read_manifest: empty id at " + path + ":" + std::to_string(lineno));
        if (role == "labeled")
            m.labeled_ids.push_back(id);
        else if (role == "unlabeled")
            m.unlabeled_ids.push_back(id);
        else if (role == "test")
            m.test_ids.push_back(id);
        else
            throw InputError("read_manifest: unknown role '" + role + "' at " + path + ":" +
                             std::to_string(lineno));
    }
    return m;
}

void write_norm_stats(const std::string& path, const NormStats& stats) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("write_norm_stats: cannot open " + path);
    out.precision(17);
    out << "mean";
    for (double v : stats.mean) out << ' ' << v;
    out << "\nstddev";
    for (double v : stats.stddev) out << ' ' << v;
    out << "\n";
}

NormStats read_norm_stats(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("read_norm_stats: cannot open " + path);
    NormStats stats;
    std::string key;
    for (auto* row : {&stats.mean, &stats.stddev}) {
        in >> key;
        for (double& v : *row) in >> v;
    }
    if (!in) throw InputError("read_norm_stats: malformed " + path);
    return stats;
}

const Sample& Dataset::at(const std::string& id) const {
    auto it = samples.find(id);
    if (it == samples.end()) throw InputError("Dataset: unknown id " + id);
    return it->second;
}

Sample load_sample(const std::string& root, const std::string& id, bool with_mask) {
    Sample s;
    s.id = id;
    const fs::path image_path = fs::path(root) / "images" / (id + ".png");
    s.image = read_png(image_path.string());
    if (s.image.channels != 3) throw InputError("load_sample: " + id + " is not RGB");
    if (with_mask) {
        const fs::path mask_path = fs::path(root) / "masks" / (id + ".png");
        Image raw = read_png(mask_path.string());
        if (raw.channels != 1) throw InputError("load_sample: mask for " + id + " is not grayscale");
        if (raw.height != s.image.height || raw.width != s.image.width)
            throw InputError("load_sample: mask size differs for " + id);
        for (double& v : raw.data) v = v > 127.0 ? 1.0 : 0.0;
        s.mask = std::move(raw);
    }
    return s;
}

void save_sample(const std::string& root, const Sample& sample) {
    fs::create_directories(fs::path(root) / "images");
    write_png((fs::path(root) / "images" / (sample.id + ".png")).string(), sample.image);
    if (sample.mask) {
        fs::create_directories(fs::path(root) / "masks");
        Image scaled = *sample.mask;
        for (double& v : scaled.data) v = v > 0.5 ? 255.0 : 0.0;
        write_png((fs::path(root) / "masks" / (sample.id + ".png")).string(), scaled);
    }
}

Dataset load_dataset(const std::string& root, std::uint64_t seed, const std::string& ratio) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path(root, seed, ratio));
    ds.stats = read_norm_stats(norm_stats_path(root, seed));
    for (const std::string& id : ds.manifest.labeled_ids) {
        Sample s = load_sample(root, id, true);
        s.split = SplitRole::labeled;
        ds.samples.emplace(id, std::move(s));
    }
    for (const std::string& id : ds.manifest.unlabeled_ids) {
        Sample s = load_sample(root, id, false);
        s.split = SplitRole::unlabeled;
        ds.samples.emplace(id, std::move(s));
    }
    for (const std::string& id : ds.manifest.test_ids) {
        Sample s = load_sample(root, id, true);
        s.split = SplitRole::test;
        ds.samples.emplace(id, std::move(s));
    }
    return ds;
}

} // namespace cloudmatch
