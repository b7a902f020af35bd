#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cloudmatch/augment.hpp"
#include "cloudmatch/backbone.hpp"
#include "cloudmatch/data.hpp"
#include "cloudmatch/errors.hpp"
#include "cloudmatch/png_io.hpp"
#include "cloudmatch/report.hpp"
#include "cloudmatch/rng.hpp"
#include "cloudmatch/train.hpp"

namespace fs = std::filesystem;
using namespace cloudmatch;

namespace {

constexpr std::uint64_t kTagScene = 0x5343454eull;
constexpr std::uint64_t kTagCover = 0x434f5652ull;
constexpr std::uint64_t kTagTestSplit = 0x54455354ull;

std::vector<std::string> list_image_ids(const std::string& root) {
    const fs::path dir = fs::path(root) / "images";
    if (!fs::is_directory(dir))
        throw InputError("no images/ directory under " + root);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw InputError("no .png images under " + dir.string());
    return ids;
}

bool has_mask(const std::string& root, const std::string& id) {
    return fs::exists(fs::path(root) / "masks" / (id + ".png"));
}

struct SynthArgs {
    std::string out;
    int count = 200;
    int size = 96;
    std::uint64_t seed = 1;
    double cover_min = 0.1;
    double cover_max = 0.5;
};

int run_synth(const SynthArgs& a) {
    if (a.count < 1) throw ContractError("synth: --count must be >= 1");
    if (a.cover_min > a.cover_max)
        throw ContractError("synth: --cover-min must not exceed --cover-max");
    for (int i = 0; i < a.count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%04d", i);
        Rng cover_rng(Rng::mix({a.seed, kTagCover, static_cast<std::uint64_t>(i)}));
        const double cover = cover_rng.uniform(a.cover_min, a.cover_max);
        SyntheticScene scene = generate_synthetic_scene(
            Rng::mix({a.seed, kTagScene, static_cast<std::uint64_t>(i)}), a.size, a.size, cover);
        save_sample(a.out, Sample{id, scene.image, scene.mask});
    }
    std::printf("synth: wrote %d scenes of %dx%d to %s\n", a.count, a.size, a.size,
                a.out.c_str());
    return 0;
}

struct PrepareArgs {
    std::string data;
    std::uint64_t seed = 1;
    double test_fraction = 0.2;
    int patch_size = 0; // 0 = use images as stored
};

int run_prepare(const PrepareArgs& a) {
    if (a.test_fraction < 0.0 || a.test_fraction >= 1.0)
        throw ContractError("prepare: --test-fraction must be in [0,1)");

    std::vector<std::string> pool;
    for (const std::string& id : list_image_ids(a.data)) {
        if (a.patch_size == 0) {
            pool.push_back(id);
            continue;
        }
        Sample s = load_sample(a.data, id, has_mask(a.data, id));
        if (s.image.height == a.patch_size && s.image.width == a.patch_size) {
            pool.push_back(id);
            continue;
        }
        for (Sample& tile :
             tile_raster(id, s.image, s.mask ? &*s.mask : nullptr, a.patch_size)) {
            save_sample(a.data, tile);
            pool.push_back(tile.id);
        }
    }
    // a rerun sees both the oversized originals and their already-written tiles
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    if (pool.empty()) throw InputError("prepare: no usable images in " + a.data);

    Rng rng(Rng::mix({a.seed, kTagTestSplit}));
    for (std::size_t i = pool.size() - 1; i > 0; --i)
        std::swap(pool[i], pool[rng.uniform_int(i + 1)]);
    const std::size_t n_test = static_cast<std::size_t>(pool.size() * a.test_fraction);
    std::vector<std::string> test_ids(pool.begin(), pool.begin() + n_test);
    std::vector<std::string> train_ids(pool.begin() + n_test, pool.end());
    std::sort(test_ids.begin(), test_ids.end());
    std::sort(train_ids.begin(), train_ids.end());

    std::vector<Image> train_images;
    train_images.reserve(train_ids.size());
    for (const std::string& id : train_ids)
        train_images.push_back(load_sample(a.data, id, false).image);
    std::vector<const Image*> ptrs;
    for (const Image& img : train_images) ptrs.push_back(&img);
    write_norm_stats(norm_stats_path(a.data, a.seed), compute_norm_stats(ptrs));

    for (const SplitManifest& m : hierarchical_split(train_ids, test_ids, a.seed)) {
        write_manifest(manifest_path(a.data, a.seed, m.ratio), m);
        std::printf("prepare: seed %llu ratio %s -> %zu labeled, %zu unlabeled, %zu test\n",
                    static_cast<unsigned long long>(a.seed), m.ratio.c_str(),
                    m.labeled_ids.size(), m.unlabeled_ids.size(), m.test_ids.size());
    }
    return 0;
}

struct TrainArgs {
    std::optional<std::string> data, out, ratio, conf_source;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr;
    std::string config_path;
    bool no_vc = false, no_inter_mix = false, no_intra_mix = false, supervised_only = false;
    bool resume = false;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config_path.empty()) apply_config_file(cfg, a.config_path);
    if (a.data) cfg.data_dir = *a.data;
    if (a.out) cfg.out_dir = *a.out;
    if (a.ratio) cfg.labeled_ratio = *a.ratio;
    if (a.conf_source) cfg.w2s_conf_source = *a.conf_source;
    if (a.seed) cfg.seed = *a.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.lr) cfg.lr = *a.lr;
    if (a.no_vc) cfg.no_vc = true;
    if (a.no_inter_mix) cfg.no_inter_mix = true;
    if (a.no_intra_mix) cfg.no_intra_mix = true;
    if (a.supervised_only) cfg.supervised_only = true;
    if (cfg.data_dir.empty()) throw InputError("train: --data (or data= in config) is required");
    if (cfg.out_dir.empty()) throw InputError("train: --out (or out= in config) is required");
    cfg.validate();

    Dataset ds = load_dataset(cfg.data_dir, cfg.seed, cfg.labeled_ratio);
    TinySegNet model = TinySegNet::init_parameters(cfg.seed);
    Trainer trainer(model, ds, cfg);

    fs::create_directories(cfg.out_dir);
    const std::string ckpt_path = cfg.out_dir + "/checkpoint.bin";
    bool resumed = false;
    if (a.resume) {
        if (!fs::exists(ckpt_path))
            throw InputError("train: --resume set but no checkpoint at " + ckpt_path);
        trainer.restore(read_checkpoint(ckpt_path));
        resumed = true;
        std::printf("train: resumed at epoch %llu step %llu\n",
                    static_cast<unsigned long long>(trainer.epoch()),
                    static_cast<unsigned long long>(trainer.step_in_epoch()));
    }
    {
        std::ofstream out(cfg.out_dir + "/config.txt", std::ios::trunc);
        out << config_to_text(cfg);
    }

    const auto mode = resumed ? std::ios::app : std::ios::trunc;
    std::ofstream log(cfg.out_dir + "/train_log.csv", mode);
    std::ofstream timing(cfg.out_dir + "/timing.csv", mode);
    if (!log || !timing) throw InputError("train: cannot write logs under " + cfg.out_dir);
    if (!resumed) {
        log << "epoch,total,sup,w2s_aa,w2s_ab,vc_aa,vc_ab,tau,pseudo_valid_fraction\n";
        timing << "epoch,seconds\n";
    }

    trainer.run([&](int epoch, const StepLosses& mean, double seconds) {
        char row[512];
        std::snprintf(row, sizeof(row), "%d,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f", epoch,
                      mean.total, mean.sup, mean.w2s_aa, mean.w2s_ab, mean.vc_aa, mean.vc_ab,
                      mean.tau, mean.pseudo_valid_fraction);
        log << row << '\n' << std::flush;
        timing << epoch << ',' << seconds << '\n' << std::flush;
        std::printf("epoch %3d/%d  total %.4f  sup %.4f  tau %.3f  (%.1fs)\n", epoch + 1,
                    cfg.epochs, mean.total, mean.sup, mean.tau, seconds);
        std::fflush(stdout);
    });

    write_checkpoint(ckpt_path, trainer.make_checkpoint());
    std::printf("train: wrote %s\n", ckpt_path.c_str());
    return 0;
}

struct EvalArgs {
    std::string run;
    std::optional<std::string> data;
};

int run_eval(const EvalArgs& a) {
    const Checkpoint ckpt = read_checkpoint(a.run + "/checkpoint.bin");

    TrainConfig cfg;
    std::istringstream lines(ckpt.config_text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError("eval: malformed config line in checkpoint: " + line);
        apply_config_kv(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    if (a.data) cfg.data_dir = *a.data;

    Dataset ds = load_dataset(cfg.data_dir, cfg.seed, cfg.labeled_ratio);
    TinySegNet model;
    load_parameters(model, ckpt);
    const EvalResult res = evaluate(model, ds);

    append_metrics_csv(a.run + "/metrics.csv", "test", cfg.labeled_ratio, cfg.seed, res.scores);
    std::printf("%s\n", metrics_csv_row("test", cfg.labeled_ratio, cfg.seed, res.scores).c_str());
    return 0;
}

struct PreviewArgs {
    std::string data;
    std::string out;
    std::uint64_t seed = 1;
    std::string id_a, id_b;
    int patch_size = 96;
};

Image tint_rect(Image img, const RectMask& m) {
    for (int y = m.y0; y < m.y0 + m.h; ++y)
        for (int x = m.x0; x < m.x0 + m.w; ++x) {
            img.at(0, y, x) = 0.5 * img.at(0, y, x) + 127.5;
            img.at(1, y, x) *= 0.5;
            img.at(2, y, x) *= 0.5;
        }
    return img;
}

int run_preview(const PreviewArgs& a) {
    std::string id_a = a.id_a, id_b = a.id_b;
    if (id_a.empty() || id_b.empty()) {
        const auto ids = list_image_ids(a.data);
        if (ids.size() < 2)
            throw InputError("augment-preview: need two images or explicit --id-a/--id-b");
        if (id_a.empty()) id_a = ids[0];
        if (id_b.empty()) id_b = ids[1];
    }
    const Image scene_a = read_png((fs::path(a.data) / "images" / (id_a + ".png")).string());
    const Image scene_b = read_png((fs::path(a.data) / "images" / (id_b + ".png")).string());

    AugConfig cfg;
    cfg.patch_size = a.patch_size;
    const ViewBundle vb = make_views(scene_a, scene_b, a.seed, cfg);

    fs::create_directories(a.out);
    const auto save = [&](const char* name, const Image& img) {
        write_png((fs::path(a.out) / name).string(), img);
    };
    save("w1a.png", vb.w1a.view);
    save("w2a.png", vb.w2a.view);
    save("wb.png", vb.wb.view);
    save("s1a.png", vb.s1a);
    save("s2a.png", vb.s2a);
    save("sb.png", vb.sb);
    save("x_aa.png", vb.x_aa);
    save("x_ab.png", vb.x_ab);
    save("m1_overlay.png", tint_rect(vb.x_aa, vb.m1));
    save("m2_overlay.png", tint_rect(vb.x_ab, vb.m2));
    std::printf("augment-preview: views for (%s, %s) written to %s (intra %s, inter %s)\n",
                id_a.c_str(), id_b.c_str(), a.out.c_str(), vb.intra_mixed ? "mixed" : "full",
                vb.inter_mixed ? "mixed" : "full");
    return 0;
}

struct ReportArgs {
    std::string runs;
    std::string out;
};

int run_report(const ReportArgs& a) {
    const std::string out = a.out.empty() ? a.runs : a.out;
    const std::vector<RunRecord> runs = collect_runs(a.runs);
    if (runs.empty()) throw InputError("report: no completed runs under " + a.runs);

    const std::string md = render_report_markdown(runs);
    fs::create_directories(out);
    {
        std::ofstream file(out + "/report.md", std::ios::trunc);
        file << md;
    }
    write_png(out + "/loss_curves.png", render_loss_curves(runs));
    std::fputs(md.c_str(), stdout);
    std::printf("report: wrote %s/report.md and %s/loss_curves.png\n", out.c_str(), out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cloud segmentation trainer with scene-mixing semi-supervision"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cloud-scene dataset");
    synth->add_option("--out", synth_args.out, "dataset root to create")->required();
    synth->add_option("--count", synth_args.count, "number of scenes");
    synth->add_option("--size", synth_args.size, "scene height and width in pixels");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--cover-min", synth_args.cover_min, "minimum requested cloud cover");
    synth->add_option("--cover-max", synth_args.cover_max, "maximum requested cloud cover");

    PrepareArgs prepare_args;
    CLI::App* prepare =
        app.add_subcommand("prepare", "tile rasters, carve splits, fit normalization stats");
    prepare->add_option("--data", prepare_args.data, "dataset root")->required();
    prepare->add_option("--seed", prepare_args.seed, "split seed");
    prepare->add_option("--test-fraction", prepare_args.test_fraction,
                        "fraction of the pool held out as the test set");
    prepare->add_option("--patch-size", prepare_args.patch_size,
                        "tile oversized rasters to this size (0 = use as stored)");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train the segmentation model");
    train->add_option("--data", train_args.data, "dataset root");
    train->add_option("--out", train_args.out, "output directory for this run");
    train->add_option("--labeled-ratio", train_args.ratio, "labeled fraction")
        ->check(CLI::IsMember({"1/4", "1/8", "1/16"}));
    train->add_option("--seed", train_args.seed, "master seed (splits, init, augmentation)");
    train->add_option("--epochs", train_args.epochs, "training epochs");
    train->add_option("--batch-size", train_args.batch_size, "samples per optimizer step");
    train->add_option("--lr", train_args.lr, "learning rate");
    train->add_option("--w2s-conf-source", train_args.conf_source,
                      "confidence source for pseudo-label filtering")
        ->check(CLI::IsMember({"weak", "strong"}));
    train->add_option("--config", train_args.config_path,
                      "key=value config file (command-line flags override it)");
    train->add_flag("--no-vc", train_args.no_vc, "drop the view-consistency loss");
    train->add_flag("--no-inter-mix", train_args.no_inter_mix, "disable cross-scene mixing");
    train->add_flag("--no-intra-mix", train_args.no_intra_mix, "disable within-scene mixing");
    train->add_flag("--supervised-only", train_args.supervised_only,
                    "train on the labeled split alone");
    train->add_flag("--resume", train_args.resume, "continue from <out>/checkpoint.bin");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "score a trained run on its test split");
    eval->add_option("--run", eval_args.run, "run directory holding checkpoint.bin")->required();
    eval->add_option("--data", eval_args.data, "override the dataset root from the checkpoint");

    PreviewArgs preview_args;
    CLI::App* preview =
        app.add_subcommand("augment-preview", "write one augmentation bundle as image files");
    preview->add_option("--data", preview_args.data, "dataset root")->required();
    preview->add_option("--out", preview_args.out, "directory for the preview images")
        ->required();
    preview->add_option("--seed", preview_args.seed, "bundle seed");
    preview->add_option("--id-a", preview_args.id_a, "first scene id (default: first in images/)");
    preview->add_option("--id-b", preview_args.id_b,
                        "second scene id (default: second in images/)");
    preview->add_option("--patch-size", preview_args.patch_size, "view size in pixels");

    ReportArgs report_args;
    CLI::App* report =
        app.add_subcommand("report", "aggregate runs into a markdown table and loss-curve plot");
    report->add_option("--runs", report_args.runs, "directory containing run directories")
        ->required();
    report->add_option("--out", report_args.out, "output directory (default: the runs dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    try {
        if (*synth) return run_synth(synth_args);
        if (*prepare) return run_prepare(prepare_args);
        if (*train) return run_train(train_args);
        if (*eval) return run_eval(eval_args);
        if (*preview) return run_preview(preview_args);
        if (*report) return run_report(report_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
