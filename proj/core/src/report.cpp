#include "cloudmatch/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cloudmatch/errors.hpp"
#include "cloudmatch/train.hpp"

namespace fs = std::filesystem;

namespace cloudmatch {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

std::string variant_label(const TrainConfig& cfg) {
    if (cfg.supervised_only) return "supervised-only";
    std::string label;
    if (cfg.no_vc) label += label.empty() ? "no-vc" : "+no-vc";
    if (cfg.no_inter_mix) label += label.empty() ? "no-inter-mix" : "+no-inter-mix";
    if (cfg.no_intra_mix) label += label.empty() ? "no-intra-mix" : "+no-intra-mix";
    if (label.empty()) label = "full";
    if (cfg.w2s_conf_source != "weak") label += "+" + cfg.w2s_conf_source + "-conf";
    return label;
}

} // namespace

std::vector<RunRecord> collect_runs(const std::string& runs_dir) {
    if (!fs::is_directory(runs_dir)) throw InputError("collect_runs: not a directory: " + runs_dir);
    std::vector<RunRecord> runs;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(runs_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "metrics.csv"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());

    for (const fs::path& dir : dirs) {
        RunRecord run;
        run.dir_name = dir.filename().string();

        TrainConfig cfg;
        const fs::path config_path = dir / "config.txt";
        if (fs::exists(config_path)) apply_config_file(cfg, config_path.string());
        run.label = variant_label(cfg);
        run.ratio = cfg.labeled_ratio;
        run.seed = cfg.seed;

        std::ifstream metrics(dir / "metrics.csv");
        std::string line;
        std::getline(metrics, line); // header
        bool found = false;
        while (std::getline(metrics, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 7)
                throw InputError("collect_runs: malformed metrics row in " + run.dir_name);
            if (f[0] != "test") continue;
            run.test_scores.iou0 = std::stod(f[3]);
            run.test_scores.iou1 = std::stod(f[4]);
            run.test_scores.miou = std::stod(f[5]);
            run.test_scores.acc = std::stod(f[6]);
            found = true;
        }
        if (!found) throw InputError("collect_runs: no test row in " + run.dir_name);

        std::ifstream log(dir / "train_log.csv");
        if (log) {
            std::getline(log, line); // header
            while (std::getline(log, line)) {
                if (line.empty()) continue;
                const auto f = split_csv_line(line);
                if (f.size() >= 2) run.loss_curve.push_back(std::stod(f[1]));
            }
        }
        runs.push_back(std::move(run));
    }
    return runs;
}

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs) {
    std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> groups;
    for (const RunRecord& run : runs) groups[{run.label, run.ratio}].push_back(&run);

    std::vector<AggregateRow> rows;
    for (const auto& [key, members] : groups) {
        AggregateRow row;
        row.label = key.first;
        row.ratio = key.second;
        row.runs = static_cast<int>(members.size());

        const auto stats = [&](auto pick, double& mean_out, double& std_out) {
            double sum = 0.0;
            for (const RunRecord* r : members) sum += pick(r->test_scores);
            const double mean = sum / members.size();
            double sq = 0.0;
            for (const RunRecord* r : members) {
                const double d = pick(r->test_scores) - mean;
                sq += d * d;
            }
            mean_out = mean;
            std_out = members.size() > 1 ? std::sqrt(sq / (members.size() - 1)) : 0.0;
        };
        stats([](const Scores& s) { return s.iou0; }, row.mean.iou0, row.stddev.iou0);
        stats([](const Scores& s) { return s.iou1; }, row.mean.iou1, row.stddev.iou1);
        stats([](const Scores& s) { return s.miou; }, row.mean.miou, row.stddev.miou);
        stats([](const Scores& s) { return s.acc; }, row.mean.acc, row.stddev.acc);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

constexpr std::array<std::array<double, 3>, 7> kSeriesColors = {{
    {31, 119, 180},  // blue
    {214, 39, 40},   // red
    {44, 160, 44},   // green
    {255, 127, 14},  // orange
    {148, 103, 189}, // purple
    {140, 86, 75},   // brown
    {23, 190, 207},  // cyan
}};

std::map<std::string, int> label_color_slots(const std::vector<RunRecord>& runs) {
    std::map<std::string, int> slots;
    std::vector<std::string> labels;
    for (const RunRecord& run : runs)
        if (std::find(labels.begin(), labels.end(), run.label) == labels.end())
            labels.push_back(run.label);
    std::sort(labels.begin(), labels.end());
    for (std::size_t i = 0; i < labels.size(); ++i)
        slots[labels[i]] = static_cast<int>(i % kSeriesColors.size());
    return slots;
}

std::string color_name(int slot) {
    constexpr const char* names[] = {"blue", "red", "green", "orange", "purple", "brown", "cyan"};
    return names[slot];
}

std::string pct(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", 100.0 * mean, 100.0 * stddev);
    return buf;
}

} // namespace

std::string render_report_markdown(const std::vector<RunRecord>& runs) {
    const std::vector<AggregateRow> rows = aggregate_runs(runs);
    const auto slots = label_color_slots(runs);

    std::ostringstream md;
    md << "# Cloud segmentation training report\n\n";
    md << "Aggregated over " << runs.size() << " runs. Values are percentages, mean +- sample "
          "standard deviation across seeds.\n\n";
    md << "| configuration | labeled ratio | seeds | mIoU | IoU clear | IoU cloud | accuracy |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const AggregateRow& row : rows) {
        md << "| " << row.label << " | " << row.ratio << " | " << row.runs << " | "
           << pct(row.mean.miou, row.stddev.miou) << " | " << pct(row.mean.iou0, row.stddev.iou0)
           << " | " << pct(row.mean.iou1, row.stddev.iou1) << " | "
           << pct(row.mean.acc, row.stddev.acc) << " |\n";
    }
    md << "\n## Loss curves\n\n";
    md << "![loss curves](loss_curves.png)\n\n";
    md << "One line per run; x is the epoch, y the mean total loss of that epoch "
          "(y axis starts at zero).\n\n";
    for (const auto& [label, slot] : slots)
        md << "- " << color_name(slot) << ": " << label << "\n";
    return md.str();
}

namespace {

void draw_line(Image& img, double x0, double y0, double x1, double y1,
               const std::array<double, 3>& rgb) {
    const int steps = std::max(
        2, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / (steps - 1);
        const int x = static_cast<int>(std::lround(x0 + (x1 - x0) * t));
        const int y = static_cast<int>(std::lround(y0 + (y1 - y0) * t));
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
}

} // namespace

Image render_loss_curves(const std::vector<RunRecord>& runs, int width, int height) {
    if (width < 80 || height < 60) throw ContractError("render_loss_curves: plot too small");
    Image img(3, height, width, 255.0);
    const auto slots = label_color_slots(runs);

    const int left = 40, right = 12, top = 12, bottom = 28;
    const int x0 = left, x1 = width - right;
    const int y0 = top, y1 = height - bottom;

    std::size_t max_epochs = 1;
    double max_loss = 0.0;
    for (const RunRecord& run : runs) {
        max_epochs = std::max(max_epochs, run.loss_curve.size());
        for (double v : run.loss_curve) max_loss = std::max(max_loss, v);
    }
    if (max_loss <= 0.0) max_loss = 1.0;

    const std::array<double, 3> axis = {40, 40, 40};
    draw_line(img, x0, y1, x1, y1, axis);
    draw_line(img, x0, y0, x0, y1, axis);

    for (const RunRecord& run : runs) {
        if (run.loss_curve.size() < 2) continue;
        const auto& rgb = kSeriesColors[slots.at(run.label)];
        for (std::size_t e = 0; e + 1 < run.loss_curve.size(); ++e) {
            const auto px = [&](std::size_t epoch) {
                return x0 + (x1 - x0) * static_cast<double>(epoch) /
                                static_cast<double>(max_epochs - 1);
            };
            const auto py = [&](double loss) { return y1 - (y1 - y0) * (loss / max_loss); };
            draw_line(img, px(e), py(run.loss_curve[e]), px(e + 1), py(run.loss_curve[e + 1]),
                      rgb);
        }
    }
    return img;
}

} // namespace cloudmatch
