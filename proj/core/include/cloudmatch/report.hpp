#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudmatch/image.hpp"
#include "cloudmatch/metrics.hpp"

namespace cloudmatch {

/// One completed training run, as read back from its output directory
/// (config.txt, metrics.csv, train_log.csv).
struct RunRecord {
    std::string dir_name;
    std::string label; // variant derived from the config flags, e.g. "full", "no-vc"
    std::string ratio;
    std::uint64_t seed = 0;
    Scores test_scores;
    std::vector<double> loss_curve; // mean total loss per epoch
};

/// Scans runs_dir for subdirectories that contain a metrics.csv.
std::vector<RunRecord> collect_runs(const std::string& runs_dir);

/// Per (label, ratio) aggregate over seeds; std is the sample standard
/// deviation (n - 1), zero for a single seed.
struct AggregateRow {
    std::string label;
    std::string ratio;
    int runs = 0;
    Scores mean;
    Scores stddev;
};

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs);

/// Markdown summary: an aggregate table (percentages, mean +- sample std)
/// and the color legend for the loss-curve plot.
std::string render_report_markdown(const std::vector<RunRecord>& runs);

/// Loss curves as a simple line plot, one polyline per run, colored by label
/// (x: epoch, y: mean total loss, y axis from zero).
Image render_loss_curves(const std::vector<RunRecord>& runs, int width = 720, int height = 440);

} // namespace cloudmatch
