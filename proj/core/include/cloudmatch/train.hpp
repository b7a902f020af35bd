#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cloudmatch/augment.hpp"
#include "cloudmatch/backbone.hpp"
#include "cloudmatch/data.hpp"
#include "cloudmatch/losses.hpp"
#include "cloudmatch/metrics.hpp"

namespace cloudmatch {

struct TrainConfig {
    std::string data_dir;
    std::string out_dir;
    std::string labeled_ratio = "1/8"; // one of 1/4, 1/8, 1/16
    std::uint64_t seed = 1;
    int epochs = 80;
    int batch_size = 4;
    double lr = 0.01;
    double momentum = 0.9;
    LossWeights weights;
    AugConfig aug;
    double thresh_momentum = 0.999;
    double thresh_floor = 0.5;
    bool no_vc = false;
    bool no_inter_mix = false;
    bool no_intra_mix = false;
    bool supervised_only = false;
    std::string w2s_conf_source = "weak"; // or "strong"

    /// Folds the ablation switches into the numeric knobs they are sugar for:
    /// no_vc zeroes lambda_vc, no_inter_mix / no_intra_mix zero the matching
    /// mixing probability. Training always runs on the resolved config, so a
    /// flag and its numeric spelling are exactly equivalent.
    TrainConfig resolved() const;

    void validate() const;
};

/// Applies one "key=value" setting (file keys match the CLI flag names
/// without the leading dashes). Unknown keys or unparsable values raise
/// input errors. The file variant skips blank and '#' comment lines and
/// ignores whitespace around the separator.
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);
void apply_config_file(TrainConfig& cfg, const std::string& path);
/// The full config as "key=value" lines, parseable by apply_config_kv.
std::string config_to_text(const TrainConfig& cfg);

/// One momentum-SGD update: v <- momentum * v + g; p <- p - lr * v.
void sgd_update(std::span<double> param, std::span<const double> grad,
                std::span<double> velocity, double lr, double momentum);

/// Serialized training state. Binary layout: the version line
/// "cloudmatch-ckpt v1\n", then named sections, each
///   u32 name length, name bytes, u8 dtype (0 = f64, 1 = u64, 2 = raw bytes),
///   u64 element count, payload
/// with all integers and f64 bit patterns little-endian. Sections hold every
/// parameter ("param/<name>"), every optimizer slot ("velocity/<name>"),
/// the adaptive threshold, the epoch/step counters, the master seed and a
/// config-text snapshot, which together resume training bit-exactly.
struct Checkpoint {
    std::vector<std::pair<std::string, std::vector<double>>> params;
    std::vector<std::pair<std::string, std::vector<double>>> velocities;
    double thresh_ema = 0.5;
    double thresh_tau = 0.5;
    std::uint64_t master_seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t step_in_epoch = 0;
    std::string config_text;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Copies checkpoint parameters into a model; names and sizes must match.
void load_parameters(SegmentationModel& model, const Checkpoint& ckpt);

struct StepLosses {
    double total = 0.0;
    double sup = 0.0;
    double w2s_aa = 0.0;
    double w2s_ab = 0.0;
    double vc_aa = 0.0;
    double vc_ab = 0.0;
    double tau = 0.5;
    double pseudo_valid_fraction = 0.0;
};

/// Drives the semi-supervised loop. All randomness is derived by hashing
/// (master seed, epoch, step, index), never from a shared stream, so a run
/// resumed from a checkpoint at any step is bit-identical to one that never
/// stopped.
class Trainer {
public:
    Trainer(SegmentationModel& model, const Dataset& dataset, const TrainConfig& cfg);

    /// Runs the remaining epochs; on_epoch (optional) receives the epoch
    /// index, the mean step losses and the epoch wall time.
    void run(const std::function<void(int epoch, const StepLosses&, double seconds)>& on_epoch);

    /// Advances exactly one step (crossing epoch boundaries as needed).
    StepLosses run_one_step();

    int steps_per_epoch() const;
    std::uint64_t epoch() const { return epoch_; }
    std::uint64_t step_in_epoch() const { return step_; }
    const AdaptiveThreshold& threshold() const { return thresh_; }

    Checkpoint make_checkpoint() const;
    void restore(const Checkpoint& ckpt);

    /// One optimization step on explicit batches; exposed for tests.
    StepLosses train_step(const std::vector<const Sample*>& labeled,
                          const std::vector<std::pair<const Sample*, const Sample*>>& pairs,
                          std::uint64_t epoch, std::uint64_t step);

private:
    struct EpochPlan {
        std::vector<const Sample*> labeled_order;
        std::vector<std::pair<const Sample*, const Sample*>> pairs;
        int steps = 0;
    };
    EpochPlan plan_epoch(std::uint64_t epoch) const;

    SegmentationModel& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    AdaptiveThreshold thresh_;
    std::vector<std::vector<double>> velocities_;
    std::uint64_t epoch_ = 0;
    std::uint64_t step_ = 0;
};

struct EvalResult {
    ConfusionCounts counts;
    Scores scores;
};

/// Micro-pooled scores over the dataset's test split (no augmentation,
/// argmax predictions, ties to class 0).
EvalResult evaluate(SegmentationModel& model, const Dataset& dataset);

/// metrics.csv line "split,ratio,seed,iou0,iou1,miou,acc"; append_metrics_csv
/// creates the file with its header when missing.
std::string metrics_csv_row(const std::string& split, const std::string& ratio,
                            std::uint64_t seed, const Scores& s);
void append_metrics_csv(const std::string& path, const std::string& split,
                        const std::string& ratio, std::uint64_t seed, const Scores& s);

} // namespace cloudmatch
