#pragma once

#include <cstdint>

#include "cloudmatch/image.hpp"

namespace cloudmatch {

/// Micro-pooled binary confusion counts (class 1 = cloud = positive).
/// Accumulate over any number of prediction/target pairs, merge across
/// shards, then read the scores once; pooling before scoring makes shard
/// order irrelevant.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }

    ConfusionCounts& operator+=(const ConfusionCounts& other) {
        tp += other.tp;
        tn += other.tn;
        fp += other.fp;
        fn += other.fn;
        return *this;
    }
};

struct Scores {
    double iou0 = 0.0;
    double iou1 = 0.0;
    double miou = 0.0;
    double acc = 0.0;
};

/// Adds one binary prediction/target raster pair ([1,H,W], values exactly 0
/// or 1) into the counts.
void accumulate(ConfusionCounts& counts, const Image& prediction, const Image& target);

/// iou0 = tn/(tn+fn+fp), iou1 = tp/(tp+fp+fn), miou = their mean,
/// acc = (tp+tn)/total. A 0/0 IoU term scores 1 (an absent class that was
/// never predicted is a perfect match).
Scores scores(const ConfusionCounts& counts);

} // namespace cloudmatch
