#include "cloudmatch/metrics.hpp"

#include "cloudmatch/errors.hpp"

namespace cloudmatch {

void accumulate(ConfusionCounts& counts, const Image& prediction, const Image& target) {
    if (!prediction.same_shape(target))
        throw DimensionError("accumulate: prediction and target shapes differ");
    if (prediction.channels != 1)
        throw DimensionError("accumulate: expected single-channel rasters");
    for (std::size_t i = 0; i < prediction.data.size(); ++i) {
        const double p = prediction.data[i];
        const double t = target.data[i];
        if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0))
            throw ContractError("accumulate: rasters must be binary 0/1");
        if (p == 1.0)
            t == 1.0 ? ++counts.tp : ++counts.fp;
        else
            t == 1.0 ? ++counts.fn : ++counts.tn;
    }
}

Scores scores(const ConfusionCounts& counts) {
    if (counts.total() == 0) throw ContractError("scores: empty confusion counts");
    const auto iou = [](std::uint64_t inter, std::uint64_t uni) {
        return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    };
    Scores s;
    s.iou0 = iou(counts.tn, counts.tn + counts.fn + counts.fp);
    s.iou1 = iou(counts.tp, counts.tp + counts.fp + counts.fn);
    s.miou = 0.5 * (s.iou0 + s.iou1);
    s.acc = static_cast<double>(counts.tp + counts.tn) / counts.total();
    return s;
}

} // namespace cloudmatch
