#include "cloudmatch/losses.hpp"

#include <cmath>

#include "cloudmatch/errors.hpp"

namespace cloudmatch {

namespace {

constexpr double kLogFloor = 1e-12;

void require_probs_shape(const Tensor& t, const char* who) {
    const Shape& s = t.shape();
    if (s.size() != 3 || s[0] != 2)
        throw DimensionError(std::string(who) + ": expected [2,H,W], got " + shape_to_string(s));
}

} // namespace

double PseudoLabelMap::valid_fraction() const {
    if (valid.empty()) return 0.0;
    std::size_t n = 0;
    for (std::uint8_t v : valid) n += v;
    return static_cast<double>(n) / valid.size();
}

Tensor supervised_loss(const Tensor& probs, const Tensor& onehot_target) {
    require_probs_shape(probs, "supervised_loss");
    if (probs.shape() != onehot_target.shape())
        throw DimensionError("supervised_loss: probs " + shape_to_string(probs.shape()) +
                             " vs target " + shape_to_string(onehot_target.shape()));
    const std::int64_t hw = static_cast<std::int64_t>(probs.shape()[1]) * probs.shape()[2];
    auto tv = onehot_target.values();
    for (std::int64_t i = 0; i < hw; ++i) {
        const double a = tv[i], b = tv[hw + i];
        if ((a != 0.0 && a != 1.0) || (b != 0.0 && b != 1.0) || a + b != 1.0)
            throw ContractError("supervised_loss: target is not one-hot at pixel " +
                                std::to_string(i));
    }
    Tensor target = onehot_target.requires_grad() ? onehot_target.detach() : onehot_target;
    return neg(sum(target * log(clamp(probs, kLogFloor, 1.0)))) / static_cast<double>(hw);
}

PseudoLabelMap make_pseudolabel(const Tensor& weak_probs, double threshold) {
    require_probs_shape(weak_probs, "make_pseudolabel");
    if (threshold < 0.0 || threshold > 1.0)
        throw ContractError("make_pseudolabel: threshold outside [0,1]");
    const int h = weak_probs.shape()[1];
    const int w = weak_probs.shape()[2];
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    auto v = weak_probs.values();

    PseudoLabelMap out;
    out.height = h;
    out.width = w;
    out.hard.resize(hw);
    out.confidence.resize(hw);
    out.valid.resize(hw);
    for (std::int64_t i = 0; i < hw; ++i) {
        const double p0 = v[i], p1 = v[hw + i];
        const std::uint8_t cls = p1 > p0 ? 1 : 0;
        const double conf = cls ? p1 : p0;
        out.hard[i] = cls;
        out.confidence[i] = conf;
        out.valid[i] = conf > threshold ? 1 : 0;
    }
    return out;
}

PseudoLabelMap filter_by_strong_confidence(const PseudoLabelMap& labels,
                                           const Tensor& strong_probs, double tau) {
    require_probs_shape(strong_probs, "filter_by_strong_confidence");
    if (strong_probs.shape()[1] != labels.height || strong_probs.shape()[2] != labels.width)
        throw DimensionError("filter_by_strong_confidence: label map size mismatch");
    const std::int64_t hw = static_cast<std::int64_t>(labels.height) * labels.width;
    auto v = strong_probs.values();
    PseudoLabelMap out = labels;
    for (std::int64_t i = 0; i < hw; ++i) {
        if (!out.valid[i]) continue;
        const double p = out.hard[i] ? v[hw + i] : v[i];
        out.valid[i] = p > tau ? 1 : 0;
    }
    return out;
}

Tensor w2s_loss(const Tensor& strong_probs, const PseudoLabelMap& labels) {
    require_probs_shape(strong_probs, "w2s_loss");
    const int h = strong_probs.shape()[1];
    const int w = strong_probs.shape()[2];
    if (h != labels.height || w != labels.width)
        throw DimensionError("w2s_loss: probs " + shape_to_string(strong_probs.shape()) +
                             " vs labels " + std::to_string(labels.height) + "x" +
                             std::to_string(labels.width));
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;

    std::vector<double> weights(2 * hw, 0.0);
    for (std::int64_t i = 0; i < hw; ++i)
        if (labels.valid[i]) weights[labels.hard[i] * hw + i] = 1.0;
    Tensor weight = Tensor::from_data(strong_probs.shape(), std::move(weights));
    return neg(sum(weight * log(clamp(strong_probs, kLogFloor, 1.0)))) / static_cast<double>(hw);
}

std::pair<Tensor, Tensor> mix_weak_features(const Tensor& z_w1a, const Tensor& z_w2a,
                                            const Tensor& z_wb, const RectMask& m1,
                                            const RectMask& m2) {
    Tensor a1 = z_w1a.detach();
    Tensor a2 = z_w2a.detach();
    Tensor b = z_wb.detach();
    return {mix_values(a1, a2, m1), mix_values(a2, b, m2)};
}

Tensor view_consistency_loss(const Tensor& weak_logits, const Tensor& strong_logits, double eps) {
    const Shape& s = weak_logits.shape();
    if (s != strong_logits.shape())
        throw DimensionError("view_consistency_loss: shapes " + shape_to_string(s) + " vs " +
                             shape_to_string(strong_logits.shape()) + " differ");
    if (s.size() != 3) throw DimensionError("view_consistency_loss: expected [C,H,W]");

    Tensor weak = weak_logits.detach();
    Tensor acc = Tensor::scalar(0.0);
    for (int j = 0; j < s[0]; ++j) {
        Tensor zw = zscore_normalize(channel(weak, j), eps);
        Tensor zs = zscore_normalize(channel(strong_logits, j), eps);
        Tensor diff = zw - zs;
        acc = acc + mean(diff * diff);
    }
    return acc;
}

void update_adaptive_threshold(AdaptiveThreshold& state, const std::vector<double>& confidences) {
    if (confidences.empty()) throw ContractError("update_adaptive_threshold: empty batch");
    double sum = 0.0;
    for (double c : confidences) {
        if (c < 0.0 || c > 1.0)
            throw ContractError("update_adaptive_threshold: confidence outside [0,1]");
        sum += c;
    }
    const double batch_mean = sum / confidences.size();
    state.ema = state.momentum * state.ema + (1.0 - state.momentum) * batch_mean;
    state.tau = std::min(std::max(state.ema, state.floor), 0.99);
}

Tensor total_loss(const Tensor& sup, const Tensor& w2s_aa, const Tensor& w2s_ab,
                  const Tensor& vc_aa, const Tensor& vc_ab, const LossWeights& weights) {
    if (weights.lambda_w2s < 0.0 || weights.lambda_vc < 0.0)
        throw ContractError("total_loss: negative loss weight");
    for (const Tensor* t : {&sup, &w2s_aa, &w2s_ab, &vc_aa, &vc_ab})
        if (t->item() < -1e-12)
            throw ContractError("total_loss: component losses must be non-negative");
    return sup + weights.lambda_w2s * (w2s_aa + w2s_ab) + weights.lambda_vc * (vc_aa + vc_ab);
}

} // namespace cloudmatch
