#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cloudmatch/augment.hpp"
#include "cloudmatch/tensor.hpp"

namespace cloudmatch {

/// Hard pseudo-labels for one view: per-pixel argmax class, its confidence,
/// and whether the pixel cleared the confidence threshold.
struct PseudoLabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> hard;
    std::vector<double> confidence;
    std::vector<std::uint8_t> valid;

    double valid_fraction() const;
};

struct LossWeights {
    double lambda_w2s = 0.5;
    double lambda_vc = 0.5;
};

/// Confidence threshold that tracks an EMA of the mean max-probability and
/// clamps it to [floor, 0.99]. Starts at the floor so early low-confidence
/// epochs do not flood training with noisy pseudo-labels.
struct AdaptiveThreshold {
    double ema = 0.5;
    double tau = 0.5;
    double momentum = 0.999;
    double floor = 0.5;
};

/// Pixel-mean cross-entropy against a one-hot target [2,H,W]. Probabilities
/// are clamped to [1e-12, 1] before the log. Zero exactly when the prediction
/// matches the target exactly.
Tensor supervised_loss(const Tensor& probs, const Tensor& onehot_target);

/// Builds hard pseudo-labels from weak-view probabilities [2,H,W]. Reads
/// values only, so no gradient ever flows back through the labels. A pixel is
/// valid iff its max probability is strictly above the threshold; an exact
/// two-way tie resolves to class 0 (and can never clear a threshold >= 0.5).
PseudoLabelMap make_pseudolabel(const Tensor& weak_probs, double threshold);

/// Drops pseudo-labels whose class is not also predicted confidently
/// (strictly above tau) by the strong view. Used by the alternative
/// confidence source; the default keeps the weak-view confidence as-is.
PseudoLabelMap filter_by_strong_confidence(const PseudoLabelMap& labels,
                                           const Tensor& strong_probs, double tau);

/// Pixel-mean cross-entropy of the strong-view probabilities against hard
/// pseudo-labels, counting only valid pixels (invalid pixels contribute zero
/// loss and zero gradient). Denominator is all pixels, so sparse label maps
/// shrink the loss instead of renormalizing it.
Tensor w2s_loss(const Tensor& strong_probs, const PseudoLabelMap& labels);

/// Composes the weak-branch mixing targets from the three weak logit maps.
/// Inputs are detached copies; the mixing geometry must be the bundle's.
///   target_aa = m1 ? z_w1a : z_w2a,  target_ab = m2 ? z_w2a : z_wb
std::pair<Tensor, Tensor> mix_weak_features(const Tensor& z_w1a, const Tensor& z_w2a,
                                            const Tensor& z_wb, const RectMask& m1,
                                            const RectMask& m2);

/// View-consistency loss: per-channel z-score normalization of both logit
/// maps, then the squared difference averaged over pixels and summed over
/// channels. The weak side is detached inside. Normalization makes the loss
/// invariant to positive affine rescaling of either side, and a constant
/// channel normalizes to zeros instead of exploding.
Tensor view_consistency_loss(const Tensor& weak_logits, const Tensor& strong_logits,
                             double eps = 1e-6);

/// EMA update from the mean max-confidence of one batch, then re-clamp.
/// Called once per training step, before pseudo-labels are cut.
void update_adaptive_threshold(AdaptiveThreshold& state, const std::vector<double>& confidences);

/// total = sup + lambda_w2s * (w2s_aa + w2s_ab) + lambda_vc * (vc_aa + vc_ab)
Tensor total_loss(const Tensor& sup, const Tensor& w2s_aa, const Tensor& w2s_ab,
                  const Tensor& vc_aa, const Tensor& vc_ab, const LossWeights& weights);

} // namespace cloudmatch
