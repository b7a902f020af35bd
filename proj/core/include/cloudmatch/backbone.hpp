#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudmatch/tensor.hpp"

namespace cloudmatch {

struct ParamEntry {
    std::string name;
    Tensor tensor;
};

/// A pixel-dense two-class segmentation network. The trainer only touches
/// this interface, so backbones are swappable without changing the loss
/// pipeline.
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;

    /// Maps a normalized image [3,H,W] to per-class logits [2,H,W].
    virtual Tensor forward(const Tensor& image) const = 0;

    /// Trainable parameters in a stable, named order (drives optimizer slots
    /// and checkpoint layout).
    virtual std::vector<ParamEntry>& parameters() = 0;

    /// Smallest H and W forward() accepts (the receptive-field diameter).
    virtual int min_input_size() const = 0;
};

/// Three stacked 3x3 conv layers (3 -> 8 -> 8 -> 2 channels) with ReLU
/// between them, shape-preserving padding, under 1000 parameters. Small
/// enough to train on a CPU while still seeing a 7x7 neighborhood per pixel.
class TinySegNet final : public SegmentationModel {
public:
    /// Builds the network with weights drawn from U(+-sqrt(3/fan_in)) (which
    /// has std 1/sqrt(fan_in)) and zero biases.
    static TinySegNet init_parameters(std::uint64_t seed);

    /// Builds with zero weights; used when loading a checkpoint over it.
    TinySegNet();

    Tensor forward(const Tensor& image) const override;
    std::vector<ParamEntry>& parameters() override { return params_; }
    int min_input_size() const override { return 7; }

    static int parameter_count();

private:
    std::vector<ParamEntry> params_;
};

} // namespace cloudmatch
