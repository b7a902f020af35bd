#include "cloudmatch/backbone.hpp"

#include <cmath>

#include "cloudmatch/errors.hpp"
#include "cloudmatch/rng.hpp"

namespace cloudmatch {

namespace {

struct LayerSpec {
    const char* name;
    int out_channels;
    int in_channels;
};

constexpr LayerSpec kLayers[] = {{"conv1", 8, 3}, {"conv2", 8, 8}, {"conv3", 2, 8}};
constexpr int kKernel = 3;

} // namespace

TinySegNet::TinySegNet() {
    for (const LayerSpec& layer : kLayers) {
        params_.push_back({std::string(layer.name) + ".weight",
                           Tensor::zeros({layer.out_channels, layer.in_channels, kKernel, kKernel},
                                         true)});
        params_.push_back(
            {std::string(layer.name) + ".bias", Tensor::zeros({layer.out_channels}, true)});
    }
}

TinySegNet TinySegNet::init_parameters(std::uint64_t seed) {
    TinySegNet net;
    Rng rng(seed);
    for (ParamEntry& entry : net.params_) {
        if (!entry.name.ends_with(".weight")) continue;
        const Shape& s = entry.tensor.shape();
        const double fan_in = static_cast<double>(s[1]) * s[2] * s[3];
        const double bound = std::sqrt(3.0 / fan_in);
        for (double& v : entry.tensor.mutable_values()) v = rng.uniform(-bound, bound);
    }
    return net;
}

Tensor TinySegNet::forward(const Tensor& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3)
        throw DimensionError("TinySegNet::forward: expected [3,H,W], got " + shape_to_string(s));
    if (s[1] < min_input_size() || s[2] < min_input_size())
        throw ContractError("TinySegNet::forward: input smaller than receptive field (" +
                            std::to_string(min_input_size()) + ")");

    Tensor x = image;
    const int pad = kKernel / 2;
    for (std::size_t layer = 0; layer < std::size(kLayers); ++layer) {
        const Tensor& weight = params_[2 * layer].tensor;
        const Tensor& bias = params_[2 * layer + 1].tensor;
        x = add_channel_bias(conv2d(x, weight, pad), bias);
        if (layer + 1 < std::size(kLayers)) x = relu(x);
    }
    return x;
}

int TinySegNet::parameter_count() {
    int count = 0;
    for (const LayerSpec& layer : kLayers)
        count += layer.out_channels * (layer.in_channels * kKernel * kKernel + 1);
    return count;
}

} // namespace cloudmatch
