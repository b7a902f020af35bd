// Release gate. Runs every acceptance check end to end and prints one
// [PASS]/[FAIL] line per gate on stdout; progress and per-run detail go to
// stderr. Optional integer arguments select a subset of gates. Exit code is
// the number of failed gates.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <span>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cloudmatch/augment.hpp"
#include "cloudmatch/backbone.hpp"
#include "cloudmatch/data.hpp"
#include "cloudmatch/image.hpp"
#include "cloudmatch/losses.hpp"
#include "cloudmatch/metrics.hpp"
#include "cloudmatch/rng.hpp"
#include "cloudmatch/tensor.hpp"
#include "cloudmatch/train.hpp"

#include "support.hpp"

using namespace cloudmatch;
using cloudmatch::test::fd_compare;
using cloudmatch::test::random_image;
using cloudmatch::test::random_probs;
using cloudmatch::test::random_tensor;
using cloudmatch::test::scratch_dir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

struct GateResult {
    bool ok = false;
    std::string detail;
};

std::string file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return {};
    std::string bytes;
    char chunk[65536];
    std::size_t n = 0;
    while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) bytes.append(chunk, n);
    std::fclose(f);
    return bytes;
}

// ---------------------------------------------------------------- gate 1

Shape random_chw(Rng& rng) {
    return {2 + static_cast<int>(rng.uniform_int(2)), 3 + static_cast<int>(rng.uniform_int(3)),
            3 + static_cast<int>(rng.uniform_int(3))};
}

// Values pushed away from a kink at `edge` so central differences stay clean.
Tensor away_from(Shape shape, Rng& rng, double lo, double hi, double edge, double margin) {
    Tensor t = random_tensor(std::move(shape), rng, lo, hi);
    for (double& v : t.mutable_values()) {
        if (std::fabs(v - edge) < margin) v += 2.0 * margin;
        if (std::fabs(v + edge) < margin) v -= 2.0 * margin;
    }
    return t;
}

struct OpCheck {
    const char* name;
    std::function<double(Rng&)> instance; // max rel err of one random instance
};

std::vector<OpCheck> op_checks() {
    std::vector<OpCheck> ops;
    ops.push_back({"add", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0),
                                                     random_tensor(s, rng, -2.0, 2.0)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum((leaves[0] + leaves[1]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"sub", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0),
                                                     random_tensor(s, rng, -2.0, 2.0)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum((leaves[0] - leaves[1]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"mul", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0),
                                                     random_tensor(s, rng, -2.0, 2.0)};
                       auto f = [&] { return sum(leaves[0] * leaves[1]); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"div", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       Tensor denom = random_tensor(s, rng, 0.5, 2.5);
                       if (rng.bernoulli(0.5))
                           for (double& v : denom.mutable_values()) v = -v;
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0), denom};
                       auto f = [&] { return sum(leaves[0] / leaves[1]); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"scalar-add", [](Rng& rng) {
                       const double c = rng.uniform(-3.0, 3.0);
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum((leaves[0] + c) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"scalar-rsub", [](Rng& rng) {
                       const double c = rng.uniform(-3.0, 3.0);
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum((c - leaves[0]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"scalar-mul", [](Rng& rng) {
                       const double c = rng.uniform(-3.0, 3.0);
                       std::vector<Tensor> leaves = {random_tensor(random_chw(rng), rng)};
                       auto f = [&] { return sum(leaves[0] * c); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"scalar-div", [](Rng& rng) {
                       const double c = rng.bernoulli(0.5) ? rng.uniform(0.5, 3.0)
                                                           : rng.uniform(-3.0, -0.5);
                       std::vector<Tensor> leaves = {random_tensor(random_chw(rng), rng)};
                       auto f = [&] { return sum(leaves[0] / c); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"neg", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum(neg(leaves[0]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"relu", [](Rng& rng) {
                       std::vector<Tensor> leaves = {
                           away_from(random_chw(rng), rng, -1.5, 1.5, 0.0, 0.05)};
                       auto f = [&] { return sum(relu(leaves[0])); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"clamp", [](Rng& rng) {
                       std::vector<Tensor> leaves = {
                           away_from(random_chw(rng), rng, -1.5, 1.5, 0.8, 0.06)};
                       auto f = [&] { return sum(clamp(leaves[0], -0.8, 0.8)); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"log", [](Rng& rng) {
                       std::vector<Tensor> leaves = {
                           random_tensor(random_chw(rng), rng, 0.3, 3.0)};
                       auto f = [&] { return sum(log(leaves[0])); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"sqrt", [](Rng& rng) {
                       std::vector<Tensor> leaves = {
                           random_tensor(random_chw(rng), rng, 0.3, 3.0)};
                       auto f = [&] { return sum(sqrt(leaves[0])); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"sum", [](Rng& rng) {
                       std::vector<Tensor> leaves = {random_tensor(random_chw(rng), rng)};
                       auto f = [&] { return sum(leaves[0]); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"mean", [](Rng& rng) {
                       std::vector<Tensor> leaves = {random_tensor(random_chw(rng), rng)};
                       auto f = [&] { return mean(leaves[0]); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"conv2d", [](Rng& rng) {
                       const int cin = 1 + static_cast<int>(rng.uniform_int(3));
                       const int cout = 1 + static_cast<int>(rng.uniform_int(2));
                       const int k = rng.bernoulli(0.5) ? 3 : 1;
                       const int pad = (k == 3 && rng.bernoulli(0.5)) ? 1 : 0;
                       const int h = 3 + static_cast<int>(rng.uniform_int(3));
                       const int w = 3 + static_cast<int>(rng.uniform_int(3));
                       std::vector<Tensor> leaves = {
                           random_tensor({cin, h, w}, rng),
                           random_tensor({cout, cin, k, k}, rng)};
                       Tensor wout = random_tensor(
                           {cout, h + 2 * pad - k + 1, w + 2 * pad - k + 1}, rng, -1.0, 1.0,
                           false);
                       auto f = [&] { return sum(conv2d(leaves[0], leaves[1], pad) * wout); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"add-channel-bias", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng),
                                                     random_tensor({s[0]}, rng)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum(add_channel_bias(leaves[0], leaves[1]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"softmax-channels", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum(softmax_channels(leaves[0]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"channel", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       const int j = static_cast<int>(rng.uniform_int(s[0]));
                       std::vector<Tensor> leaves = {random_tensor(s, rng)};
                       Tensor w = random_tensor({s[1], s[2]}, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum(channel(leaves[0], j) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"zscore-normalize", [](Rng& rng) {
                       Shape s = random_chw(rng);
                       std::vector<Tensor> leaves = {random_tensor(s, rng, -2.0, 2.0)};
                       Tensor w = random_tensor(s, rng, -1.0, 1.0, false);
                       auto f = [&] { return sum(zscore_normalize(leaves[0]) * w); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"supervised-loss", [](Rng& rng) {
                       const int h = 3 + static_cast<int>(rng.uniform_int(2));
                       const int w = 3 + static_cast<int>(rng.uniform_int(2));
                       Tensor target = Tensor::zeros({2, h, w});
                       std::span<double> tv = target.mutable_values();
                       const std::size_t hw = static_cast<std::size_t>(h) * w;
                       for (std::size_t i = 0; i < hw; ++i)
                           tv[(rng.bernoulli(0.5) ? hw : 0) + i] = 1.0;
                       std::vector<Tensor> leaves = {random_tensor({2, h, w}, rng, -2.0, 2.0)};
                       auto f = [&] {
                           return supervised_loss(softmax_channels(leaves[0]), target);
                       };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"w2s-loss", [](Rng& rng) {
                       const int h = 3 + static_cast<int>(rng.uniform_int(2));
                       const int w = 3 + static_cast<int>(rng.uniform_int(2));
                       PseudoLabelMap labels = make_pseudolabel(random_probs(h, w, rng), 0.55);
                       std::vector<Tensor> leaves = {random_tensor({2, h, w}, rng, -2.0, 2.0)};
                       auto f = [&] { return w2s_loss(softmax_channels(leaves[0]), labels); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    ops.push_back({"view-consistency-loss", [](Rng& rng) {
                       const int h = 3 + static_cast<int>(rng.uniform_int(2));
                       const int w = 3 + static_cast<int>(rng.uniform_int(2));
                       Tensor weak = random_tensor({2, h, w}, rng, -2.0, 2.0, false);
                       std::vector<Tensor> leaves = {random_tensor({2, h, w}, rng, -2.0, 2.0)};
                       auto f = [&] { return view_consistency_loss(weak, leaves[0]); };
                       return fd_compare(leaves, f).max_rel;
                   }});
    return ops;
}

// One random instance of the full training objective with the weak branch
// frozen at the current parameters, exactly as one optimization step sees it.
double composed_loss_fd(int instance) {
    Rng rng(Rng::mix({0xACCEull, static_cast<std::uint64_t>(instance)}));
    TinySegNet model = TinySegNet::init_parameters(1000 + instance);
    const int hw = 8;

    Tensor xl = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    Tensor target = Tensor::zeros({2, hw, hw});
    std::span<double> tv = target.mutable_values();
    for (int i = 0; i < hw * hw; ++i) tv[(rng.bernoulli(0.5) ? hw * hw : 0) + i] = 1.0;

    Tensor x_aa = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    Tensor x_ab = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    Tensor w1a = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    Tensor w2a = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    Tensor wb = random_tensor({3, hw, hw}, rng, -2.0, 2.0, false);
    RectMask m1 = sample_rect_mask(rng, hw, hw, 0.02, 0.4, 0.3, 1.0 / 0.3);
    RectMask m2 = sample_rect_mask(rng, hw, hw, 0.02, 0.4, 0.3, 1.0 / 0.3);

    Tensor z_w1a = model.forward(w1a).detach();
    Tensor z_w2a = model.forward(w2a).detach();
    Tensor z_wb = model.forward(wb).detach();
    auto [z_aa_w, z_ab_w] = mix_weak_features(z_w1a, z_w2a, z_wb, m1, m2);
    PseudoLabelMap lab_aa = make_pseudolabel(softmax_channels(z_aa_w), 0.55);
    PseudoLabelMap lab_ab = make_pseudolabel(softmax_channels(z_ab_w), 0.55);
    const LossWeights weights;

    std::vector<Tensor> leaves;
    for (ParamEntry& p : model.parameters()) leaves.push_back(p.tensor);
    auto f = [&] {
        Tensor sup = supervised_loss(softmax_channels(model.forward(xl)), target);
        Tensor z_aa_s = model.forward(x_aa);
        Tensor z_ab_s = model.forward(x_ab);
        return total_loss(sup, w2s_loss(softmax_channels(z_aa_s), lab_aa),
                          w2s_loss(softmax_channels(z_ab_s), lab_ab),
                          view_consistency_loss(z_aa_w, z_aa_s),
                          view_consistency_loss(z_ab_w, z_ab_s), weights);
    };
    return fd_compare(leaves, f).max_rel;
}

GateResult gate_gradients() {
    const auto t0 = Clock::now();
    const int instances = 20;
    double worst = 0.0;
    std::string worst_op = "none";
    const std::vector<OpCheck> ops = op_checks();
    for (std::size_t oi = 0; oi < ops.size(); ++oi) {
        for (int inst = 0; inst < instances; ++inst) {
            Rng rng(Rng::mix({0x6A0Dull, oi, static_cast<std::uint64_t>(inst)}));
            const double rel = ops[oi].instance(rng);
            if (rel > worst) {
                worst = rel;
                worst_op = ops[oi].name;
            }
        }
    }
    double worst_composed = 0.0;
    for (int inst = 0; inst < instances; ++inst)
        worst_composed = std::max(worst_composed, composed_loss_fd(inst));
    const double elapsed = seconds_since(t0);
    const bool ok = worst < 1e-4 && worst_composed < 1e-4 && elapsed < 120.0;
    return {ok, fmt("max rel err %.2e (%zu ops x %d instances, worst %s), composed objective "
                    "%.2e (%d instances); %.1fs of 120s budget",
                    worst, ops.size(), instances, worst_op.c_str(), worst_composed, instances,
                    elapsed)};
}

// ---------------------------------------------------------------- gate 2

GateResult gate_loss_oracles() {
    Rng rng(0x2212);
    double worst = 0.0;

    for (int trial = 0; trial < 25; ++trial) {
        Tensor probs = random_probs(4, 4, rng);
        std::vector<int> classes(16);
        for (int& c : classes) c = rng.bernoulli(0.5) ? 1 : 0;
        Tensor target = Tensor::zeros({2, 4, 4});
        std::span<double> tv = target.mutable_values();
        for (int i = 0; i < 16; ++i) tv[classes[i] * 16 + i] = 1.0;
        double expect = 0.0;
        for (int i = 0; i < 16; ++i) {
            const double p = probs.values()[classes[i] * 16 + i];
            expect -= std::log(std::min(std::max(p, 1e-12), 1.0));
        }
        expect /= 16.0;
        worst = std::max(worst, std::fabs(supervised_loss(probs, target).item() - expect));
    }

    for (int trial = 0; trial < 25; ++trial) {
        Tensor weak = random_probs(4, 4, rng);
        const double thr = rng.uniform(0.5, 0.9);
        PseudoLabelMap labels = make_pseudolabel(weak, thr);
        Tensor strong = random_probs(4, 4, rng);
        double expect = 0.0;
        for (int i = 0; i < 16; ++i) {
            if (!labels.valid[i]) continue;
            const double p = strong.values()[labels.hard[i] * 16 + i];
            expect -= std::log(std::min(std::max(p, 1e-12), 1.0));
        }
        expect /= 16.0;
        worst = std::max(worst, std::fabs(w2s_loss(strong, labels).item() - expect));
    }

    for (int trial = 0; trial < 25; ++trial) {
        Tensor weak = random_tensor({2, 4, 4}, rng, -3.0, 3.0, false);
        Tensor strong = random_tensor({2, 4, 4}, rng, -3.0, 3.0, false);
        if (trial == 0) strong = weak;                          // identical input
        if (trial == 1)
            for (double& v : weak.mutable_values()) v = 1.25;   // constant channels
        double expect = 0.0;
        for (int c = 0; c < 2; ++c) {
            std::array<double, 16> zw{}, zs{};
            for (const auto& [src, dst] :
                 {std::pair{&weak, &zw}, std::pair{&strong, &zs}}) {
                double mu = 0.0;
                for (int i = 0; i < 16; ++i) mu += src->values()[c * 16 + i];
                mu /= 16.0;
                double var = 0.0;
                for (int i = 0; i < 16; ++i) {
                    const double d = src->values()[c * 16 + i] - mu;
                    var += d * d;
                }
                const double sd = std::sqrt(var / 16.0);
                for (int i = 0; i < 16; ++i)
                    (*dst)[i] = sd <= 1e-6 ? 0.0 : (src->values()[c * 16 + i] - mu) / sd;
            }
            double ch = 0.0;
            for (int i = 0; i < 16; ++i) ch += (zw[i] - zs[i]) * (zw[i] - zs[i]);
            expect += ch / 16.0;
        }
        worst = std::max(worst,
                         std::fabs(view_consistency_loss(weak, strong).item() - expect));
    }

    for (int trial = 0; trial < 25; ++trial) {
        const LossWeights weights{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
        const double s = rng.uniform(0.0, 3.0), waa = rng.uniform(0.0, 3.0),
                     wab = rng.uniform(0.0, 3.0), vaa = rng.uniform(0.0, 3.0),
                     vab = rng.uniform(0.0, 3.0);
        const double expect =
            s + weights.lambda_w2s * (waa + wab) + weights.lambda_vc * (vaa + vab);
        const double got =
            total_loss(Tensor::scalar(s), Tensor::scalar(waa), Tensor::scalar(wab),
                       Tensor::scalar(vaa), Tensor::scalar(vab), weights)
                .item();
        worst = std::max(worst, std::fabs(got - expect));
    }

    // frozen hand-computed values
    Tensor uni_target = Tensor::zeros({2, 2, 2});
    uni_target.mutable_values()[0] = uni_target.mutable_values()[1] = 1.0;
    uni_target.mutable_values()[6] = uni_target.mutable_values()[7] = 1.0;
    worst = std::max(worst, std::fabs(supervised_loss(Tensor::full({2, 2, 2}, 0.5), uni_target)
                                          .item() -
                                      0.6931471805599453));
    Tensor vw = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 1, 2, 3, 4});
    Tensor vs = Tensor::from_data({2, 2, 2}, {1, 2, 3, 5, 1, 2, 3, 4});
    worst = std::max(worst, std::fabs(view_consistency_loss(vw, vs).item() -
                                      0.03458474035201843));

    return {worst < 1e-10, fmt("max abs deviation %.2e from scalar brute force "
                               "(100 instances + frozen hand values), tolerance 1e-10",
                               worst)};
}

// ---------------------------------------------------------------- gate 3

GateResult gate_mixing() {
    Rng rng(0x3313);
    long long identity_px = 0, oracle_px = 0, mismatches = 0;

    for (int trial = 0; trial < 50; ++trial) {
        Image a = random_image(3, 16, 16, rng);
        Image b = random_image(3, 16, 16, rng);
        RectMask m = sample_rect_mask(rng, 16, 16, 0.02, 0.4, 0.3, 1.0 / 0.3);
        const Image full_mix = mix(a, b, RectMask::full(16, 16));
        const Image empty_mix = mix(a, b, RectMask{});
        const Image same_mix = mix(a, a, m);
        Tensor ta = to_tensor(a), tb = to_tensor(b);
        const Tensor tfull = mix_values(ta, tb, RectMask::full(16, 16));
        const Tensor tempty = mix_values(ta, tb, RectMask{});
        const Tensor tsame = mix_values(ta, ta, m);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            if (full_mix.data[i] != a.data[i]) ++mismatches;
            if (empty_mix.data[i] != b.data[i]) ++mismatches;
            if (same_mix.data[i] != a.data[i]) ++mismatches;
            if (tfull.values()[i] != a.data[i]) ++mismatches;
            if (tempty.values()[i] != b.data[i]) ++mismatches;
            if (tsame.values()[i] != a.data[i]) ++mismatches;
            identity_px += 6;
        }
    }

    AugConfig cfg;
    cfg.patch_size = 32;
    for (int trial = 0; trial < 100; ++trial) {
        Image sa = random_image(3, 40, 40, rng);
        Image sb = random_image(3, 40, 40, rng);
        ViewBundle vb = make_views(sa, sb, Rng::mix({0xB1Dull, static_cast<std::uint64_t>(trial)}),
                                   cfg);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x) {
                    const double want_aa = vb.m1.contains(y, x) ? vb.s1a.at(c, y, x)
                                                                : vb.s2a.at(c, y, x);
                    const double want_ab = vb.m2.contains(y, x) ? vb.s2a.at(c, y, x)
                                                                : vb.sb.at(c, y, x);
                    if (vb.x_aa.at(c, y, x) != want_aa) ++mismatches;
                    if (vb.x_ab.at(c, y, x) != want_ab) ++mismatches;
                    oracle_px += 2;
                }
    }

    return {mismatches == 0,
            fmt("%lld identity values + %lld composite values checked for exact equality, "
                "%lld mismatches",
                identity_px, oracle_px, mismatches)};
}

// ---------------------------------------------------------------- gate 4

GateResult gate_mask_geometry() {
    const int n = 100000, grid = 96;
    const double area_min = 0.02, area_max = 0.4, aspect_min = 0.3, aspect_max = 1.0 / 0.3;
    Rng rng(0x4414);
    std::vector<double> areas;
    areas.reserve(n);
    int violations = 0;
    for (int i = 0; i < n; ++i) {
        const RectMask m =
            sample_rect_mask(rng, grid, grid, area_min, area_max, aspect_min, aspect_max);
        const bool in_bounds = m.y0 >= 0 && m.x0 >= 0 && m.h >= 1 && m.w >= 1 &&
                               m.y0 + m.h <= grid && m.x0 + m.w <= grid;
        const double area = static_cast<double>(m.h) * m.w / (grid * grid);
        const double aspect = static_cast<double>(m.w) / m.h;
        if (!in_bounds || area < area_min || area > area_max || aspect < aspect_min ||
            aspect > aspect_max)
            ++violations;
        areas.push_back(area);
    }
    std::sort(areas.begin(), areas.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = std::min(1.0, std::max(0.0, (areas[i] - area_min) /
                                                         (area_max - area_min)));
        ks = std::max(ks, std::max(f - static_cast<double>(i) / n,
                                   static_cast<double>(i + 1) / n - f));
    }
    return {violations == 0 && ks < 0.02,
            fmt("%d masks on %dx%d: %d bounds/area/aspect violations, KS vs uniform area "
                "%.4f (limit 0.02)",
                n, grid, grid, violations, ks)};
}

// ---------------------------------------------------------------- gate 5

GateResult gate_affine_invariance() {
    Rng rng(0x5515);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor z = random_tensor({2, 8, 8}, rng, -3.0, 3.0, false);
        const double a = rng.uniform(0.1, 10.0);
        const double b = rng.uniform(-20.0, 20.0);
        worst = std::max(worst, view_consistency_loss(z, z * a + b).item());
    }
    return {worst < 1e-8,
            fmt("consistency(z, a*z+b) max %.2e over 50 random positive-affine draws, "
                "limit 1e-8",
                worst)};
}

// ---------------------------------------------------------------- gate 6

GateResult gate_split_nesting() {
    std::vector<std::string> train_ids, test_ids;
    for (int i = 0; i < 200; ++i) train_ids.push_back(fmt("tr_%03d", i));
    for (int i = 0; i < 40; ++i) test_ids.push_back(fmt("te_%02d", i));
    std::vector<std::string> sorted_test = test_ids;
    std::sort(sorted_test.begin(), sorted_test.end());
    std::vector<std::string> sorted_train = train_ids;
    std::sort(sorted_train.begin(), sorted_train.end());

    int seeds_ok = 0;
    std::string first_problem;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto ms = hierarchical_split(train_ids, test_ids, seed);
        bool ok = ms[0].labeled_ids.size() == 50 && ms[1].labeled_ids.size() == 25 &&
                  ms[2].labeled_ids.size() == 12;
        std::array<std::vector<std::string>, 3> labeled;
        for (int r = 0; r < 3; ++r) {
            labeled[r] = ms[r].labeled_ids;
            std::sort(labeled[r].begin(), labeled[r].end());
            std::vector<std::string> unl = ms[r].unlabeled_ids;
            std::sort(unl.begin(), unl.end());
            std::vector<std::string> both;
            std::set_intersection(labeled[r].begin(), labeled[r].end(), unl.begin(), unl.end(),
                                  std::back_inserter(both));
            ok = ok && both.empty();
            std::vector<std::string> uni;
            std::set_union(labeled[r].begin(), labeled[r].end(), unl.begin(), unl.end(),
                           std::back_inserter(uni));
            ok = ok && uni == sorted_train;
            std::vector<std::string> t = ms[r].test_ids;
            std::sort(t.begin(), t.end());
            ok = ok && t == sorted_test;
        }
        ok = ok &&
             std::includes(labeled[1].begin(), labeled[1].end(), labeled[2].begin(),
                           labeled[2].end()) &&
             std::includes(labeled[0].begin(), labeled[0].end(), labeled[1].begin(),
                           labeled[1].end());
        if (ok)
            ++seeds_ok;
        else if (first_problem.empty())
            first_problem = fmt(" (seed %llu violated)", static_cast<unsigned long long>(seed));
    }

    std::vector<std::string> big_train, big_test;
    for (int i = 0; i < 10368; ++i) big_train.push_back(fmt("s%05d", i));
    for (int i = 0; i < 256; ++i) big_test.push_back(fmt("x%03d", i));
    const auto big = hierarchical_split(big_train, big_test, 1);
    const bool big_ok = big[0].labeled_ids.size() == 2592 && big[1].labeled_ids.size() == 1296 &&
                        big[2].labeled_ids.size() == 648;

    return {seeds_ok == 10 && big_ok,
            fmt("nesting/disjointness/test-invariance exact for %d of 10 seeds%s; "
                "10368 ids -> %zu/%zu/%zu labeled (want 2592/1296/648)",
                seeds_ok, first_problem.c_str(), big[0].labeled_ids.size(),
                big[1].labeled_ids.size(), big[2].labeled_ids.size())};
}

// ---------------------------------------------------------------- gate 7

GateResult gate_metric_equivalence() {
    Rng rng(0x7717);
    ConfusionCounts pooled;
    std::array<ConfusionCounts, 7> shards;
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (int pair = 0; pair < 1000; ++pair) {
        const double p_pred = rng.uniform(0.05, 0.95);
        const double p_gt = rng.uniform(0.05, 0.95);
        Image pred(1, 8, 8), gt(1, 8, 8);
        for (int i = 0; i < 64; ++i) {
            pred.data[i] = rng.bernoulli(p_pred) ? 1.0 : 0.0;
            gt.data[i] = rng.bernoulli(p_gt) ? 1.0 : 0.0;
        }
        accumulate(pooled, pred, gt);
        accumulate(shards[(pair * 7) / 1000], pred, gt);
        for (int i = 0; i < 64; ++i) {
            const bool p = pred.data[i] > 0.5, g = gt.data[i] > 0.5;
            if (p && g) ++tp;
            else if (!p && !g) ++tn;
            else if (p && !g) ++fp;
            else ++fn;
        }
    }
    const bool counts_ok =
        pooled.tp == tp && pooled.tn == tn && pooled.fp == fp && pooled.fn == fn;

    const Scores got = scores(pooled);
    const double iou0 = tn + fn + fp == 0 ? 1.0 : static_cast<double>(tn) / (tn + fn + fp);
    const double iou1 = tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp + fn);
    const double miou = 0.5 * (iou0 + iou1);
    const double acc = static_cast<double>(tp + tn) / (tp + tn + fp + fn);
    const bool scores_ok =
        got.iou0 == iou0 && got.iou1 == iou1 && got.miou == miou && got.acc == acc;

    ConfusionCounts merged;
    for (const ConfusionCounts& s : shards) merged += s;
    const Scores merged_scores = scores(merged);
    const bool merge_ok = merged.tp == pooled.tp && merged.tn == pooled.tn &&
                          merged.fp == pooled.fp && merged.fn == pooled.fn &&
                          merged_scores.iou0 == got.iou0 && merged_scores.iou1 == got.iou1 &&
                          merged_scores.miou == got.miou && merged_scores.acc == got.acc;

    return {counts_ok && scores_ok && merge_ok,
            fmt("1000 random 8x8 pairs: pooled counts %s per-pixel recount, scores %s "
                "brute formulas, 7-shard merge %s single pass (all exact)",
                counts_ok ? "match" : "MISMATCH", scores_ok ? "match" : "MISMATCH",
                merge_ok ? "matches" : "MISMATCHES")};
}

// ----------------------------------------------------------- gates 8 and 9

constexpr std::uint64_t kTagScene = 0x5343454eull;
constexpr std::uint64_t kTagCover = 0x434f5652ull;
constexpr std::uint64_t kTagTestSplit = 0x54455354ull;

// Benchmark runner shared by the gain and ablation gates. Generates the
// 200-scene synthetic dataset once, carves per-seed splits the same way the
// data-preparation tool does, and caches one training run per
// (variant, seed).
class Experiment {
public:
    struct Run {
        Scores scores;
        double seconds = 0.0;
    };

    const Run& run(const std::string& variant, std::uint64_t seed) {
        const std::string key = variant + "#" + std::to_string(seed);
        const auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;

        const Dataset& data = dataset(seed);
        TrainConfig cfg;
        cfg.labeled_ratio = "1/8";
        cfg.seed = seed;
        cfg.epochs = 80;
        if (variant == "supervised-only") cfg.supervised_only = true;
        if (variant == "no-vc") cfg.no_vc = true;
        if (variant == "no-inter-mix") cfg.no_inter_mix = true;
        if (variant == "no-intra-mix") cfg.no_intra_mix = true;
        cfg.validate();

        std::fprintf(stderr, "  training %s seed %llu (%d epochs)...\n", variant.c_str(),
                     static_cast<unsigned long long>(seed), cfg.epochs);
        std::fflush(stderr);
        const auto t0 = Clock::now();
        TinySegNet model = TinySegNet::init_parameters(cfg.seed);
        Trainer trainer(model, data, cfg);
        trainer.run(nullptr);
        const EvalResult ev = evaluate(model, data);
        Run r{ev.scores, seconds_since(t0)};
        std::fprintf(stderr, "  %s seed %llu: test mIoU %.4f (%.0fs)\n", variant.c_str(),
                     static_cast<unsigned long long>(seed), r.scores.miou, r.seconds);
        std::fflush(stderr);
        return cache_.emplace(key, r).first->second;
    }

    double mean_miou(const std::string& variant) {
        double sum = 0.0;
        for (std::uint64_t s = 1; s <= 3; ++s) sum += run(variant, s).scores.miou;
        return sum / 3.0;
    }

    std::vector<double> run_seconds(const std::vector<std::string>& variants) {
        std::vector<double> out;
        for (const std::string& v : variants)
            for (std::uint64_t s = 1; s <= 3; ++s) out.push_back(run(v, s).seconds);
        return out;
    }

    double setup_seconds() const { return setup_seconds_; }

private:
    void ensure_scenes() {
        if (!scenes_.empty()) return;
        const auto t0 = Clock::now();
        for (int i = 0; i < 200; ++i) {
            ids_.push_back(fmt("scene_%04d", i));
            Rng cover_rng(Rng::mix({1, kTagCover, static_cast<std::uint64_t>(i)}));
            scenes_.push_back(generate_synthetic_scene(
                Rng::mix({1, kTagScene, static_cast<std::uint64_t>(i)}), 96, 96,
                cover_rng.uniform(0.1, 0.5)));
        }
        setup_seconds_ += seconds_since(t0);
        std::fprintf(stderr, "  generated 200 synthetic scenes (%.0fs)\n", setup_seconds_);
    }

    const Dataset& dataset(std::uint64_t seed) {
        const auto it = datasets_.find(seed);
        if (it != datasets_.end()) return it->second;
        ensure_scenes();
        const auto t0 = Clock::now();

        std::vector<std::string> pool = ids_;
        Rng rng(Rng::mix({seed, kTagTestSplit}));
        for (std::size_t i = pool.size() - 1; i > 0; --i)
            std::swap(pool[i], pool[rng.uniform_int(i + 1)]);
        const std::size_t n_test = pool.size() / 5;
        std::vector<std::string> test_ids(pool.begin(), pool.begin() + n_test);
        std::vector<std::string> train_ids(pool.begin() + n_test, pool.end());
        std::sort(test_ids.begin(), test_ids.end());
        std::sort(train_ids.begin(), train_ids.end());

        Dataset data;
        data.manifest = hierarchical_split(train_ids, test_ids, seed)[1]; // ratio 1/8

        std::vector<const Image*> train_images;
        for (const std::string& id : train_ids) train_images.push_back(&scene(id).image);
        data.stats = compute_norm_stats(train_images);

        const auto add = [&](const std::string& id, SplitRole role, bool with_mask) {
            Sample s;
            s.id = id;
            s.image = scene(id).image;
            if (with_mask) s.mask = scene(id).mask;
            s.split = role;
            data.samples.emplace(id, std::move(s));
        };
        for (const std::string& id : data.manifest.labeled_ids)
            add(id, SplitRole::labeled, true);
        for (const std::string& id : data.manifest.unlabeled_ids)
            add(id, SplitRole::unlabeled, false);
        for (const std::string& id : data.manifest.test_ids) add(id, SplitRole::test, true);

        setup_seconds_ += seconds_since(t0);
        return datasets_.emplace(seed, std::move(data)).first->second;
    }

    const SyntheticScene& scene(const std::string& id) const {
        const auto pos = std::lower_bound(ids_.begin(), ids_.end(), id);
        return scenes_[static_cast<std::size_t>(pos - ids_.begin())];
    }

    std::vector<std::string> ids_;
    std::vector<SyntheticScene> scenes_;
    std::map<std::uint64_t, Dataset> datasets_;
    std::map<std::string, Run> cache_;
    double setup_seconds_ = 0.0;
};

// Longest-processing-time schedule of independent runs onto `workers` cores.
double lpt_makespan(std::vector<double> times, int workers) {
    std::sort(times.begin(), times.end(), std::greater<>());
    std::vector<double> load(static_cast<std::size_t>(workers), 0.0);
    for (double t : times)
        *std::min_element(load.begin(), load.end()) += t;
    return *std::max_element(load.begin(), load.end());
}

GateResult gate_ssl_gain(Experiment& exp) {
    const double full = exp.mean_miou("full");
    const double sup = exp.mean_miou("supervised-only");
    const double gain_pts = (full - sup) * 100.0;

    const std::vector<double> times = exp.run_seconds({"full", "supervised-only"});
    double serial = exp.setup_seconds();
    for (double t : times) serial += t;
    const double wall4 = exp.setup_seconds() + lpt_makespan(times, 4);

    const bool ok = gain_pts >= 2.0 && wall4 < 2700.0;
    return {ok, fmt("3-seed mean test mIoU %.2f (full) vs %.2f (supervised-only), gain %+.2f "
                    "points (need >= 2.00); est. 4-core wall %.1f min < 45 (serial total "
                    "%.1f min on this host)",
                    full * 100.0, sup * 100.0, gain_pts, wall4 / 60.0, serial / 60.0)};
}

GateResult gate_ablation_ordering(Experiment& exp) {
    const double full = exp.mean_miou("full") * 100.0;
    const double no_vc = exp.mean_miou("no-vc") * 100.0;
    const double no_inter = exp.mean_miou("no-inter-mix") * 100.0;
    const double no_intra = exp.mean_miou("no-intra-mix") * 100.0;

    std::vector<std::string> hard, soft;
    const auto order = [&](double hi, double lo, const std::string& what) {
        if (hi >= lo) return;
        if (lo - hi < 0.5)
            soft.push_back(fmt("%s inverted by %.2f (within 0.5 tolerance)", what.c_str(),
                               lo - hi));
        else
            hard.push_back(fmt("%s inverted by %.2f", what.c_str(), lo - hi));
    };
    order(full, no_vc, "full vs no-vc");
    order(full, no_inter, "full vs no-inter-mix");
    order(full, no_intra, "full vs no-intra-mix");
    order(no_inter, no_intra, "intra-removal-degrades-more");

    std::string detail =
        fmt("3-seed mean mIoU: full %.2f, no-vc %.2f, no-inter-mix %.2f, no-intra-mix %.2f",
            full, no_vc, no_inter, no_intra);
    for (const std::string& s : soft) detail += "; note: " + s;
    for (const std::string& s : hard) detail += "; " + s;
    return {hard.empty(), detail};
}

// ---------------------------------------------------------------- gate 10

GateResult gate_determinism() {
    std::vector<std::string> ids;
    std::vector<SyntheticScene> scenes;
    for (int i = 0; i < 24; ++i) {
        ids.push_back(fmt("d%02d", i));
        scenes.push_back(generate_synthetic_scene(9000 + i, 32, 32, 0.15 + 0.03 * (i % 8)));
    }
    std::vector<std::string> train_ids(ids.begin(), ids.begin() + 20);
    std::vector<std::string> test_ids(ids.begin() + 20, ids.end());

    Dataset data;
    data.manifest = hierarchical_split(train_ids, test_ids, 7)[1];
    std::vector<const Image*> train_images;
    for (int i = 0; i < 20; ++i) train_images.push_back(&scenes[i].image);
    data.stats = compute_norm_stats(train_images);
    for (int i = 0; i < 24; ++i) {
        Sample s;
        s.id = ids[i];
        s.image = scenes[i].image;
        s.mask = scenes[i].mask;
        data.samples.emplace(ids[i], std::move(s));
    }

    TrainConfig cfg;
    cfg.labeled_ratio = "1/8";
    cfg.seed = 7;
    cfg.epochs = 4;
    cfg.aug.patch_size = 24;
    cfg.validate();

    const std::string dir = scratch_dir("acceptance_determinism");
    const auto one_run = [&](const std::string& ckpt_path) {
        TinySegNet model = TinySegNet::init_parameters(cfg.seed);
        Trainer trainer(model, data, cfg);
        std::vector<std::string> rows;
        trainer.run([&](int epoch, const StepLosses& l, double) {
            rows.push_back(fmt("%d,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f", epoch, l.total,
                               l.sup, l.w2s_aa, l.w2s_ab, l.vc_aa, l.vc_ab, l.tau,
                               l.pseudo_valid_fraction));
        });
        write_checkpoint(ckpt_path, trainer.make_checkpoint());
        const EvalResult ev = evaluate(model, data);
        rows.push_back(metrics_csv_row("test", cfg.labeled_ratio, cfg.seed, ev.scores));
        return rows;
    };

    const std::vector<std::string> rows_a = one_run(dir + "/a.bin");
    const std::vector<std::string> rows_b = one_run(dir + "/b.bin");
    const std::string bytes_a = file_bytes(dir + "/a.bin");
    const std::string bytes_b = file_bytes(dir + "/b.bin");

    const bool ckpt_ok = !bytes_a.empty() && bytes_a == bytes_b;
    const bool rows_ok = !rows_a.empty() && rows_a == rows_b;
    return {ckpt_ok && rows_ok,
            fmt("repeated run: checkpoint %zu bytes %s, %zu log+metrics rows %s", bytes_a.size(),
                ckpt_ok ? "bit-identical" : "DIFFER", rows_a.size(),
                rows_ok ? "identical" : "DIFFER")};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        char* end = nullptr;
        const long g = std::strtol(argv[i], &end, 10);
        if (end == argv[i] || *end != '\0' || g < 1 || g > 10) {
            std::fprintf(stderr, "usage: %s [gate-number ...]   (gates 1-10, default all)\n",
                         argv[0]);
            return 2;
        }
        selected.insert(static_cast<int>(g));
    }
    const auto wants = [&](int g) { return selected.empty() || selected.count(g) > 0; };

    Experiment exp;
    const std::vector<std::pair<std::string, std::function<GateResult()>>> gates = {
        {"gradient suite", gate_gradients},
        {"loss value oracles", gate_loss_oracles},
        {"mixing identities", gate_mixing},
        {"rectangle mask geometry", gate_mask_geometry},
        {"consistency affine invariance", gate_affine_invariance},
        {"split nesting", gate_split_nesting},
        {"metric equivalence", gate_metric_equivalence},
        {"semi-supervised gain", [&] { return gate_ssl_gain(exp); }},
        {"ablation ordering", [&] { return gate_ablation_ordering(exp); }},
        {"bit-identical reruns", gate_determinism},
    };

    int failed = 0, ran = 0;
    for (int g = 1; g <= 10; ++g) {
        if (!wants(g)) continue;
        std::fprintf(stderr, "running gate %d (%s)...\n", g, gates[g - 1].first.c_str());
        std::fflush(stderr);
        GateResult r;
        try {
            r = gates[g - 1].second();
        } catch (const std::exception& e) {
            r = {false, fmt("threw: %s", e.what())};
        }
        ++ran;
        if (!r.ok) ++failed;
        std::printf("[%s] gate %d %s: %s\n", r.ok ? "PASS" : "FAIL", g,
                    gates[g - 1].first.c_str(), r.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %d gates passed\n", ran - failed, ran);
    return failed;
}
