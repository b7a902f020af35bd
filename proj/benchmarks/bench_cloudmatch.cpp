#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "cloudmatch/augment.hpp"
#include "cloudmatch/backbone.hpp"
#include "cloudmatch/data.hpp"
#include "cloudmatch/losses.hpp"
#include "cloudmatch/rng.hpp"
#include "cloudmatch/tensor.hpp"
#include "cloudmatch/train.hpp"

using namespace cloudmatch;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad) {
    Rng rng(seed);
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : data) v = rng.uniform(-1.0, 1.0);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Image random_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    Image img(3, size, size);
    for (double& v : img.data) v = rng.uniform(0.0, 255.0);
    return img;
}

void bm_conv2d_forward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Tensor input = random_tensor({8, size, size}, 1, false);
    const Tensor kernel = random_tensor({8, 8, 3, 3}, 2, false);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(input, kernel, 1));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(size) * size);
}

void bm_conv2d_backward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    for (auto _ : state) {
        state.PauseTiming();
        Tensor input = random_tensor({8, size, size}, 1, true);
        Tensor kernel = random_tensor({8, 8, 3, 3}, 2, true);
        Tensor loss = mean(conv2d(input, kernel, 1));
        state.ResumeTiming();
        backward(loss);
    }
}

void bm_softmax_channels(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Tensor logits = random_tensor({2, size, size}, 3, false);
    for (auto _ : state) benchmark::DoNotOptimize(softmax_channels(logits));
}

void bm_backbone_forward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    TinySegNet net = TinySegNet::init_parameters(5);
    const Tensor input = random_tensor({3, size, size}, 4, false);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(input));
}

void bm_rect_mask(benchmark::State& state) {
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(
            sample_rect_mask(seed++, 96, 96, 0.02, 0.4, 0.3, 1.0 / 0.3));
}

void bm_view_bundle(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Image a = random_image(size, 7);
    const Image b = random_image(size, 8);
    AugConfig cfg;
    cfg.patch_size = size;
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(make_views(a, b, seed++, cfg));
}

void bm_train_step(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    std::vector<Sample> scenes;
    for (int i = 0; i < 6; ++i) {
        SyntheticScene s = generate_synthetic_scene(100 + i, size, size, 0.3);
        scenes.push_back(Sample{"s" + std::to_string(i), s.image, s.mask});
    }

    Dataset ds;
    ds.manifest.ratio = "1/8";
    for (Sample& s : scenes) {
        if (s.id == "s0" || s.id == "s1")
            ds.manifest.labeled_ids.push_back(s.id);
        else
            ds.manifest.unlabeled_ids.push_back(s.id);
        ds.samples.emplace(s.id, s);
    }
    std::vector<const Image*> images;
    for (const Sample& s : scenes) images.push_back(&s.image);
    ds.stats = compute_norm_stats(images);

    TrainConfig cfg;
    cfg.data_dir = "unused";
    cfg.aug.patch_size = size;
    TinySegNet net = TinySegNet::init_parameters(1);
    Trainer trainer(net, ds, cfg);

    const std::vector<const Sample*> labeled{&ds.at("s0"), &ds.at("s1")};
    const std::vector<std::pair<const Sample*, const Sample*>> pairs{
        {&ds.at("s2"), &ds.at("s3")}, {&ds.at("s4"), &ds.at("s5")}};
    std::uint64_t step = 0;
    for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(labeled, pairs, 0, step++));
}

BENCHMARK(bm_conv2d_forward)->Arg(48)->Arg(96);
BENCHMARK(bm_conv2d_backward)->Arg(48)->Arg(96);
BENCHMARK(bm_softmax_channels)->Arg(96);
BENCHMARK(bm_backbone_forward)->Arg(96);
BENCHMARK(bm_rect_mask);
BENCHMARK(bm_view_bundle)->Arg(96);
BENCHMARK(bm_train_step)->Arg(48)->Arg(96);

} // namespace

BENCHMARK_MAIN();
