#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cloudmatch/image.hpp"
#include "cloudmatch/rng.hpp"
#include "cloudmatch/tensor.hpp"

namespace cloudmatch::test {

struct FdReport {
    double max_rel = 0.0;
    int checked = 0;
};

/// Central-finite-difference check of backward() against the scalar rebuilt
/// by f() from the leaves' current values. Relative error uses a small floor
/// so exactly-zero gradients compare cleanly.
inline FdReport fd_compare(std::vector<Tensor>& leaves, const std::function<Tensor()>& f,
                           double h = 1e-5) {
    for (Tensor& leaf : leaves) leaf.zero_grad();
    Tensor loss = f();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    for (Tensor& leaf : leaves) {
        std::span<const double> g = leaf.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
    }

    FdReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        std::span<double> vals = leaves[li].mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double up = f().item();
            vals[i] = orig - h;
            const double dn = f().item();
            vals[i] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double an = analytic[li][i];
            const double rel = std::fabs(an - fd) / std::max({1e-6, std::fabs(an), std::fabs(fd)});
            report.max_rel = std::max(report.max_rel, rel);
            ++report.checked;
        }
    }
    return report;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

inline Image random_image(int c, int h, int w, Rng& rng, double lo = 0.0, double hi = 255.0) {
    Image img(c, h, w);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

/// Random probability map [2,H,W]: channel 0 = p, channel 1 = 1 - p.
inline Tensor random_probs(int h, int w, Rng& rng) {
    Tensor t = Tensor::zeros({2, h, w});
    std::span<double> v = t.mutable_values();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < hw; ++i) {
        const double p = rng.uniform(0.001, 0.999);
        v[i] = p;
        v[hw + i] = 1.0 - p;
    }
    return t;
}

/// Fresh scratch directory under the build tree, wiped up front so reruns
/// start clean.
inline std::string scratch_dir(const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "cloudmatch_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

} // namespace cloudmatch::test
