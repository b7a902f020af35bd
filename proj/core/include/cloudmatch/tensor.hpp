#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cloudmatch {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    std::vector<double> grad; // allocated on first accumulation
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
};

/// Returns the node's gradient buffer, zero-initialized on first use.
std::vector<double>& ensure_grad(TensorNode& node);

} // namespace detail

/// Value-semantic handle to a node in the autodiff graph. Copies share the
/// node; ops build new nodes eagerly and record how to push gradients back.
/// All values are 64-bit floats so finite-difference checks stay meaningful.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t numel() const;
    bool requires_grad() const;

    std::span<const double> values() const;
    /// Direct mutation of the stored values. Intended for leaves (parameter
    /// updates, test perturbations); mutating an interior node desynchronizes
    /// it from its recorded parents.
    std::span<double> mutable_values();

    /// Gradient accumulated by backward(); empty span if none was produced.
    std::span<const double> grad() const;
    void zero_grad();

    /// Scalar read; contract error if numel != 1.
    double item() const;

    /// Copy of the values with no graph history and requires_grad = false.
    Tensor detach() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Topologically ordered view of the graph below a root: every node's parents
/// appear before the node itself, and each reachable node appears exactly once.
struct Graph {
    std::vector<detail::TensorNode*> order;
    static Graph build(const Tensor& root);
};

enum class ElementwiseOp { add, sub, mul, div };

/// Elementwise binary op on equal shapes; either side may be a scalar
/// (numel 1), which broadcasts. Shape mismatch raises a dimension error
/// naming both shapes.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
/// Clamp to [lo, hi]; gradient passes only where the value was strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Natural log. Precondition: all values > 0 (clamp first when unsure).
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// 2-D convolution (cross-correlation), input [Cin,H,W], kernel
/// [Cout,Cin,kH,kW], zero padding. Kernel sides must be odd; the output must
/// be at least 1x1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding);

/// Adds bias [C] to every pixel of x [C,H,W].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Channel-wise softmax over x [C,H,W] (C >= 2), max-shifted for stability.
Tensor softmax_channels(const Tensor& x);

/// Extracts channel j of x [C,H,W] as [H,W].
Tensor channel(const Tensor& x, int j);

/// Standardizes a tensor to zero mean / unit population std over all its
/// elements, as a differentiable composite (gradient flows through the mean
/// and std). A tensor whose std is <= eps maps to all zeros with no gradient;
/// above the guard the transform is exact, so already-standardized input is a
/// fixed point and affine rescaling of the input does not change the output.
Tensor zscore_normalize(const Tensor& x, double eps = 1e-6);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
/// into every requires_grad node reachable from the loss; repeated calls
/// without zero_grad() keep accumulating.
void backward(const Tensor& loss);

} // namespace cloudmatch
