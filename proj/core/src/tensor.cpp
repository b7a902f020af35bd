#include "cloudmatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cloudmatch/errors.hpp"

namespace cloudmatch {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("nonpositive extent in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

std::vector<double>& ensure_grad(TensorNode& node) {
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

namespace {

std::vector<double>* grad_sink(TensorNode& node) {
    if (!node.requires_grad) return nullptr;
    return &ensure_grad(node);
}

} // namespace
} // namespace detail

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

NodePtr make_node(Shape shape, std::vector<double> value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
}

const NodePtr& checked(const Tensor& t, const char* who) {
    const NodePtr& node = t.node();
    if (!node) throw ContractError(std::string(who) + ": undefined tensor");
    return node;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return wrap(make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = shape_numel(shape);
    return wrap(make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), fill),
                          requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw DimensionError("from_data: shape " + shape_to_string(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    return wrap(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) { return from_data(Shape{}, {v}, false); }

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }
std::int64_t Tensor::numel() const { return checked(*this, "numel")->numel(); }
bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }

std::span<const double> Tensor::values() const {
    const auto& node = checked(*this, "values");
    return {node->value.data(), node->value.size()};
}

std::span<double> Tensor::mutable_values() {
    const auto& node = checked(*this, "mutable_values");
    return {node->value.data(), node->value.size()};
}

std::span<const double> Tensor::grad() const {
    const auto& node = checked(*this, "grad");
    return {node->grad.data(), node->grad.size()};
}

void Tensor::zero_grad() {
    const auto& node = checked(*this, "zero_grad");
    node->grad.clear();
}

double Tensor::item() const {
    const auto& node = checked(*this, "item");
    if (node->numel() != 1)
        throw ContractError("item: tensor has " + std::to_string(node->numel()) +
                            " elements, expected 1");
    return node->value[0];
}

Tensor Tensor::detach() const {
    const auto& node = checked(*this, "detach");
    return wrap(make_node(node->shape, node->value, false));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Graph Graph::build(const Tensor& root) {
    Graph graph;
    const NodePtr& start = checked(root, "Graph::build");
    std::unordered_set<const TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (visited.insert(start.get()).second) stack.push_back({start.get(), 0});
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            TensorNode* parent = top.node->parents[top.next_parent++].get();
            if (visited.insert(parent).second) stack.push_back({parent, 0});
        } else {
            graph.order.push_back(top.node);
            stack.pop_back();
        }
    }
    return graph;
}

void backward(const Tensor& loss) {
    const NodePtr& root = checked(loss, "backward");
    if (root->numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_to_string(root->shape));
    if (!root->requires_grad) return;
    Graph graph = Graph::build(loss);
    // Interior adjoints are pass-local; leaf gradients persist so repeated
    // backward calls accumulate.
    for (TensorNode* node : graph.order)
        if (node->backprop) node->grad.clear();
    detail::ensure_grad(*root)[0] += 1.0;
    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop && node->requires_grad && !node->grad.empty()) node->backprop(*node);
    }
}

namespace {

struct BinaryPlan {
    Shape shape;
    std::int64_t n;
    int stride_a; // 0 broadcasts a scalar, 1 walks elementwise
    int stride_b;
};

BinaryPlan plan_binary(const NodePtr& a, const NodePtr& b, const char* opname) {
    if (a->shape == b->shape) return {a->shape, a->numel(), 1, 1};
    if (a->numel() == 1) return {b->shape, b->numel(), 0, 1};
    if (b->numel() == 1) return {a->shape, a->numel(), 1, 0};
    throw DimensionError(std::string(opname) + ": shapes " + shape_to_string(a->shape) + " vs " +
                         shape_to_string(b->shape) + " are incompatible");
}

const char* op_name(ElementwiseOp op) {
    switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::div: return "div";
    }
    return "elementwise";
}

} // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
    const NodePtr& an = checked(a, op_name(op));
    const NodePtr& bn = checked(b, op_name(op));
    const BinaryPlan plan = plan_binary(an, bn, op_name(op));

    std::vector<double> out(static_cast<std::size_t>(plan.n));
    const double* av = an->value.data();
    const double* bv = bn->value.data();
    for (std::int64_t i = 0; i < plan.n; ++i) {
        const double x = av[i * plan.stride_a];
        const double y = bv[i * plan.stride_b];
        switch (op) {
        case ElementwiseOp::add: out[i] = x + y; break;
        case ElementwiseOp::sub: out[i] = x - y; break;
        case ElementwiseOp::mul: out[i] = x * y; break;
        case ElementwiseOp::div: out[i] = x / y; break;
        }
    }

    NodePtr node = make_node(plan.shape, std::move(out), an->requires_grad || bn->requires_grad);
    if (node->requires_grad) {
        node->parents = {an, bn};
        node->backprop = [an, bn, op, plan](TensorNode& self) {
            auto* ga = detail::grad_sink(*an);
            auto* gb = detail::grad_sink(*bn);
            const double* av = an->value.data();
            const double* bv = bn->value.data();
            const double* g = self.grad.data();
            for (std::int64_t i = 0; i < plan.n; ++i) {
                const std::int64_t ia = i * plan.stride_a;
                const std::int64_t ib = i * plan.stride_b;
                switch (op) {
                case ElementwiseOp::add:
                    if (ga) (*ga)[ia] += g[i];
                    if (gb) (*gb)[ib] += g[i];
                    break;
                case ElementwiseOp::sub:
                    if (ga) (*ga)[ia] += g[i];
                    if (gb) (*gb)[ib] -= g[i];
                    break;
                case ElementwiseOp::mul:
                    if (ga) (*ga)[ia] += g[i] * bv[ib];
                    if (gb) (*gb)[ib] += g[i] * av[ia];
                    break;
                case ElementwiseOp::div: {
                    const double inv = 1.0 / bv[ib];
                    if (ga) (*ga)[ia] += g[i] * inv;
                    if (gb) (*gb)[ib] -= g[i] * av[ia] * inv * inv;
                    break;
                }
                }
            }
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::div, a, b); }
Tensor operator+(const Tensor& a, double b) { return a + Tensor::scalar(b); }
Tensor operator-(const Tensor& a, double b) { return a - Tensor::scalar(b); }
Tensor operator*(const Tensor& a, double b) { return a * Tensor::scalar(b); }
Tensor operator/(const Tensor& a, double b) { return a / Tensor::scalar(b); }
Tensor operator+(double a, const Tensor& b) { return Tensor::scalar(a) + b; }
Tensor operator-(double a, const Tensor& b) { return Tensor::scalar(a) - b; }
Tensor operator*(double a, const Tensor& b) { return Tensor::scalar(a) * b; }

namespace {

/// Shared scaffolding for unary elementwise ops: fwd maps one value, bwd maps
/// (upstream grad, input value, output value) to the input's grad increment.
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
    const NodePtr& an = checked(a, name);
    std::vector<double> out(an->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(an->value[i]);
    NodePtr node = make_node(an->shape, std::move(out), an->requires_grad);
    if (node->requires_grad) {
        node->parents = {an};
        node->backprop = [an, bwd](TensorNode& self) {
            auto* ga = detail::grad_sink(*an);
            if (!ga) return;
            const double* g = self.grad.data();
            const double* x = an->value.data();
            const double* y = self.value.data();
            for (std::size_t i = 0; i < self.value.size(); ++i)
                (*ga)[i] += bwd(g[i], x[i], y[i]);
        };
    }
    return Tensor::wrap(std::move(node));
}

} // namespace

Tensor neg(const Tensor& a) {
    return unary_op(
        a, "neg", [](double x) { return -x; },
        [](double g, double, double) { return -g; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
    return unary_op(
        a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double g, double x, double) { return (x > lo && x < hi) ? g : 0.0; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); },
        [](double g, double x, double) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double g, double, double y) { return 0.5 * g / y; });
}

Tensor sum(const Tensor& a) {
    const NodePtr& an = checked(a, "sum");
    double acc = 0.0;
    for (double v : an->value) acc += v;
    NodePtr node = make_node(Shape{}, {acc}, an->requires_grad);
    if (node->requires_grad) {
        node->parents = {an};
        node->backprop = [an](TensorNode& self) {
            auto* ga = detail::grad_sink(*an);
            if (!ga) return;
            const double g = self.grad[0];
            for (double& slot : *ga) slot += g;
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor mean(const Tensor& a) {
    const NodePtr& an = checked(a, "mean");
    if (an->numel() == 0) throw ContractError("mean: empty tensor");
    return sum(a) / static_cast<double>(an->numel());
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding) {
    const NodePtr& in = checked(input, "conv2d");
    const NodePtr& kn = checked(kernel, "conv2d");
    if (in->shape.size() != 3)
        throw DimensionError("conv2d: input must be [C,H,W], got " + shape_to_string(in->shape));
    if (kn->shape.size() != 4)
        throw DimensionError("conv2d: kernel must be [Cout,Cin,kH,kW], got " +
                             shape_to_string(kn->shape));
    const int cin = in->shape[0], h = in->shape[1], w = in->shape[2];
    const int cout = kn->shape[0], kcin = kn->shape[1], kh = kn->shape[2], kw = kn->shape[3];
    if (kcin != cin)
        throw DimensionError("conv2d: kernel expects " + std::to_string(kcin) +
                             " input channels, image has " + std::to_string(cin));
    if (kh % 2 == 0 || kw % 2 == 0) throw ContractError("conv2d: kernel sides must be odd");
    if (padding < 0) throw ContractError("conv2d: negative padding");
    const int oh = h + 2 * padding - kh + 1;
    const int ow = w + 2 * padding - kw + 1;
    if (oh < 1 || ow < 1)
        throw DimensionError("conv2d: output would be " + std::to_string(oh) + "x" +
                             std::to_string(ow));

    std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
    const double* iv = in->value.data();
    const double* kv = kn->value.data();
    for (int co = 0; co < cout; ++co) {
        double* outbase = out.data() + static_cast<std::size_t>(co) * oh * ow;
        for (int ci = 0; ci < cin; ++ci) {
            const double* inbase = iv + static_cast<std::size_t>(ci) * h * w;
            const double* kbase = kv + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
            for (int dy = 0; dy < kh; ++dy) {
                const int oy0 = std::max(0, padding - dy);
                const int oy1 = std::min(oh, h + padding - dy);
                for (int dx = 0; dx < kw; ++dx) {
                    const double weight = kbase[dy * kw + dx];
                    const int ox0 = std::max(0, padding - dx);
                    const int ox1 = std::min(ow, w + padding - dx);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const double* inrow = inbase + (oy + dy - padding) * w + (ox0 + dx - padding);
                        double* outrow = outbase + oy * ow + ox0;
                        for (int i = 0; i < ox1 - ox0; ++i) outrow[i] += weight * inrow[i];
                    }
                }
            }
        }
    }

    NodePtr node = make_node({cout, oh, ow}, std::move(out),
                             in->requires_grad || kn->requires_grad);
    if (node->requires_grad) {
        node->parents = {in, kn};
        node->backprop = [in, kn, padding, cin, h, w, cout, kh, kw, oh, ow](TensorNode& self) {
            auto* gin = detail::grad_sink(*in);
            auto* gkn = detail::grad_sink(*kn);
            const double* g = self.grad.data();
            const double* iv = in->value.data();
            const double* kv = kn->value.data();
            for (int co = 0; co < cout; ++co) {
                const double* goutbase = g + static_cast<std::size_t>(co) * oh * ow;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* inbase = iv + static_cast<std::size_t>(ci) * h * w;
                    const std::size_t koff = (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
                    for (int dy = 0; dy < kh; ++dy) {
                        const int oy0 = std::max(0, padding - dy);
                        const int oy1 = std::min(oh, h + padding - dy);
                        for (int dx = 0; dx < kw; ++dx) {
                            const int ox0 = std::max(0, padding - dx);
                            const int ox1 = std::min(ow, w + padding - dx);
                            const int run = ox1 - ox0;
                            if (run <= 0 || oy0 >= oy1) continue;
                            const double weight = kv[koff + dy * kw + dx];
                            double kacc = 0.0;
                            for (int oy = oy0; oy < oy1; ++oy) {
                                const std::size_t inoff =
                                    static_cast<std::size_t>(oy + dy - padding) * w +
                                    (ox0 + dx - padding);
                                const double* grow = goutbase + oy * ow + ox0;
                                if (gin) {
                                    double* ginrow = gin->data() +
                                                     static_cast<std::size_t>(ci) * h * w + inoff;
                                    for (int i = 0; i < run; ++i) ginrow[i] += weight * grow[i];
                                }
                                if (gkn) {
                                    const double* inrow = inbase + inoff;
                                    for (int i = 0; i < run; ++i) kacc += grow[i] * inrow[i];
                                }
                            }
                            if (gkn) (*gkn)[koff + dy * kw + dx] += kacc;
                        }
                    }
                }
            }
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    const NodePtr& xn = checked(x, "add_channel_bias");
    const NodePtr& bn = checked(bias, "add_channel_bias");
    if (xn->shape.size() != 3)
        throw DimensionError("add_channel_bias: x must be [C,H,W], got " +
                             shape_to_string(xn->shape));
    if (bn->shape.size() != 1 || bn->shape[0] != xn->shape[0])
        throw DimensionError("add_channel_bias: bias " + shape_to_string(bn->shape) +
                             " does not match channels of " + shape_to_string(xn->shape));
    const int c = xn->shape[0];
    const std::int64_t hw = static_cast<std::int64_t>(xn->shape[1]) * xn->shape[2];

    std::vector<double> out(xn->value.size());
    for (int j = 0; j < c; ++j) {
        const double b = bn->value[j];
        const double* src = xn->value.data() + j * hw;
        double* dst = out.data() + j * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
    }

    NodePtr node = make_node(xn->shape, std::move(out), xn->requires_grad || bn->requires_grad);
    if (node->requires_grad) {
        node->parents = {xn, bn};
        node->backprop = [xn, bn, c, hw](TensorNode& self) {
            auto* gx = detail::grad_sink(*xn);
            auto* gb = detail::grad_sink(*bn);
            const double* g = self.grad.data();
            if (gx)
                for (std::size_t i = 0; i < self.value.size(); ++i) (*gx)[i] += g[i];
            if (gb)
                for (int j = 0; j < c; ++j) {
                    double acc = 0.0;
                    const double* grow = g + j * hw;
                    for (std::int64_t i = 0; i < hw; ++i) acc += grow[i];
                    (*gb)[j] += acc;
                }
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor softmax_channels(const Tensor& x) {
    const NodePtr& xn = checked(x, "softmax_channels");
    if (xn->shape.size() != 3)
        throw DimensionError("softmax_channels: expected [C,H,W], got " +
                             shape_to_string(xn->shape));
    const int c = xn->shape[0];
    if (c < 2) throw ContractError("softmax_channels: need at least 2 channels");
    const std::int64_t hw = static_cast<std::int64_t>(xn->shape[1]) * xn->shape[2];

    std::vector<double> out(xn->value.size());
    const double* v = xn->value.data();
    for (std::int64_t i = 0; i < hw; ++i) {
        double m = v[i];
        for (int j = 1; j < c; ++j) m = std::max(m, v[j * hw + i]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(v[j * hw + i] - m);
            out[j * hw + i] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) out[j * hw + i] *= inv;
    }

    NodePtr node = make_node(xn->shape, std::move(out), xn->requires_grad);
    if (node->requires_grad) {
        node->parents = {xn};
        node->backprop = [xn, c, hw](TensorNode& self) {
            auto* gx = detail::grad_sink(*xn);
            if (!gx) return;
            const double* g = self.grad.data();
            const double* y = self.value.data();
            for (std::int64_t i = 0; i < hw; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j * hw + i] * y[j * hw + i];
                for (int j = 0; j < c; ++j)
                    (*gx)[j * hw + i] += y[j * hw + i] * (g[j * hw + i] - dot);
            }
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor channel(const Tensor& x, int j) {
    const NodePtr& xn = checked(x, "channel");
    if (xn->shape.size() != 3)
        throw DimensionError("channel: expected [C,H,W], got " + shape_to_string(xn->shape));
    const int c = xn->shape[0];
    if (j < 0 || j >= c)
        throw ContractError("channel: index " + std::to_string(j) + " out of range [0," +
                            std::to_string(c) + ")");
    const std::int64_t hw = static_cast<std::int64_t>(xn->shape[1]) * xn->shape[2];

    std::vector<double> out(xn->value.begin() + j * hw, xn->value.begin() + (j + 1) * hw);
    NodePtr node = make_node({xn->shape[1], xn->shape[2]}, std::move(out), xn->requires_grad);
    if (node->requires_grad) {
        node->parents = {xn};
        node->backprop = [xn, j, hw](TensorNode& self) {
            auto* gx = detail::grad_sink(*xn);
            if (!gx) return;
            const double* g = self.grad.data();
            double* dst = gx->data() + j * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] += g[i];
        };
    }
    return Tensor::wrap(std::move(node));
}

Tensor zscore_normalize(const Tensor& x, double eps) {
    const NodePtr& xn = checked(x, "zscore_normalize");
    if (xn->numel() == 0) throw ContractError("zscore_normalize: empty tensor");
    if (eps <= 0.0) throw ContractError("zscore_normalize: eps must be positive");
    Tensor centered = x - mean(x);
    Tensor variance = mean(centered * centered);
    if (std::sqrt(variance.item()) <= eps) return Tensor::zeros(xn->shape);
    return centered / sqrt(variance);
}

} // namespace cloudmatch
