#pragma once

// Reverse-mode automatic differentiation over rank-4 tensors.
//
// A Tape records every operation applied to its variables in creation
// order, which is a valid topological order. backward() walks the record
// in reverse and accumulates gradients into every node that requires one.
// A non-recording tape evaluates the same graph without keeping any
// history, so intermediate activations are released as soon as they go
// out of scope (inference mode).

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "kernels.hpp"
#include "tensor.hpp"

namespace rsen {

namespace hooks {

/// Name of an op whose gradient rule is deliberately scaled by 1.5.
/// Empty in normal operation; used as a negative control by gradcheck.
inline std::string& corrupted_gradient_rule() {
    thread_local std::string name;
    return name;
}

/// Folds the ReLU activation pattern of every forward pass on this thread
/// into a running hash while active. Finite-difference checks compare the
/// hash across perturbations to detect kink crossings.
struct ReluPatternMonitor {
    bool active = false;
    std::uint64_t hash = 1469598103934665603ULL;

    static ReluPatternMonitor& current() {
        thread_local ReluPatternMonitor monitor;
        return monitor;
    }

    void reset() { hash = 1469598103934665603ULL; }

    template <typename T>
    void observe(const Tensor<T>& x) {
        if (!active) return;
        std::uint64_t h = hash;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            h ^= static_cast<std::uint64_t>(x[i] > T{0}) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        hash = h;
    }
};

} // namespace hooks

template <typename T>
class Tape;

template <typename T>
struct Node {
    using BackwardFn = std::function<std::vector<Tensor<T>>(const Node&, const Tensor<T>&)>;

    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::size_t index = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    /// Returns one gradient per input; an empty tensor means "no contribution".
    BackwardFn backward;
};

/// Handle to a value on a tape.
template <typename T>
class Var {
public:
    Var() = default;
    Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] const std::string& op() const { return node_->op; }
    [[nodiscard]] Tape<T>* tape() const { return tape_; }
    [[nodiscard]] bool valid() const { return static_cast<bool>(node_); }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

    /// Gradient after Tape::backward; zeros when the node was not reached.
    [[nodiscard]] Tensor<T> grad() const {
        if (node_->grad.empty() && node_->value.numel() != 0) return Tensor<T>(node_->value.shape());
        return node_->grad;
    }

private:
    std::shared_ptr<Node<T>> node_;
    Tape<T>* tape_ = nullptr;
};

template <typename T>
class Tape {
public:
    using BackwardFn = typename Node<T>::BackwardFn;

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool recording() const noexcept { return recording_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
        auto node = std::make_shared<Node<T>>();
        node->op = "leaf";
        node->value = std::move(value);
        node->requires_grad = requires_grad && recording_;
        push(node);
        return Var<T>(std::move(node), this);
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Records an op node. In non-recording mode the node keeps no inputs.
    Var<T> apply(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
        auto node = std::make_shared<Node<T>>();
        node->op = std::move(op);
        node->value = std::move(value);
        if (recording_) {
            for (const auto& in : inputs) {
                if (in.tape() != this) throw ContractError("op '" + node->op + "' mixes variables from different tapes");
                node->requires_grad = node->requires_grad || in.requires_grad();
            }
            if (node->requires_grad) {
                node->inputs.reserve(inputs.size());
                for (const auto& in : inputs) node->inputs.push_back(in.node());
                node->backward = std::move(backward);
            }
        }
        push(node);
        return Var<T>(std::move(node), this);
    }

    /// Reverse sweep from a scalar loss. Gradients of previous sweeps are
    /// discarded; fan-out contributions accumulate by summation.
    void backward(const Var<T>& loss) {
        if (!recording_) throw ContractError("backward on a non-recording tape");
        if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
        if (loss.shape() != Shape{1, 1, 1, 1}) {
            throw ContractError("backward: loss must be a 1x1x1x1 scalar, got " + loss.shape().str());
        }
        for (auto& n : nodes_) n->grad = Tensor<T>{};
        const std::string& corrupted = hooks::corrupted_gradient_rule();
        auto root = loss.node();
        if (!root->requires_grad) return;
        root->grad = Tensor<T>::ones(root->value.shape());
        for (std::size_t i = root->index + 1; i-- > 0;) {
            Node<T>& node = *nodes_[i];
            if (!node.requires_grad || node.grad.empty() || node.inputs.empty()) continue;
            std::vector<Tensor<T>> parts = node.backward(node, node.grad);
            const bool corrupt = !corrupted.empty() && corrupted == node.op;
            for (std::size_t j = 0; j < node.inputs.size() && j < parts.size(); ++j) {
                Node<T>& in = *node.inputs[j];
                Tensor<T>& part = parts[j];
                if (!in.requires_grad || part.empty()) continue;
                if (part.shape() != in.value.shape()) {
                    throw DimensionError("gradient rule of '" + node.op + "' produced dims " + part.shape().str() +
                                         " for input of dims " + in.value.shape().str());
                }
                if (corrupt) {
                    for (auto& v : part.data()) v *= T{1.5};
                }
                if (in.grad.empty()) {
                    in.grad = std::move(part);
                } else {
                    auto dst = in.grad.data();
                    auto src = part.data();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                }
            }
            if (&node != root.get()) node.grad = Tensor<T>{};
        }
    }

private:
    void push(const std::shared_ptr<Node<T>>& node) {
        if (!recording_) return;
        node->index = nodes_.size();
        nodes_.push_back(node);
    }

    bool recording_;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
};

namespace detail {
template <typename T>
Tape<T>& tape_of(const Var<T>& v) {
    if (v.tape() == nullptr) throw ContractError("variable is not attached to a tape");
    return *v.tape();
}
} // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad) {
    Tensor<T> y = kernels::conv2d(x.value(), weight.value(), bias.value(), stride, pad);
    return detail::tape_of(x).apply("conv2d", std::move(y), {x, weight, bias},
                                    [stride, pad](const Node<T>& self, const Tensor<T>& g) {
                                        const auto& in = self.inputs;
                                        auto grads = kernels::conv2d_backward(in[0]->value, in[1]->value,
                                                                              in[2]->value, g, stride, pad,
                                                                              in[0]->requires_grad);
                                        return std::vector<Tensor<T>>{std::move(grads.input), std::move(grads.weight),
                                                                      std::move(grads.bias)};
                                    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    hooks::ReluPatternMonitor::current().observe(x.value());
    return detail::tape_of(x).apply("relu", kernels::relu(x.value()), {x},
                                    [](const Node<T>& self, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::relu_backward(self.inputs[0]->value, g)};
                                    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::tape_of(x).apply("sigmoid", kernels::sigmoid(x.value()), {x},
                                    [](const Node<T>& self, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::sigmoid_backward(self.value, g)};
                                    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    return detail::tape_of(x).apply(
        "global_avg_pool", kernels::global_avg_pool(x.value()), {x}, [](const Node<T>& self, const Tensor<T>& g) {
            return std::vector<Tensor<T>>{kernels::global_avg_pool_backward(self.inputs[0]->value.shape(), g)};
        });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
    return detail::tape_of(x).apply("pixel_shuffle", kernels::pixel_shuffle(x.value(), r), {x},
                                    [r](const Node<T>&, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::space_to_depth(g, r)};
                                    });
}

template <typename T>
Var<T> space_to_depth(const Var<T>& x, std::size_t r) {
    return detail::tape_of(x).apply("space_to_depth", kernels::space_to_depth(x.value(), r), {x},
                                    [r](const Node<T>&, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::pixel_shuffle(g, r)};
                                    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return detail::tape_of(a).apply("add", kernels::add(a.value(), b.value()), {a, b},
                                    [](const Node<T>&, const Tensor<T>& g) { return std::vector<Tensor<T>>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return detail::tape_of(a).apply("sub", kernels::sub(a.value(), b.value()), {a, b},
                                    [](const Node<T>&, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{g, kernels::scale(g, T{-1})};
                                    });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return detail::tape_of(a).apply("mul", kernels::mul(a.value(), b.value()), {a, b},
                                    [](const Node<T>& self, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::mul(g, self.inputs[1]->value),
                                                                      kernels::mul(g, self.inputs[0]->value)};
                                    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
    return detail::tape_of(a).apply("scale", kernels::scale(a.value(), k), {a},
                                    [k](const Node<T>&, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{kernels::scale(g, k)};
                                    });
}

template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
    return detail::tape_of(x).apply("channel_scale", kernels::channel_scale(x.value(), s.value()), {x, s},
                                    [](const Node<T>& self, const Tensor<T>& g) {
                                        auto [dx, ds] = kernels::channel_scale_backward(self.inputs[0]->value,
                                                                                        self.inputs[1]->value, g);
                                        return std::vector<Tensor<T>>{std::move(dx), std::move(ds)};
                                    });
}

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
    Tensor<T> y(Shape{1, 1, 1, 1}, x.value().sum());
    return detail::tape_of(x).apply("sum", std::move(y), {x}, [](const Node<T>& self, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{Tensor<T>::full(self.inputs[0]->value.shape(), g[0])};
    });
}

template <typename T>
Var<T> crop(const Var<T>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    return detail::tape_of(x).apply("crop", kernels::crop(x.value(), top, left, h, w), {x},
                                    [top, left](const Node<T>& self, const Tensor<T>& g) {
                                        return std::vector<Tensor<T>>{
                                            kernels::crop_backward(self.inputs[0]->value.shape(), top, left, g)};
                                    });
}

} // namespace rsen
