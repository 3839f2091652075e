#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace mmtsvit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient flows into this node
    bool requires_grad = false;
    bool is_leaf = true;

    std::span<double> grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

using NodePtr = std::shared_ptr<Node>;

struct TapeEntry {
    NodePtr output;
    std::function<void(Node& out)> backward;
};

}  // namespace detail

/// Ordered record of differentiable operations, in execution order.
///
/// Every operation that consumes a tensor requiring gradients appends one
/// entry. Entries are only ever appended after their inputs exist, so the
/// record is topologically sorted by construction and reverse replay visits
/// each node after all of its consumers.
class Tape {
public:
    void record(detail::NodePtr output, std::function<void(detail::Node&)> backward) {
        entries_.push_back({std::move(output), std::move(backward)});
    }

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    bool contains(const detail::Node* node) const {
        return std::any_of(entries_.begin(), entries_.end(),
                           [node](const detail::TapeEntry& e) { return e.output.get() == node; });
    }

    void replay_backward() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (!it->output->grad.empty()) it->backward(*it->output);
        }
    }

private:
    std::vector<detail::TapeEntry> entries_;
};

namespace detail {

struct TapeState {
    Tape tape;
    bool grad_enabled = true;
};

inline TapeState& tape_state() {
    thread_local TapeState state;
    return state;
}

}  // namespace detail

/// The tape that operations on this thread record into.
inline Tape& active_tape() { return detail::tape_state().tape; }

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::tape_state().grad_enabled) { detail::tape_state().grad_enabled = false; }
    ~NoGradGuard() { detail::tape_state().grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major float64 tensor. Copies share storage (handle semantics);
/// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (numel_of(shape) != values.size()) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Direct write access. Mutating a tensor that is referenced by the tape
    /// invalidates the recorded graph.
    std::span<double> mutable_data() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    double at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
    void clear_grad() { node_->grad.clear(); }

    /// Deep copy of values; the copy is a fresh leaf.
    Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }
    /// Same values, detached from any graph, not requiring grad.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    detail::Node& node() const { return *node_; }
    const detail::NodePtr& node_ptr() const { return node_; }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != dim()) throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
        std::size_t off = 0;
        std::size_t axis = 0;
        for (auto i : index) {
            if (i >= node_->shape[axis]) throw DimensionError("index out of range for shape " + shape_str(shape()));
            off = off * node_->shape[axis] + i;
            ++axis;
        }
        return off;
    }

private:
    detail::NodePtr node_;
};

namespace detail {

/// Creates the result of an operation and, when any input participates in
/// differentiation, records its adjoint on the active tape.
///
/// `backward` receives the output node (its grad is populated) and must
/// accumulate into the inputs' grad buffers.
inline Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    auto& state = tape_state();
    if (!state.grad_enabled) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) return out;
    out.node().requires_grad = true;
    out.node().is_leaf = false;
    state.tape.record(out.node_ptr(), std::move(backward));
    return out;
}

inline Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    auto& state = tape_state();
    if (!state.grad_enabled) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) return out;
    out.node().requires_grad = true;
    out.node().is_leaf = false;
    state.tape.record(out.node_ptr(), std::move(backward));
    return out;
}

}  // namespace detail

/// Reverse pass from a scalar loss recorded on the active tape.
///
/// Gradients accumulate into every reachable leaf that requires grad (call
/// zero_grad() between steps to reset). The tape is consumed.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    auto& tape = active_tape();
    if (!loss.requires_grad() || (!loss.is_leaf() && !tape.contains(&loss.node()))) {
        throw ContractError("backward() on a loss that was not produced on the active tape");
    }
    loss.node().grad_buffer()[0] += 1.0;
    tape.replay_backward();
    tape.clear();
}

}  // namespace mmtsvit
