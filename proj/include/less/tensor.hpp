#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "less/errors.hpp"

// Dense fp64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to an immutable value. Operations record
// themselves on the tape that is active on the current thread (see
// GradScope); with no active tape they evaluate without recording, which is
// how inference runs. The tape is rebuilt for every forward pass.

namespace less {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // populated on leaves by backward()
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : impl_(std::make_shared<detail::TensorImpl>()) {
        check_shape(shape);
        impl_->data.assign(shape_numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
        check_shape(shape);
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                                 std::to_string(data.size()) + " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    // Trainable leaf.
    static Tensor parameter(Shape shape, std::vector<double> data) {
        Tensor t(std::move(shape), std::move(data));
        t.impl_->requires_grad = true;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t rows() const { return impl_->shape[0]; }
    std::size_t cols() const { return rows() ? numel() / rows() : 0; }

    std::span<const double> data() const { return impl_->data; }
    // For optimizers and initializers only; ops treat tensors as immutable.
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    double item() const {
        if (numel() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
        return impl_->data[0];
    }
    std::vector<double> to_vector() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        impl_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    // Same values, no gradient history.
    Tensor detach() const { return Tensor(shape(), impl_->data); }

    const detail::TensorImpl* id() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw DimensionError("tensor: empty shape");
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(shape));
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

// grad_in[i] is empty when input i does not require a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

class Gradients;

class Tape {
public:
    struct Node {
        std::string_view op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        BackwardFn backward;
    };

    void record(std::string_view op, const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn) {
        Node n{op, {}, output.impl(), std::move(fn)};
        n.inputs.reserve(inputs.size());
        for (const auto& t : inputs) n.inputs.push_back(t.impl());
        nodes_.push_back(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    // Reverse sweep from a scalar loss. Gradients are kept in the returned
    // object; nothing is written to the tensors themselves.
    Gradients gradients(const Tensor& loss) const;

private:
    std::vector<Node> nodes_;
};

class Gradients {
public:
    // Gradient of the loss with respect to t; empty span if t was not reached.
    std::span<const double> of(const Tensor& t) const {
        auto it = grads_.find(t.id());
        if (it == grads_.end()) return {};
        return it->second;
    }

    // Adds every leaf gradient into the leaf's own grad buffer, in sweep order.
    void accumulate_into_leaves() const {
        for (const auto& leaf : leaves_) {
            auto& g = grads_.at(leaf.get());
            if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) leaf->grad[i] += g[i];
        }
    }

    std::size_t leaf_count() const { return leaves_.size(); }

private:
    friend class Tape;
    std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
    std::vector<std::shared_ptr<detail::TensorImpl>> leaves_;
};

inline Gradients Tape::gradients(const Tensor& loss) const {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    Gradients out;
    auto& grads = out.grads_;
    if (!loss.requires_grad()) return out;
    grads[loss.id()] = {1.0};

    std::unordered_set<const detail::TensorImpl*> produced;
    produced.reserve(nodes_.size());
    for (const auto& n : nodes_) produced.insert(n.output.get());

    std::unordered_set<const detail::TensorImpl*> seen_leaf;
    std::vector<std::span<double>> spans;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto g = grads.find(it->output.get());
        if (g == grads.end()) continue;
        spans.clear();
        for (const auto& in : it->inputs) {
            if (!in->requires_grad) {
                spans.emplace_back();
                continue;
            }
            auto& buf = grads[in.get()];
            if (buf.empty()) buf.assign(in->data.size(), 0.0);
            spans.emplace_back(buf);
            if (!produced.count(in.get()) && seen_leaf.insert(in.get()).second) out.leaves_.push_back(in);
        }
        // Iterators may be invalidated by the inserts above; references are not.
        const auto& gout = grads.at(it->output.get());
        it->backward(gout, spans);
    }
    if (!produced.count(loss.id()) && seen_leaf.insert(loss.id()).second) out.leaves_.push_back(loss.impl());
    return out;
}

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

// Makes `tape` the recording target for the current thread while in scope.
class GradScope {
public:
    explicit GradScope(Tape& tape) : prev_(detail::active_tape) { detail::active_tape = &tape; }
    ~GradScope() { detail::active_tape = prev_; }
    GradScope(const GradScope&) = delete;
    GradScope& operator=(const GradScope&) = delete;

private:
    Tape* prev_;
};

// Disables recording while in scope.
class NoGradScope {
public:
    NoGradScope() : prev_(detail::active_tape) { detail::active_tape = nullptr; }
    ~NoGradScope() { detail::active_tape = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* prev_;
};

inline Tape* active_tape() { return detail::active_tape; }

// Records `fn` for `out` when a tape is active and any input needs a gradient.
inline void record_op(std::string_view op, const std::vector<Tensor>& inputs, Tensor& out, BackwardFn fn) {
    Tape* tape = detail::active_tape;
    if (!tape) return;
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (!needs) return;
    out.set_requires_grad(true);
    tape->record(op, inputs, out, std::move(fn));
}

// Populates .grad() on every requires_grad leaf reached from `loss`.
// Repeated calls accumulate.
inline void backward(const Tensor& loss, const Tape& tape) { tape.gradients(loss).accumulate_into_leaves(); }

}  // namespace less
