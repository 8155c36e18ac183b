#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ypose {

/// Numeric precision of a tensor pipeline. Gradient checking always runs in
/// kDouble; training and inference use kSingle so checkpoints (which store
/// 32-bit floats) round-trip bit-exactly.
enum class PrecisionMode { kSingle, kDouble };

template <PrecisionMode M>
struct precision_traits;
template <>
struct precision_traits<PrecisionMode::kSingle> { using scalar = float; };
template <>
struct precision_traits<PrecisionMode::kDouble> { using scalar = double; };

namespace detail {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

// One node of the recorded computation graph. Leaves are parameters or
// constants; interior nodes hold a backprop closure that routes this node's
// gradient to its parents.
template <typename T>
struct Node {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // persistent accumulation slot; allocated iff requires_grad
    bool requires_grad = false;
    bool tracked = false;  // participates in a recorded graph
    std::vector<std::shared_ptr<Node>> parents;
    // parent_sinks[i] is where parent i's gradient contributions go, or nullptr
    // when that parent does not need a gradient.
    std::function<void(std::span<const T> out_grad,
                       const std::vector<std::vector<T>*>& parent_sinks)>
        backprop;

    std::size_t numel() const { return shape_numel(shape); }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its scope (inference / finite differences).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense NCHW tensor handle. Copies are shallow: they share the underlying
/// node, like the usual shared-pointer tensor idiom. Rank 1..4; a scalar is
/// shape {1}.
template <typename T>
class Tensor {
public:
    using scalar_type = T;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(std::vector<int> shape, T value, bool requires_grad = false) {
        check_shape(shape);
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->data.assign(detail::shape_numel(node->shape), value);
        set_leaf_grad(*node, requires_grad);
        return Tensor(std::move(node));
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> data,
                            bool requires_grad = false) {
        check_shape(shape);
        if (detail::shape_numel(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + detail::shape_str(shape) +
                                        " expects " + std::to_string(detail::shape_numel(shape)) +
                                        " values, got " + std::to_string(data.size()));
        }
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        set_leaf_grad(*node, requires_grad);
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }

    const std::vector<int>& shape() const { return checked().shape; }
    int rank() const { return static_cast<int>(checked().shape.size()); }
    int dim(int i) const { return checked().shape.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return checked().numel(); }

    std::span<const T> data() const { return checked().data; }
    std::span<T> data() { return checked().data; }

    bool requires_grad() const { return checked().requires_grad; }
    bool has_grad() const { return defined() && !node_->grad.empty(); }

    std::span<const T> grad() const {
        if (!has_grad()) throw std::logic_error("tensor: gradient absent");
        return node_->grad;
    }
    std::span<T> grad() {
        if (!has_grad()) throw std::logic_error("tensor: gradient absent");
        return node_->grad;
    }

    void zero_grad() {
        auto& n = checked();
        if (n.requires_grad) n.grad.assign(n.numel(), T(0));
    }

    T item() const {
        if (numel() != 1) {
            throw std::invalid_argument("tensor: item() on non-scalar shape " +
                                        detail::shape_str(shape()));
        }
        return node_->data[0];
    }

    /// Element access by NCHW-style multi-index (tests and IO paths; hot loops
    /// use data() spans directly).
    T at(std::initializer_list<int> idx) const {
        return node_->data[flat_index(idx)];
    }
    void set(std::initializer_list<int> idx, T value) { node_->data[flat_index(idx)] = value; }

    bool tracked() const { return defined() && node_->tracked; }

    detail::NodePtr<T> node() const { return node_; }
    static Tensor wrap(detail::NodePtr<T> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(detail::NodePtr<T> node) : node_(std::move(node)) {}

    static void check_shape(const std::vector<int>& shape) {
        if (shape.empty() || shape.size() > 4) {
            throw std::invalid_argument("tensor: rank must be 1..4, got shape " +
                                        detail::shape_str(shape));
        }
        for (int d : shape) {
            if (d <= 0) {
                throw std::invalid_argument("tensor: dims must be positive, got shape " +
                                            detail::shape_str(shape));
            }
        }
    }

    static void set_leaf_grad(detail::Node<T>& node, bool requires_grad) {
        node.requires_grad = requires_grad;
        node.tracked = requires_grad;
        if (requires_grad) node.grad.assign(node.numel(), T(0));
    }

    std::size_t flat_index(std::initializer_list<int> idx) const {
        const auto& shape = checked().shape;
        if (idx.size() != shape.size()) {
            throw std::invalid_argument("tensor: index rank mismatch");
        }
        std::size_t flat = 0;
        std::size_t k = 0;
        for (int i : idx) {
            if (i < 0 || i >= shape[k]) throw std::out_of_range("tensor: index out of range");
            flat = flat * static_cast<std::size_t>(shape[k]) + static_cast<std::size_t>(i);
            ++k;
        }
        return flat;
    }

    detail::Node<T>& checked() const {
        if (!node_) throw std::logic_error("tensor: undefined");
        return *node_;
    }

    detail::NodePtr<T> node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients of interior nodes live
/// only for the duration of the call; parameters (requires_grad leaves)
/// accumulate into their persistent grad slot, additively across calls.
template <typename T>
void backward(const Tensor<T>& loss);

extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace ypose
