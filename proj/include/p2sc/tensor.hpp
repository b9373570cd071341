#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "p2sc/common.hpp"

namespace p2sc {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct Node;

// Accumulates this node's output gradient into its parents. parent_grads[i] is
// a zero-initialized buffer for parents[i], or nullptr when that parent does
// not require gradient.
using BackwardFn = std::function<void(const Node& self,
                                      std::span<const double> gout,
                                      const std::vector<double*>& parent_grads)>;

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // leaves only; allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;  // empty for leaves

    bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

// Reverse-mode gradient recording is on by default; scope a NoGradGuard around
// pure inference passes to skip taping. Thread-local, nests.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Dense row-major tensor participating in reverse-mode differentiation.
// Copies share the underlying node (shallow value semantics, like a handle).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    size_t ndim() const { return shape().size(); }
    int64_t dim(size_t i) const;
    int64_t numel() const;

    std::span<const double> values() const;
    // Direct mutation is reserved for leaves (parameter updates, data staging);
    // mutating an op output would desynchronize it from its recorded inputs.
    std::vector<double>& mutable_values();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Scalar accessors.
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    // Reverse pass from a scalar. Gradients accumulate into requires_grad
    // leaves; repeated calls without zero_grad() add up. Traversal order is
    // deterministic, so reruns on the same graph are bit-identical.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, detail::BackwardFn);
};

// Extension point every differentiable operation is built on: caller computes
// the forward values and supplies the backward rule. The node is recorded only
// when gradients are enabled and some input requires them.
Tensor make_op(Shape out_shape, std::vector<double> out_values, std::vector<Tensor> parents,
               detail::BackwardFn backward_fn);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued fn at x. Throws NumericError on non-finite values.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                  double eps = 1e-5);

}  // namespace p2sc
