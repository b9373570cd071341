#include "p2sc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace p2sc {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {
thread_local int no_grad_depth = 0;

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> values,
                                       bool requires_grad) {
    for (int64_t d : shape)
        P2SC_CHECK(d > 0, "tensor dimensions must be positive, got " << shape_str(shape));
    P2SC_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
               "value count " << values.size() << " does not match shape " << shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}
}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

bool grad_enabled() { return no_grad_depth == 0; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(new_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
    return Tensor(new_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    P2SC_CHECK(node_, "use of undefined tensor");
    return node_->shape;
}

int64_t Tensor::dim(size_t i) const {
    P2SC_CHECK(i < shape().size(), "dim index " << i << " out of range for " << shape_str(shape()));
    return shape()[i];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
    P2SC_CHECK(node_, "use of undefined tensor");
    return node_->values;
}

std::vector<double>& Tensor::mutable_values() {
    P2SC_CHECK(node_, "use of undefined tensor");
    P2SC_CHECK(node_->is_leaf(), "mutable access is restricted to leaf tensors");
    return node_->values;
}

bool Tensor::requires_grad() const {
    P2SC_CHECK(node_, "use of undefined tensor");
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool v) {
    P2SC_CHECK(node_, "use of undefined tensor");
    P2SC_CHECK(node_->is_leaf(), "requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    P2SC_CHECK(node_, "use of undefined tensor");
    P2SC_CHECK(!node_->grad.empty(), "tensor has no accumulated gradient");
    return node_->grad;
}

void Tensor::zero_grad() {
    P2SC_CHECK(node_, "use of undefined tensor");
    node_->grad.clear();
}

double Tensor::item() const {
    P2SC_CHECK(numel() == 1, "item() requires a single-element tensor, got " << shape_str(shape()));
    return values()[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    P2SC_CHECK(idx.size() == s.size(), "index rank mismatch for " << shape_str(s));
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        P2SC_CHECK(i >= 0 && i < s[k], "index out of range");
        flat = flat * s[k] + i;
        ++k;
    }
    return values()[static_cast<size_t>(flat)];
}

Tensor make_op(Shape out_shape, std::vector<double> out_values, std::vector<Tensor> parents,
               detail::BackwardFn backward_fn) {
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const Tensor& p : parents)
            if (p.defined() && p.requires_grad()) needs_grad = true;
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(out_shape);
    node->values = std::move(out_values);
    P2SC_CHECK(shape_numel(node->shape) == static_cast<int64_t>(node->values.size()),
               "op produced " << node->values.size() << " values for shape "
                              << shape_str(node->shape));
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    P2SC_CHECK(node_, "use of undefined tensor");
    P2SC_CHECK(numel() == 1, "backward requires a scalar loss, got " << shape_str(shape()));
    P2SC_CHECK(std::isfinite(values()[0]), "backward on non-finite loss value");
    if (!node_->requires_grad) return;

    // Deterministic post-order DFS (parents visited in recording order).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (next < cur->parents.size()) {
            detail::Node* p = cur->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    // Transient gradient buffers for interior nodes; leaves accumulate into
    // their persistent grad so repeated backward calls add up.
    std::unordered_map<detail::Node*, std::vector<double>> interior;
    auto grad_buffer = [&](detail::Node* n) -> double* {
        if (n->is_leaf()) {
            if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
            return n->grad.data();
        }
        auto [it, inserted] = interior.try_emplace(n);
        if (inserted) it->second.assign(n->values.size(), 0.0);
        return it->second.data();
    };

    grad_buffer(node_.get())[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->is_leaf()) continue;
        auto git = interior.find(n);
        if (git == interior.end()) continue;
        std::vector<double*> parent_grads(n->parents.size(), nullptr);
        for (size_t i = 0; i < n->parents.size(); ++i) {
            detail::Node* p = n->parents[i].get();
            if (p->requires_grad) parent_grads[i] = grad_buffer(p);
        }
        n->backward_fn(*n, git->second, parent_grads);
        interior.erase(git);
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps) {
    P2SC_CHECK(eps > 0, "grad_check eps must be positive");

    Tensor probe = Tensor::from_data(x.shape(), {x.values().begin(), x.values().end()}, true);
    Tensor loss = fn(probe);
    P2SC_CHECK(loss.numel() == 1, "grad_check fn must return a scalar");
    P2SC_CHECK_AS(std::isfinite(loss.item()), NumericError, "grad_check: non-finite loss");
    loss.backward();
    std::vector<double> analytic(probe.numel(), 0.0);
    if (probe.has_grad()) analytic.assign(probe.grad().begin(), probe.grad().end());

    std::vector<double> base(x.values().begin(), x.values().end());
    double worst = 0.0;
    NoGradGuard guard;
    for (size_t i = 0; i < base.size(); ++i) {
        auto eval_at = [&](double v) {
            std::vector<double> shifted = base;
            shifted[i] = v;
            double out = fn(Tensor::from_data(x.shape(), std::move(shifted))).item();
            P2SC_CHECK_AS(std::isfinite(out), NumericError, "grad_check: non-finite probe value");
            return out;
        };
        double numeric = (eval_at(base[i] + eps) - eval_at(base[i] - eps)) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace p2sc
