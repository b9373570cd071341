#include "p2sc/layers.hpp"

#include <cmath>

#include "p2sc/common.hpp"

namespace p2sc {

Tensor ParamRegistry::add(const std::string& name, Shape shape, std::vector<double> init,
                          bool trainable) {
    P2SC_CHECK_AS(find(name) == nullptr, ConfigError, "duplicate parameter name '" << name << "'");
    Tensor t = Tensor::from_data(std::move(shape), std::move(init), trainable);
    entries_.push_back(Entry{name, t, trainable});
    return t;
}

Tensor ParamRegistry::parameter(const std::string& name, Shape shape, std::vector<double> init) {
    return add(name, std::move(shape), std::move(init), true);
}

Tensor ParamRegistry::buffer(const std::string& name, Shape shape, std::vector<double> init) {
    return add(name, std::move(shape), std::move(init), false);
}

const ParamRegistry::Entry* ParamRegistry::find(const std::string& name) const {
    for (const Entry& e : entries_) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

size_t ParamRegistry::trainable_count() const {
    size_t n = 0;
    for (const Entry& e : entries_) n += e.trainable ? 1 : 0;
    return n;
}

int64_t ParamRegistry::trainable_numel() const {
    int64_t n = 0;
    for (const Entry& e : entries_) {
        if (e.trainable) n += e.tensor.numel();
    }
    return n;
}

void ParamRegistry::zero_grad() {
    for (Entry& e : entries_) {
        if (e.trainable) e.tensor.zero_grad();
    }
}

std::vector<double> glorot_uniform(int64_t fan_in, int64_t fan_out, int64_t count,
                                   RngStream& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(static_cast<size_t>(count));
    for (double& x : v) x = rng.uniform(-limit, limit);
    return v;
}

Linear::Linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out,
               RngStream& rng, bool bias)
    : has_bias(bias) {
    P2SC_CHECK_AS(in > 0 && out > 0, ConfigError,
                  "linear '" << prefix << "': widths must be positive (" << in << " -> " << out
                             << ")");
    w = reg.parameter(prefix + ".w", {out, in}, glorot_uniform(in, out, in * out, rng));
    if (bias) {
        b = reg.parameter(prefix + ".b", {out}, std::vector<double>(static_cast<size_t>(out), 0.0));
    }
}

Tensor Linear::forward(const Tensor& x) const {
    if (has_bias) return ops::linear(x, w, b);
    return ops::matmul(x, ops::transpose(w));
}

BatchNorm1d::BatchNorm1d(ParamRegistry& reg, const std::string& prefix, int64_t width) {
    P2SC_CHECK_AS(width > 0, ConfigError, "batchnorm '" << prefix << "': width must be positive");
    const auto n = static_cast<size_t>(width);
    gamma = reg.parameter(prefix + ".gamma", {width}, std::vector<double>(n, 1.0));
    beta = reg.parameter(prefix + ".beta", {width}, std::vector<double>(n, 0.0));
    running_mean = reg.buffer(prefix + ".running_mean", {width}, std::vector<double>(n, 0.0));
    running_var = reg.buffer(prefix + ".running_var", {width}, std::vector<double>(n, 1.0));
}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
    return ops::batchnorm(x, gamma, beta, running_mean, running_var, training);
}

MLP::MLP(ParamRegistry& reg, const std::string& prefix, int64_t in,
         const std::vector<int64_t>& widths, RngStream& rng, bool plain_last_)
    : plain_last(plain_last_) {
    P2SC_CHECK_AS(!widths.empty(), ConfigError, "mlp '" << prefix << "': needs at least one layer");
    int64_t cur = in;
    for (size_t i = 0; i < widths.size(); ++i) {
        const std::string layer = prefix + ".fc" + std::to_string(i);
        linears.emplace_back(reg, layer, cur, widths[i], rng);
        const bool plain = plain_last && i + 1 == widths.size();
        if (!plain) bns.emplace_back(reg, prefix + ".bn" + std::to_string(i), widths[i]);
        cur = widths[i];
    }
}

Tensor MLP::forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (size_t i = 0; i < linears.size(); ++i) {
        h = linears[i].forward(h);
        const bool plain = plain_last && i + 1 == linears.size();
        if (!plain) {
            h = bns[i].forward(h, training);
            h = ops::relu(h);
        }
    }
    return h;
}

}  // namespace p2sc
