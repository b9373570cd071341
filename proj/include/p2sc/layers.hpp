#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2sc/ops.hpp"
#include "p2sc/rng.hpp"
#include "p2sc/tensor.hpp"

namespace p2sc {

// Flat, ordered registry of every learnable parameter and persistent buffer
// (running statistics). Layers hold aliases of the registered tensors, so the
// optimizer and checkpoint code see updates without extra plumbing.
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable = true;
    };

    Tensor parameter(const std::string& name, Shape shape, std::vector<double> init);
    Tensor buffer(const std::string& name, Shape shape, std::vector<double> init);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    const Entry* find(const std::string& name) const;
    size_t trainable_count() const;
    int64_t trainable_numel() const;

    void zero_grad();

private:
    Tensor add(const std::string& name, Shape shape, std::vector<double> init, bool trainable);
    std::vector<Entry> entries_;
};

struct Linear {
    Tensor w;  // [out, in]
    Tensor b;  // [out]; undefined when bias-free
    bool has_bias = true;

    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out, RngStream& rng,
           bool bias = true);

    Tensor forward(const Tensor& x) const;
};

struct BatchNorm1d {
    Tensor gamma, beta;
    Tensor running_mean, running_var;

    BatchNorm1d() = default;
    BatchNorm1d(ParamRegistry& reg, const std::string& prefix, int64_t width);

    Tensor forward(const Tensor& x, bool training);
};

// Stack of Linear layers; every layer is followed by batchnorm+relu except,
// when plain_last is set, the final one (used for logit/coordinate outputs).
struct MLP {
    std::vector<Linear> linears;
    std::vector<BatchNorm1d> bns;
    bool plain_last = false;

    MLP() = default;
    MLP(ParamRegistry& reg, const std::string& prefix, int64_t in,
        const std::vector<int64_t>& widths, RngStream& rng, bool plain_last = false);

    Tensor forward(const Tensor& x, bool training);
};

// Fan-balanced uniform init in [-sqrt(6/(in+out)), +sqrt(6/(in+out))].
std::vector<double> glorot_uniform(int64_t fan_in, int64_t fan_out, int64_t count,
                                   RngStream& rng);

}  // namespace p2sc
