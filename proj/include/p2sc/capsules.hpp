#pragma once

#include <cstdint>
#include <vector>

#include "p2sc/layers.hpp"

namespace p2sc {

// Row-wise squash: y = x * ||x|| / (1 + ||x||^2); zero rows map to zero.
Tensor squash_rows(const Tensor& x);

// Shared projection turning each (chunk : spatial) pair into one capsule.
struct CapsuleFusion {
    Linear map;  // bias-free, (chunk width + 3) -> d_cap

    CapsuleFusion() = default;
    CapsuleFusion(ParamRegistry& reg, const std::string& prefix, int64_t chunk_width,
                  int64_t d_cap, RngStream& rng);
};

// Splits each fused embedding row [Q, D+3] into s feature chunks, re-attaches
// the 3-d spatial embedding to every chunk, projects through the shared
// fusion map and squashes: Q*s primary capsules of width d_cap.
Tensor rearrange_split(const Tensor& fused, int64_t s, const CapsuleFusion& fusion);

// Per-pair prediction vectors u_hat[i,j] = u_i^T W_ij, as an [I, J, d_digit]
// tensor. W is [I, J, d_cap, d_digit].
Tensor capsule_predict(const Tensor& u, const Tensor& w);

// s_j = sum_i c_ij * u_hat_ij -> [J, d_digit].
Tensor coupled_sum(const Tensor& coupling, const Tensor& u_hat);

// a_ij = v_j . u_hat_ij -> [I, J].
Tensor agreement(const Tensor& v, const Tensor& u_hat);

// Transform weights plus learnable routing log priors. The priors persist
// across forward passes as parameters; within one forward the agreement
// updates are applied to a transient in-graph copy only.
class CapsuleRouter {
public:
    CapsuleRouter() = default;
    CapsuleRouter(ParamRegistry& reg, const std::string& prefix, int64_t in_caps, int64_t d_cap,
                  int64_t out_caps, int64_t d_digit, RngStream& rng);

    struct Trace {
        std::vector<Tensor> v_per_iter;  // digit capsules after each iteration
        std::vector<Tensor> coupling;    // c of each iteration
    };

    // u: [I, d_cap] primary capsules -> [J, d_digit] digit capsules.
    Tensor forward(const Tensor& u, int64_t iters, Trace* trace = nullptr) const;

    int64_t in_caps() const { return i_; }
    int64_t out_caps() const { return j_; }

private:
    Tensor w_;        // [I, J, d_cap, d_digit]
    Tensor b_prior_;  // [I, J]
    int64_t i_ = 0, j_ = 0, d_cap_ = 0, d_digit_ = 0;
};

// V_j = ||v_j||_2.
Tensor capsule_lengths(const Tensor& v);

}  // namespace p2sc
