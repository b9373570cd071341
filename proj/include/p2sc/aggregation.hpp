#pragma once

#include <cstdint>
#include <vector>

#include "p2sc/backbone.hpp"
#include "p2sc/layers.hpp"

namespace p2sc {

struct ShuffledFeatures {
    Tensor features;                   // [M*r*T, C/r]
    std::vector<Point3> source_coords; // centroid of each row (repeated r*T times)
};

// Periodic rearrangement of each point's T x C feature slab into r*T rows of
// width C/r: element (t, c) -> row t*r + c / (C/r), column c % (C/r).
ShuffledFeatures multiscale_shuffle(const MultiScaleFeatures& feats, int64_t r);

// Exact inverse of the shuffle index map, on raw values (testing aid).
std::vector<double> multiscale_unshuffle(const std::vector<double>& shuffled, int64_t m, int64_t t,
                                         int64_t c, int64_t r);

// Learnable soft-assignment clustering state: Q feature centers with their
// assignment weights/biases, and an independent coordinate bank.
struct ClusterBank {
    Tensor q;        // [Q, D] feature centers
    Tensor w;        // [Q, D] feature assignment weights
    Tensor b;        // [Q]    feature assignment biases
    Tensor y;        // [Q, 3] coordinate centers
    Tensor w_coord;  // [Q, 3]
    Tensor b_coord;  // [Q]

    ClusterBank() = default;
    ClusterBank(ParamRegistry& reg, const std::string& prefix, int64_t clusters, int64_t width,
                RngStream& rng);

    int64_t clusters() const { return q.defined() ? q.dim(0) : 0; }
};

// Row-wise softmax over exp(w_k . p_i + b_k); entry (i,k) of the result.
Tensor soft_assign(const Tensor& rows, const Tensor& weights, const Tensor& biases);

// Residual aggregation C(q_k) = sum_i assign(i,k) * (p_i - q_k).
Tensor vlad_aggregate(const Tensor& rows, const Tensor& centers, const Tensor& assign);

// Coordinate-side aggregation with the bank's own assignment parameters.
Tensor spatial_embed(const Tensor& coords, const ClusterBank& bank);

// Intra-row L2 normalization of both embeddings, then concatenation to
// [Q, D+3] rows [C(q_k) : C(y_k)].
Tensor fuse_feature_spatial(const Tensor& feat_emb, const Tensor& spat_emb);

// Full aggregation block: shuffle already applied by the caller.
Tensor aggregate_features(const ShuffledFeatures& shuffled, const ClusterBank& bank);

Tensor coords_tensor(const std::vector<Point3>& pts);

}  // namespace p2sc
