#pragma once

#include <cstdint>
#include <vector>

#include "p2sc/layers.hpp"
#include "p2sc/point_ops.hpp"

namespace p2sc {

struct ExtractionLayerConfig {
    int64_t m = 0;                    // sampled centroid count
    std::vector<int64_t> scales;      // K_t neighbor counts, strictly increasing
    std::vector<int64_t> mlp_units;   // shared point-wise MLP widths
    int64_t in_channels = 3;          // 3, 6 with normals, or prior C + 3

    void validate() const;
    int64_t out_channels() const { return mlp_units.back(); }
    int64_t num_scales() const { return static_cast<int64_t>(scales.size()); }
};

struct MultiScaleFeatures {
    std::vector<Point3> centroids;  // M
    Tensor features;                // [M, T, C]
};

// One multi-scale local feature extraction layer: FPS centroids, per-scale
// kNN grouping, a shared point-wise MLP, and max-pooling over each group.
class ExtractionLayer {
public:
    ExtractionLayer() = default;
    ExtractionLayer(ParamRegistry& reg, const std::string& prefix,
                    const ExtractionLayerConfig& cfg, RngStream& rng);

    // point_feats is [N, in_channels-3] of per-point features gathered into
    // each neighbor row after the re-centered coordinates; pass an undefined
    // tensor when in_channels == 3.
    MultiScaleFeatures forward(const std::vector<Point3>& coords, const Tensor& point_feats,
                               bool training);

    const ExtractionLayerConfig& config() const { return cfg_; }

private:
    ExtractionLayerConfig cfg_;
    MLP mlp_;
};

struct BackboneOutput {
    MultiScaleFeatures layer1;
    MultiScaleFeatures layer2;
    Tensor layer1_pooled;  // [M1, C1], element-wise max over scales (layer-2 input)
};

// Two stacked extraction layers. Layer 2 consumes layer 1's centroids with
// per-centroid features = max over the scale axis of layer 1's output.
class Backbone {
public:
    Backbone() = default;
    Backbone(ParamRegistry& reg, const ExtractionLayerConfig& cfg1,
             const ExtractionLayerConfig& cfg2, RngStream& rng);

    BackboneOutput forward(const PointCloud& cloud, bool use_normals, bool training);

private:
    ExtractionLayer l1_, l2_;
};

}  // namespace p2sc
