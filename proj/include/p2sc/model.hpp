#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "p2sc/aggregation.hpp"
#include "p2sc/backbone.hpp"
#include "p2sc/capsules.hpp"
#include "p2sc/data_io.hpp"
#include "p2sc/heads.hpp"
#include "p2sc/losses.hpp"

namespace p2sc {

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 16;
    int64_t epochs = 30;
    bool cosine_decay = true;

    void validate() const;
};

struct ModelConfig {
    std::string preset = "toy";
    ExtractionLayerConfig layer1;
    ExtractionLayerConfig layer2;
    int64_t r = 2;             // shuffle factor
    int64_t clusters = 16;     // Q
    int64_t split = 4;         // s chunks per cluster
    int64_t d_cap = 16;
    int64_t d_digit = 16;
    int64_t routing_iters = 1;
    int64_t num_classes = 4;
    int64_t num_parts = 0;     // 0 disables the segmentation head
    int64_t points_per_cloud = 256;
    bool use_normals = false;
    std::vector<int64_t> decoder_widths;     // exactly 4; last = points*3
    std::vector<int64_t> seg_mid_widths;     // hidden widths at layer-1 level
    std::vector<int64_t> seg_point_widths;   // hidden widths before part logits
    LossConfig loss;
    OptimConfig optim;
    uint64_t seed = 0;
    bool no_multi = false;
    bool no_vlad = false;
    bool no_caps = false;

    static ModelConfig toy(int64_t num_classes = 4);
    static ModelConfig paper(int64_t num_classes = 40);

    void validate() const;

    // Width of the descriptor rows entering aggregation (C/r, or C when
    // shuffling is ablated away).
    int64_t descriptor_width() const;
    // Primary capsule count I of the configured variant.
    int64_t primary_capsules() const;

    std::string to_json_string() const;
    static ModelConfig from_json_string(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);
};

// Applies one ablation flag to a base config; rejects conflicting flags.
ModelConfig ablation(ModelConfig base, const std::string& variant);

// Resample to the configured input size, then center/scale to the unit sphere.
PointCloud prepare_cloud(const PointCloud& cloud, int64_t points, RngStream& rng);

struct ForwardResult {
    Tensor lengths;       // [J]; capsule lengths, or class probabilities (no_caps)
    Tensor digit_caps;    // [J, d_digit]; undefined for no_caps
    Tensor logits;        // [1, J]; no_caps only
    BackboneOutput backbone;
    Tensor shuffled_flat; // [M2, per-centroid shuffled width] for segmentation
};

class Model {
public:
    explicit Model(const ModelConfig& cfg);

    ForwardResult forward(const PointCloud& prepared, bool training,
                          CapsuleRouter::Trace* trace = nullptr);

    // [N, P] part logits; capsule_class selects the digit capsule to duplicate.
    Tensor forward_seg(const PointCloud& prepared, const ForwardResult& fwd, int capsule_class,
                       bool training);

    // [B, d_digit] selected capsules -> [B, points*3] decoded clouds.
    Tensor decode(const Tensor& capsule_rows, bool training);
    // Single capsule -> [points, 3] cloud (eval statistics).
    Tensor reconstruct(const Tensor& capsule);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    bool has_decoder() const { return decoder_.points > 0; }
    bool has_seg_head() const { return cfg_.num_parts > 0 && !cfg_.no_caps; }

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    Backbone backbone_;
    ClusterBank bank_;          // absent under no_vlad
    CapsuleFusion fusion_;      // absent under no_vlad / no_caps
    CapsuleRouter router_;      // absent under no_caps
    Linear fc_classifier_;      // no_caps only
    ReconstructionDecoder decoder_;
    SegmentationHead seg_;
};

}  // namespace p2sc
