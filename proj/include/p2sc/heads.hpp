#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2sc/backbone.hpp"
#include "p2sc/layers.hpp"

namespace p2sc {

// Argmax over capsule lengths; ties resolve to the smallest index.
int classify(const std::vector<double>& lengths);

struct RetrievalIndex {
    struct Entry {
        int64_t id = 0;
        std::vector<double> lengths;
        int label = 0;
    };
    std::vector<Entry> entries;

    void add(int64_t id, std::vector<double> lengths, int label);
};

// Gallery ids ranked ascending by Euclidean distance in length space; ties
// keep insertion order. top_k = 0 gives an empty list.
std::vector<int64_t> retrieve(const std::vector<double>& query, const RetrievalIndex& index,
                              size_t top_k);

struct RetrievalMetrics {
    double map = 0.0;
    // Averaged precision/recall across queries at each rank.
    std::vector<std::pair<double, double>> pr;       // (recall, precision)
    std::vector<std::pair<int64_t, double>> per_query;  // (query id, AP)
    size_t skipped_queries = 0;                      // no relevant gallery items
};

// Queries are index entries; the query itself is removed from its gallery.
// Relevance = same class label. Queries with zero relevant items are skipped.
RetrievalMetrics mean_average_precision(const RetrievalIndex& index);

struct IouResult {
    std::vector<double> per_part;
    double mean = 0.0;
};

// Per-part intersection-over-union across num_parts classes; a part absent
// from both pred and gt scores 1.
IouResult iou(const std::vector<int>& pred, const std::vector<int>& gt, int num_parts);

// Part segmentation decoder: the selected digit capsule is duplicated across
// the layer-2 centroids, concatenated with their flattened shuffled features,
// propagated to layer-1 centroids and then to the input points by
// inverse-distance interpolation (with skip features), and classified
// per point by an MLP.
class SegmentationHead {
public:
    SegmentationHead() = default;
    SegmentationHead(ParamRegistry& reg, const std::string& prefix, int64_t shuffled_per_centroid,
                     int64_t d_digit, int64_t layer1_width, std::vector<int64_t> mid_widths,
                     std::vector<int64_t> point_widths, int64_t num_parts, RngStream& rng);

    // shuffled_flat: [M2, shuffled_per_centroid]; capsule: [d_digit].
    Tensor forward(const std::vector<Point3>& points, const BackboneOutput& bb,
                   const Tensor& shuffled_flat, const Tensor& capsule, bool training);

    int64_t num_parts() const { return num_parts_; }

private:
    MLP mid_mlp_;    // at layer-1 centroids
    MLP point_mlp_;  // per point, plain last layer -> part logits
    int64_t num_parts_ = 0;
};

}  // namespace p2sc
