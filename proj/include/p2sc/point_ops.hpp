#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "p2sc/tensor.hpp"

namespace p2sc {

using Point3 = std::array<double, 3>;

// N points with coordinates, optional unit normals, optional part labels.
struct PointCloud {
    std::vector<Point3> coords;
    std::optional<std::vector<Point3>> normals;
    std::optional<std::vector<int>> part_labels;

    int64_t size() const { return static_cast<int64_t>(coords.size()); }
    bool has_normals() const { return normals.has_value(); }
    bool has_parts() const { return part_labels.has_value(); }

    // Enforces finiteness, unit normals (within 1e-4) and label/coord counts.
    void validate() const;
};

// Centroid subset plus per-scale neighbor tables.
struct SampleGrouping {
    std::vector<int64_t> centroid_indices;
    std::vector<std::vector<int64_t>> neighbor_indices;  // [scale][centroid * k + j]
    std::vector<int64_t> scale_k;                        // k per scale
};

// Greedy max-min subset selection. The seed is the point farthest from the
// cloud mean; ties resolve by lexicographic coordinates, then smallest index.
std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m);

// Per-centroid k nearest neighbors, rows ascending by distance with
// lexicographic tie-breaking. When the cloud has fewer than k points the
// nearest point is repeated to fill the row.
std::vector<int64_t> knn_group(const PointCloud& cloud, const std::vector<int64_t>& centroids,
                               int64_t k);

SampleGrouping sample_and_group(const PointCloud& cloud, int64_t m,
                                const std::vector<int64_t>& scales);

// [M, K_t, 3] of neighbor coordinates re-centered on each centroid.
Tensor group_local_frame(const PointCloud& cloud, const SampleGrouping& grouping, size_t scale);

// Inverse-distance-weighted k-NN feature propagation from sources to targets.
// Differentiable in source_feats; the weights depend on geometry only.
Tensor interpolate_features(const std::vector<Point3>& targets, const std::vector<Point3>& sources,
                            const Tensor& source_feats, int64_t k = 3);

namespace geom {
double dist2(const Point3& a, const Point3& b);
// Total order used for all geometric tie-breaking: (key, coords, index).
bool lex_less(const Point3& a, const Point3& b);
}  // namespace geom

}  // namespace p2sc
