#include "p2sc/heads.hpp"

#include <algorithm>
#include <cmath>

#include "p2sc/aggregation.hpp"
#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

namespace p2sc {

int classify(const std::vector<double>& lengths) {
    P2SC_CHECK(!lengths.empty(), "classify: empty length vector");
    int best = 0;
    for (size_t j = 1; j < lengths.size(); ++j) {
        if (lengths[j] > lengths[static_cast<size_t>(best)]) best = static_cast<int>(j);
    }
    return best;
}

void RetrievalIndex::add(int64_t id, std::vector<double> lengths, int label) {
    if (!entries.empty()) {
        P2SC_CHECK(lengths.size() == entries.front().lengths.size(),
                   "retrieval index: inconsistent length-vector width");
    }
    entries.push_back(Entry{id, std::move(lengths), label});
}

namespace {

double length_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Gallery positions ranked by distance to the query, ties by insertion order.
std::vector<size_t> rank_gallery(const std::vector<double>& query, const RetrievalIndex& index,
                                 int64_t exclude_id) {
    std::vector<size_t> order;
    std::vector<double> dist(index.entries.size(), 0.0);
    for (size_t i = 0; i < index.entries.size(); ++i) {
        if (index.entries[i].id == exclude_id) continue;
        dist[i] = length_distance(query, index.entries[i].lengths);
        order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dist[a] < dist[b]; });
    return order;
}

}  // namespace

std::vector<int64_t> retrieve(const std::vector<double>& query, const RetrievalIndex& index,
                              size_t top_k) {
    P2SC_CHECK(!index.entries.empty(), "retrieve: empty index");
    P2SC_CHECK(query.size() == index.entries.front().lengths.size(),
               "retrieve: query width " << query.size() << " != index width "
                                        << index.entries.front().lengths.size());
    std::vector<size_t> order = rank_gallery(query, index, /*exclude_id=*/-1);
    std::vector<int64_t> ids;
    for (size_t i = 0; i < order.size() && i < top_k; ++i) {
        ids.push_back(index.entries[order[i]].id);
    }
    return ids;
}

RetrievalMetrics mean_average_precision(const RetrievalIndex& index) {
    P2SC_CHECK(!index.entries.empty(), "mean_average_precision: empty index");
    RetrievalMetrics out;
    const size_t gallery_size = index.entries.size() - 1;  // query removed
    std::vector<double> precision_sum(gallery_size, 0.0);
    std::vector<double> recall_sum(gallery_size, 0.0);
    size_t used = 0;
    double ap_sum = 0.0;

    for (const RetrievalIndex::Entry& q : index.entries) {
        size_t total_relevant = 0;
        for (const RetrievalIndex::Entry& e : index.entries) {
            if (e.id != q.id && e.label == q.label) ++total_relevant;
        }
        if (total_relevant == 0) {
            ++out.skipped_queries;
            continue;
        }
        const std::vector<size_t> order = rank_gallery(q.lengths, index, q.id);
        size_t hits = 0;
        double ap = 0.0;
        for (size_t rank = 0; rank < order.size(); ++rank) {
            if (index.entries[order[rank]].label == q.label) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
            }
            precision_sum[rank] += static_cast<double>(hits) / static_cast<double>(rank + 1);
            recall_sum[rank] += static_cast<double>(hits) / static_cast<double>(total_relevant);
        }
        const double query_ap = ap / static_cast<double>(total_relevant);
        out.per_query.emplace_back(q.id, query_ap);
        ap_sum += query_ap;
        ++used;
    }
    P2SC_CHECK(used > 0, "mean_average_precision: every query lacked relevant items");
    out.map = ap_sum / static_cast<double>(used);
    out.pr.reserve(gallery_size);
    for (size_t rank = 0; rank < gallery_size; ++rank) {
        out.pr.emplace_back(recall_sum[rank] / static_cast<double>(used),
                            precision_sum[rank] / static_cast<double>(used));
    }
    return out;
}

IouResult iou(const std::vector<int>& pred, const std::vector<int>& gt, int num_parts) {
    P2SC_CHECK(pred.size() == gt.size(),
               "iou: prediction count " << pred.size() << " != ground-truth count " << gt.size());
    P2SC_CHECK(num_parts >= 1, "iou: num_parts must be >= 1");
    IouResult res;
    res.per_part.resize(static_cast<size_t>(num_parts));
    for (int p = 0; p < num_parts; ++p) {
        size_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const bool a = pred[i] == p;
            const bool b = gt[i] == p;
            inter += (a && b) ? 1 : 0;
            uni += (a || b) ? 1 : 0;
        }
        res.per_part[static_cast<size_t>(p)] =
            uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        res.mean += res.per_part[static_cast<size_t>(p)];
    }
    res.mean /= static_cast<double>(num_parts);
    return res;
}

SegmentationHead::SegmentationHead(ParamRegistry& reg, const std::string& prefix,
                                   int64_t shuffled_per_centroid, int64_t d_digit,
                                   int64_t layer1_width, std::vector<int64_t> mid_widths,
                                   std::vector<int64_t> point_widths, int64_t num_parts,
                                   RngStream& rng)
    : num_parts_(num_parts) {
    P2SC_CHECK_AS(num_parts >= 1, ConfigError, "segmentation head: num_parts must be >= 1");
    P2SC_CHECK_AS(!mid_widths.empty() && !point_widths.empty(), ConfigError,
                  "segmentation head: width lists must be nonempty");
    const int64_t mid_in = shuffled_per_centroid + d_digit + layer1_width;
    mid_mlp_ = MLP(reg, prefix + ".mid", mid_in, mid_widths, rng);
    std::vector<int64_t> pw = std::move(point_widths);
    pw.push_back(num_parts);
    point_mlp_ = MLP(reg, prefix + ".point", mid_widths.back() + 3, pw, rng, /*plain_last=*/true);
}

Tensor SegmentationHead::forward(const std::vector<Point3>& points, const BackboneOutput& bb,
                                 const Tensor& shuffled_flat, const Tensor& capsule,
                                 bool training) {
    const auto m2 = static_cast<int64_t>(bb.layer2.centroids.size());
    P2SC_CHECK(shuffled_flat.ndim() == 2 && shuffled_flat.dim(0) == m2,
               "segmentation head: shuffled features must have one row per layer-2 centroid");
    P2SC_CHECK(capsule.ndim() == 1, "segmentation head: capsule must be a vector");

    // Shape-level context: the digit capsule duplicated across centroids.
    std::vector<int64_t> dup(static_cast<size_t>(m2), 0);
    Tensor cap_rows = ops::gather_rows(ops::reshape(capsule, {1, capsule.dim(0)}), std::move(dup));
    Tensor deep = ops::concat({shuffled_flat, cap_rows}, 1);  // [M2, F+d_digit]

    // Propagate to layer-1 centroids, attach their skip features, refine.
    Tensor at_l1 = interpolate_features(bb.layer1.centroids, bb.layer2.centroids, deep);
    at_l1 = ops::concat({at_l1, bb.layer1_pooled}, 1);
    at_l1 = mid_mlp_.forward(at_l1, training);

    // Propagate to every input point; coordinates give the positional signal.
    Tensor at_points = interpolate_features(points, bb.layer1.centroids, at_l1);
    at_points = ops::concat({at_points, coords_tensor(points)}, 1);
    return point_mlp_.forward(at_points, training);
}

}  // namespace p2sc
