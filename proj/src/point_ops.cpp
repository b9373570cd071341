#include "p2sc/point_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2sc/common.hpp"

namespace p2sc {

namespace geom {

double dist2(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

bool lex_less(const Point3& a, const Point3& b) {
    if (a[0] != b[0]) return a[0] < b[0];
    if (a[1] != b[1]) return a[1] < b[1];
    return a[2] < b[2];
}

}  // namespace geom

void PointCloud::validate() const {
    P2SC_CHECK_AS(!coords.empty(), DataError, "point cloud is empty");
    for (size_t i = 0; i < coords.size(); ++i) {
        for (double c : coords[i]) {
            P2SC_CHECK_AS(std::isfinite(c), DataError,
                          "non-finite coordinate at point " << i);
        }
    }
    if (normals) {
        P2SC_CHECK_AS(normals->size() == coords.size(), DataError,
                      "normal count " << normals->size() << " != point count " << coords.size());
        for (size_t i = 0; i < normals->size(); ++i) {
            const Point3& n = (*normals)[i];
            for (double c : n) {
                P2SC_CHECK_AS(std::isfinite(c), DataError, "non-finite normal at point " << i);
            }
            const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            P2SC_CHECK_AS(std::abs(len - 1.0) <= 1e-4, DataError,
                          "normal " << i << " has length " << len << ", expected unit");
        }
    }
    if (part_labels) {
        P2SC_CHECK_AS(part_labels->size() == coords.size(), DataError,
                      "part label count " << part_labels->size() << " != point count "
                                          << coords.size());
        for (size_t i = 0; i < part_labels->size(); ++i) {
            P2SC_CHECK_AS((*part_labels)[i] >= 0, DataError,
                          "negative part label at point " << i);
        }
    }
}

namespace {

// Prefers larger key; ties fall back to lexicographic coordinates, then index.
bool fps_better(double key_a, const Point3& a, int64_t ia, double key_b, const Point3& b,
                int64_t ib) {
    if (key_a != key_b) return key_a > key_b;
    if (a != b) return geom::lex_less(a, b);
    return ia < ib;
}

}  // namespace

std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m) {
    const int64_t n = cloud.size();
    P2SC_CHECK_AS(n > 0, DataError, "farthest_point_sample: empty cloud");
    P2SC_CHECK(m >= 1 && m <= n, "farthest_point_sample: m=" << m << " outside [1, " << n << "]");

    Point3 mean{0.0, 0.0, 0.0};
    for (const Point3& p : cloud.coords) {
        mean[0] += p[0];
        mean[1] += p[1];
        mean[2] += p[2];
    }
    mean[0] /= static_cast<double>(n);
    mean[1] /= static_cast<double>(n);
    mean[2] /= static_cast<double>(n);

    std::vector<char> selected(static_cast<size_t>(n), 0);
    std::vector<double> min_d(static_cast<size_t>(n), 0.0);
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(m));

    // Seed: farthest point from the centroid of the cloud.
    int64_t best = 0;
    double best_key = geom::dist2(cloud.coords[0], mean);
    for (int64_t i = 1; i < n; ++i) {
        const double key = geom::dist2(cloud.coords[static_cast<size_t>(i)], mean);
        if (fps_better(key, cloud.coords[static_cast<size_t>(i)], i, best_key,
                       cloud.coords[static_cast<size_t>(best)], best)) {
            best = i;
            best_key = key;
        }
    }
    out.push_back(best);
    selected[static_cast<size_t>(best)] = 1;
    for (int64_t i = 0; i < n; ++i) {
        min_d[static_cast<size_t>(i)] =
            geom::dist2(cloud.coords[static_cast<size_t>(i)], cloud.coords[static_cast<size_t>(best)]);
    }

    while (static_cast<int64_t>(out.size()) < m) {
        int64_t pick = -1;
        double pick_key = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            if (selected[static_cast<size_t>(i)]) continue;
            if (pick < 0 ||
                fps_better(min_d[static_cast<size_t>(i)], cloud.coords[static_cast<size_t>(i)], i,
                           pick_key, cloud.coords[static_cast<size_t>(pick)], pick)) {
                pick = i;
                pick_key = min_d[static_cast<size_t>(i)];
            }
        }
        out.push_back(pick);
        selected[static_cast<size_t>(pick)] = 1;
        for (int64_t i = 0; i < n; ++i) {
            if (selected[static_cast<size_t>(i)]) continue;
            min_d[static_cast<size_t>(i)] =
                std::min(min_d[static_cast<size_t>(i)],
                         geom::dist2(cloud.coords[static_cast<size_t>(i)],
                                     cloud.coords[static_cast<size_t>(pick)]));
        }
    }
    return out;
}

std::vector<int64_t> knn_group(const PointCloud& cloud, const std::vector<int64_t>& centroids,
                               int64_t k) {
    const int64_t n = cloud.size();
    P2SC_CHECK(k >= 1, "knn_group: k must be positive, got " << k);
    P2SC_CHECK_AS(n > 0, DataError, "knn_group: empty cloud");
    for (int64_t c : centroids) {
        P2SC_CHECK(c >= 0 && c < n, "knn_group: centroid index " << c << " out of range");
    }

    std::vector<int64_t> out(centroids.size() * static_cast<size_t>(k));
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::vector<double> d2(static_cast<size_t>(n));
    for (size_t ci = 0; ci < centroids.size(); ++ci) {
        const Point3& q = cloud.coords[static_cast<size_t>(centroids[ci])];
        for (int64_t i = 0; i < n; ++i) {
            d2[static_cast<size_t>(i)] = geom::dist2(cloud.coords[static_cast<size_t>(i)], q);
        }
        std::iota(order.begin(), order.end(), int64_t{0});
        const int64_t take = std::min(k, n);
        std::partial_sort(order.begin(), order.begin() + take, order.end(),
                          [&](int64_t a, int64_t b) {
                              const double da = d2[static_cast<size_t>(a)];
                              const double db = d2[static_cast<size_t>(b)];
                              if (da != db) return da < db;
                              const Point3& pa = cloud.coords[static_cast<size_t>(a)];
                              const Point3& pb = cloud.coords[static_cast<size_t>(b)];
                              if (pa != pb) return geom::lex_less(pa, pb);
                              return a < b;
                          });
        for (int64_t j = 0; j < k; ++j) {
            // Pad short clouds by repeating the nearest point.
            const int64_t src = j < take ? order[static_cast<size_t>(j)] : order[0];
            out[ci * static_cast<size_t>(k) + static_cast<size_t>(j)] = src;
        }
    }
    return out;
}

SampleGrouping sample_and_group(const PointCloud& cloud, int64_t m,
                                const std::vector<int64_t>& scales) {
    P2SC_CHECK(!scales.empty(), "sample_and_group: at least one scale required");
    SampleGrouping g;
    g.centroid_indices = farthest_point_sample(cloud, m);
    g.scale_k = scales;
    g.neighbor_indices.reserve(scales.size());
    for (int64_t k : scales) {
        g.neighbor_indices.push_back(knn_group(cloud, g.centroid_indices, k));
    }
    return g;
}

Tensor group_local_frame(const PointCloud& cloud, const SampleGrouping& grouping, size_t scale) {
    P2SC_CHECK(scale < grouping.scale_k.size(), "group_local_frame: scale index out of range");
    const int64_t m = static_cast<int64_t>(grouping.centroid_indices.size());
    const int64_t k = grouping.scale_k[scale];
    const std::vector<int64_t>& nbr = grouping.neighbor_indices[scale];

    std::vector<double> vals(static_cast<size_t>(m * k * 3));
    for (int64_t ci = 0; ci < m; ++ci) {
        const Point3& c = cloud.coords[static_cast<size_t>(grouping.centroid_indices[ci])];
        for (int64_t j = 0; j < k; ++j) {
            const Point3& p = cloud.coords[static_cast<size_t>(nbr[static_cast<size_t>(ci * k + j)])];
            const size_t base = static_cast<size_t>((ci * k + j) * 3);
            vals[base + 0] = p[0] - c[0];
            vals[base + 1] = p[1] - c[1];
            vals[base + 2] = p[2] - c[2];
        }
    }
    return Tensor::from_data({m, k, 3}, std::move(vals));
}

Tensor interpolate_features(const std::vector<Point3>& targets, const std::vector<Point3>& sources,
                            const Tensor& source_feats, int64_t k) {
    const int64_t nt = static_cast<int64_t>(targets.size());
    const int64_t ns = static_cast<int64_t>(sources.size());
    P2SC_CHECK(ns > 0, "interpolate_features: no source points");
    P2SC_CHECK(source_feats.ndim() == 2 && source_feats.shape()[0] == ns,
               "interpolate_features: feature matrix must be [" << ns << ", D]");
    const int64_t d = source_feats.shape()[1];
    const int64_t keff = std::min(k, ns);

    // Geometry-only weight table; frozen into the op closure for backward.
    std::vector<int64_t> idx(static_cast<size_t>(nt * keff));
    std::vector<double> w(static_cast<size_t>(nt * keff));
    std::vector<int64_t> order(static_cast<size_t>(ns));
    std::vector<double> d2(static_cast<size_t>(ns));
    for (int64_t t = 0; t < nt; ++t) {
        for (int64_t s = 0; s < ns; ++s) {
            d2[static_cast<size_t>(s)] = geom::dist2(sources[static_cast<size_t>(s)],
                                                     targets[static_cast<size_t>(t)]);
        }
        std::iota(order.begin(), order.end(), int64_t{0});
        std::partial_sort(order.begin(), order.begin() + keff, order.end(),
                          [&](int64_t a, int64_t b) {
                              const double da = d2[static_cast<size_t>(a)];
                              const double db = d2[static_cast<size_t>(b)];
                              if (da != db) return da < db;
                              const Point3& pa = sources[static_cast<size_t>(a)];
                              const Point3& pb = sources[static_cast<size_t>(b)];
                              if (pa != pb) return geom::lex_less(pa, pb);
                              return a < b;
                          });
        double wsum = 0.0;
        for (int64_t j = 0; j < keff; ++j) {
            const int64_t s = order[static_cast<size_t>(j)];
            const double dist = std::sqrt(d2[static_cast<size_t>(s)]);
            const double wj = 1.0 / (dist + 1e-8);
            idx[static_cast<size_t>(t * keff + j)] = s;
            w[static_cast<size_t>(t * keff + j)] = wj;
            wsum += wj;
        }
        for (int64_t j = 0; j < keff; ++j) {
            w[static_cast<size_t>(t * keff + j)] /= wsum;
        }
    }

    const std::span<const double> feats = source_feats.values();
    std::vector<double> vals(static_cast<size_t>(nt * d), 0.0);
    for (int64_t t = 0; t < nt; ++t) {
        for (int64_t j = 0; j < keff; ++j) {
            const int64_t s = idx[static_cast<size_t>(t * keff + j)];
            const double wj = w[static_cast<size_t>(t * keff + j)];
            for (int64_t c = 0; c < d; ++c) {
                vals[static_cast<size_t>(t * d + c)] +=
                    wj * feats[static_cast<size_t>(s * d + c)];
            }
        }
    }

    return make_op(
        {nt, d}, std::move(vals), {source_feats},
        [nt, d, keff, idx = std::move(idx), w = std::move(w)](
            const detail::Node&, std::span<const double> gout,
            const std::vector<double*>& pg) {
            if (!pg[0]) return;
            for (int64_t t = 0; t < nt; ++t) {
                for (int64_t j = 0; j < keff; ++j) {
                    const int64_t s = idx[static_cast<size_t>(t * keff + j)];
                    const double wj = w[static_cast<size_t>(t * keff + j)];
                    for (int64_t c = 0; c < d; ++c) {
                        pg[0][static_cast<size_t>(s * d + c)] +=
                            wj * gout[static_cast<size_t>(t * d + c)];
                    }
                }
            }
        });
}

}  // namespace p2sc
