#include "p2sc/aggregation.hpp"

#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

namespace p2sc {

namespace {

// out_index -> in_index map of the shuffle bijection for one point's slab.
std::vector<int64_t> shuffle_perm(int64_t t, int64_t c, int64_t r) {
    const int64_t d = c / r;
    std::vector<int64_t> perm(static_cast<size_t>(t * c));
    for (int64_t ti = 0; ti < t; ++ti) {
        for (int64_t ci = 0; ci < c; ++ci) {
            const int64_t row = ti * r + ci / d;
            const int64_t col = ci % d;
            perm[static_cast<size_t>(row * d + col)] = ti * c + ci;
        }
    }
    return perm;
}

}  // namespace

ShuffledFeatures multiscale_shuffle(const MultiScaleFeatures& feats, int64_t r) {
    const Tensor& x = feats.features;
    P2SC_CHECK(x.ndim() == 3, "multiscale_shuffle expects [M,T,C], got " << shape_str(x.shape()));
    const int64_t m = x.dim(0), t = x.dim(1), c = x.dim(2);
    P2SC_CHECK_AS(r >= 1, ConfigError, "multiscale_shuffle: r must be >= 1, got " << r);
    P2SC_CHECK_AS(c % r == 0, ConfigError,
                  "multiscale_shuffle: r=" << r << " does not divide C=" << c);
    P2SC_CHECK(static_cast<int64_t>(feats.centroids.size()) == m,
               "multiscale_shuffle: centroid count mismatch");

    const int64_t slab = t * c;
    const int64_t d = c / r;
    const std::vector<int64_t> perm = shuffle_perm(t, c, r);

    auto xv = x.values();
    std::vector<double> out(static_cast<size_t>(m * slab));
    for (int64_t p = 0; p < m; ++p) {
        const int64_t base = p * slab;
        for (int64_t e = 0; e < slab; ++e) {
            out[static_cast<size_t>(base + e)] = xv[static_cast<size_t>(base + perm[static_cast<size_t>(e)])];
        }
    }

    ShuffledFeatures sf;
    sf.features = make_op({m * r * t, d}, std::move(out), {x},
                          [m, slab, perm](const detail::Node&, std::span<const double> g,
                                          const std::vector<double*>& pg) {
                              if (!pg[0]) return;
                              for (int64_t p = 0; p < m; ++p) {
                                  const int64_t base = p * slab;
                                  for (int64_t e = 0; e < slab; ++e) {
                                      pg[0][base + perm[static_cast<size_t>(e)]] += g[base + e];
                                  }
                              }
                          });
    sf.source_coords.reserve(static_cast<size_t>(m * r * t));
    for (const Point3& p : feats.centroids) {
        for (int64_t rep = 0; rep < r * t; ++rep) sf.source_coords.push_back(p);
    }
    return sf;
}

std::vector<double> multiscale_unshuffle(const std::vector<double>& shuffled, int64_t m, int64_t t,
                                         int64_t c, int64_t r) {
    P2SC_CHECK(c % r == 0, "multiscale_unshuffle: r must divide C");
    P2SC_CHECK(static_cast<int64_t>(shuffled.size()) == m * t * c,
               "multiscale_unshuffle: size mismatch");
    const std::vector<int64_t> perm = shuffle_perm(t, c, r);
    const int64_t slab = t * c;
    std::vector<double> out(shuffled.size());
    for (int64_t p = 0; p < m; ++p) {
        const int64_t base = p * slab;
        for (int64_t e = 0; e < slab; ++e) {
            out[static_cast<size_t>(base + perm[static_cast<size_t>(e)])] =
                shuffled[static_cast<size_t>(base + e)];
        }
    }
    return out;
}

ClusterBank::ClusterBank(ParamRegistry& reg, const std::string& prefix, int64_t clusters,
                         int64_t width, RngStream& rng) {
    P2SC_CHECK_AS(clusters >= 1, ConfigError, "cluster bank: Q must be >= 1, got " << clusters);
    P2SC_CHECK_AS(width >= 1, ConfigError, "cluster bank: width must be >= 1");
    auto centers_init = [&](int64_t count) {
        std::vector<double> v(static_cast<size_t>(count));
        for (double& x : v) x = 0.1 * rng.gaussian();
        return v;
    };
    q = reg.parameter(prefix + ".q", {clusters, width}, centers_init(clusters * width));
    w = reg.parameter(prefix + ".w", {clusters, width},
                      glorot_uniform(width, clusters, clusters * width, rng));
    b = reg.parameter(prefix + ".b", {clusters},
                      std::vector<double>(static_cast<size_t>(clusters), 0.0));
    y = reg.parameter(prefix + ".y", {clusters, 3}, centers_init(clusters * 3));
    w_coord = reg.parameter(prefix + ".w_coord", {clusters, 3},
                            glorot_uniform(3, clusters, clusters * 3, rng));
    b_coord = reg.parameter(prefix + ".b_coord", {clusters},
                            std::vector<double>(static_cast<size_t>(clusters), 0.0));
}

Tensor soft_assign(const Tensor& rows, const Tensor& weights, const Tensor& biases) {
    return ops::softmax(ops::linear(rows, weights, biases), 1);
}

Tensor vlad_aggregate(const Tensor& rows, const Tensor& centers, const Tensor& assign) {
    P2SC_CHECK(rows.ndim() == 2 && centers.ndim() == 2 && assign.ndim() == 2,
               "vlad_aggregate expects 2-D tensors");
    P2SC_CHECK(rows.dim(1) == centers.dim(1) && assign.dim(0) == rows.dim(0) &&
                   assign.dim(1) == centers.dim(0),
               "vlad_aggregate: shape mismatch between rows " << shape_str(rows.shape())
                                                              << ", centers "
                                                              << shape_str(centers.shape())
                                                              << ", assign "
                                                              << shape_str(assign.shape()));
    // sum_i a(i,k) (p_i - q_k) = A^T P - diag(colsum A) Q
    Tensor weighted = ops::matmul(ops::transpose(assign), rows);
    Tensor mass = ops::reduce_sum_axis(assign, 0);  // [Q]
    return ops::sub(weighted, ops::scale_rows(centers, mass));
}

Tensor spatial_embed(const Tensor& coords, const ClusterBank& bank) {
    Tensor assign = soft_assign(coords, bank.w_coord, bank.b_coord);
    return vlad_aggregate(coords, bank.y, assign);
}

Tensor fuse_feature_spatial(const Tensor& feat_emb, const Tensor& spat_emb) {
    P2SC_CHECK(feat_emb.ndim() == 2 && spat_emb.ndim() == 2 && spat_emb.dim(1) == 3 &&
                   feat_emb.dim(0) == spat_emb.dim(0),
               "fuse_feature_spatial: expected [Q,D] and [Q,3]");
    return ops::concat({ops::l2_normalize_rows(feat_emb), ops::l2_normalize_rows(spat_emb)}, 1);
}

Tensor aggregate_features(const ShuffledFeatures& shuffled, const ClusterBank& bank) {
    Tensor assign = soft_assign(shuffled.features, bank.w, bank.b);
    Tensor feat_emb = vlad_aggregate(shuffled.features, bank.q, assign);
    Tensor spat_emb = spatial_embed(coords_tensor(shuffled.source_coords), bank);
    return fuse_feature_spatial(feat_emb, spat_emb);
}

Tensor coords_tensor(const std::vector<Point3>& pts) {
    std::vector<double> v;
    v.reserve(pts.size() * 3);
    for (const Point3& p : pts) v.insert(v.end(), p.begin(), p.end());
    return Tensor::from_data({static_cast<int64_t>(pts.size()), 3}, std::move(v));
}

}  // namespace p2sc
