#include "p2sc/backbone.hpp"

#include <algorithm>

#include "p2sc/common.hpp"

namespace p2sc {

void ExtractionLayerConfig::validate() const {
    P2SC_CHECK_AS(m >= 1, ConfigError, "extraction layer: m must be >= 1, got " << m);
    P2SC_CHECK_AS(!scales.empty(), ConfigError, "extraction layer: scales must be nonempty");
    for (size_t i = 0; i < scales.size(); ++i) {
        P2SC_CHECK_AS(scales[i] >= 1, ConfigError, "extraction layer: scale " << scales[i]);
        P2SC_CHECK_AS(i == 0 || scales[i] > scales[i - 1], ConfigError,
                      "extraction layer: scales must be strictly increasing");
    }
    P2SC_CHECK_AS(!mlp_units.empty(), ConfigError, "extraction layer: mlp_units must be nonempty");
    for (int64_t u : mlp_units) {
        P2SC_CHECK_AS(u >= 1, ConfigError, "extraction layer: mlp width " << u);
    }
    P2SC_CHECK_AS(in_channels >= 3, ConfigError,
                  "extraction layer: in_channels must be >= 3, got " << in_channels);
}

ExtractionLayer::ExtractionLayer(ParamRegistry& reg, const std::string& prefix,
                                 const ExtractionLayerConfig& cfg, RngStream& rng)
    : cfg_(cfg) {
    cfg_.validate();
    mlp_ = MLP(reg, prefix + ".mlp", cfg_.in_channels, cfg_.mlp_units, rng);
}

MultiScaleFeatures ExtractionLayer::forward(const std::vector<Point3>& coords,
                                            const Tensor& point_feats, bool training) {
    const auto n = static_cast<int64_t>(coords.size());
    P2SC_CHECK(cfg_.m <= n, "extraction layer: m=" << cfg_.m << " exceeds input size " << n);
    const int64_t extra = cfg_.in_channels - 3;
    if (extra > 0) {
        P2SC_CHECK(point_feats.defined() && point_feats.ndim() == 2 &&
                       point_feats.dim(0) == n && point_feats.dim(1) == extra,
                   "extraction layer: expected per-point features [" << n << ", " << extra << "]");
    } else {
        P2SC_CHECK(!point_feats.defined(),
                   "extraction layer: in_channels=3 admits no per-point features");
    }

    PointCloud wrap;
    wrap.coords = coords;
    const SampleGrouping grouping = sample_and_group(wrap, cfg_.m, cfg_.scales);

    MultiScaleFeatures out;
    out.centroids.reserve(static_cast<size_t>(cfg_.m));
    for (int64_t idx : grouping.centroid_indices) {
        out.centroids.push_back(coords[static_cast<size_t>(idx)]);
    }

    const int64_t c_out = cfg_.out_channels();
    std::vector<Tensor> per_scale;
    per_scale.reserve(cfg_.scales.size());
    for (size_t t = 0; t < cfg_.scales.size(); ++t) {
        const int64_t k = cfg_.scales[t];
        Tensor rows = ops::reshape(group_local_frame(wrap, grouping, t), {cfg_.m * k, 3});
        if (extra > 0) {
            rows = ops::concat({rows, ops::gather_rows(point_feats, grouping.neighbor_indices[t])},
                               1);
        }
        Tensor feats = mlp_.forward(rows, training);                       // [M*K, C]
        feats = ops::reduce_max_axis(ops::reshape(feats, {cfg_.m, k, c_out}), 1);  // [M, C]
        per_scale.push_back(ops::reshape(feats, {cfg_.m, 1, c_out}));
    }
    out.features = per_scale.size() == 1 ? per_scale[0] : ops::concat(per_scale, 1);
    return out;
}

Backbone::Backbone(ParamRegistry& reg, const ExtractionLayerConfig& cfg1,
                   const ExtractionLayerConfig& cfg2, RngStream& rng)
    : l1_(reg, "backbone.layer1", cfg1, rng), l2_(reg, "backbone.layer2", cfg2, rng) {
    P2SC_CHECK_AS(cfg2.m <= cfg1.m, ConfigError,
                  "backbone: layer2 m=" << cfg2.m << " exceeds layer1 m=" << cfg1.m);
    P2SC_CHECK_AS(cfg2.in_channels == cfg1.mlp_units.back() + 3, ConfigError,
                  "backbone: layer2 in_channels must be layer1 C + 3 = "
                      << cfg1.mlp_units.back() + 3 << ", got " << cfg2.in_channels);
}

BackboneOutput Backbone::forward(const PointCloud& cloud, bool use_normals, bool training) {
    const auto n = cloud.size();
    P2SC_CHECK_AS(n >= l1_.config().m, DataError,
                  "backbone: cloud has " << n << " points, layer1 needs >= " << l1_.config().m);
    Tensor l1_extra;  // undefined unless normals widen the input
    if (use_normals) {
        P2SC_CHECK_AS(cloud.has_normals(), DataError,
                      "backbone: configured for normals but cloud has none");
        P2SC_CHECK(l1_.config().in_channels == 6,
                   "backbone: use_normals requires layer1 in_channels == 6");
        std::vector<double> nv;
        nv.reserve(static_cast<size_t>(n * 3));
        for (const Point3& nm : *cloud.normals) {
            nv.insert(nv.end(), nm.begin(), nm.end());
        }
        l1_extra = Tensor::from_data({n, 3}, std::move(nv));
    } else {
        P2SC_CHECK(l1_.config().in_channels == 3,
                   "backbone: layer1 in_channels must be 3 without normals");
    }

    BackboneOutput out;
    out.layer1 = l1_.forward(cloud.coords, l1_extra, training);
    out.layer1_pooled = ops::reduce_max_axis(out.layer1.features, 1);  // [M1, C1]
    out.layer2 = l2_.forward(out.layer1.centroids, out.layer1_pooled, training);
    return out;
}

}  // namespace p2sc
