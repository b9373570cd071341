#include "p2sc/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

using json = nlohmann::json;

namespace p2sc {

void OptimConfig::validate() const {
    P2SC_CHECK_AS(lr > 0.0, ConfigError, "optim: lr must be positive");
    P2SC_CHECK_AS(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ConfigError,
                  "optim: betas must lie in [0, 1)");
    P2SC_CHECK_AS(eps > 0.0, ConfigError, "optim: eps must be positive");
    P2SC_CHECK_AS(batch_size >= 1, ConfigError, "optim: batch_size must be >= 1");
    P2SC_CHECK_AS(epochs >= 1, ConfigError, "optim: epochs must be >= 1");
}

ModelConfig ModelConfig::toy(int64_t num_classes) {
    ModelConfig c;
    c.preset = "toy";
    c.layer1 = {64, {4, 8}, {16, 32}, 3};
    c.layer2 = {32, {4, 8}, {32, 64}, 35};
    c.r = 2;
    c.clusters = 16;
    c.split = 4;
    c.d_cap = 16;
    c.d_digit = 16;
    c.routing_iters = 1;
    c.num_classes = num_classes;
    c.points_per_cloud = 256;
    c.decoder_widths = {128, 256, 512, 256 * 3};
    c.seg_mid_widths = {64};
    c.seg_point_widths = {32};
    return c;
}

ModelConfig ModelConfig::paper(int64_t num_classes) {
    ModelConfig c;
    c.preset = "paper";
    c.layer1 = {512, {8, 16, 32, 64}, {32, 32, 64}, 3};
    c.layer2 = {256, {8, 16, 32, 64}, {64, 64, 128}, 67};
    c.r = 2;
    c.clusters = 64;
    c.split = 16;
    c.d_cap = 16;
    c.d_digit = 16;
    c.routing_iters = 1;
    c.num_classes = num_classes;
    c.points_per_cloud = 1024;
    c.decoder_widths = {512, 1024, 2048, 1024 * 3};
    c.seg_mid_widths = {128};
    c.seg_point_widths = {64};
    return c;
}

int64_t ModelConfig::descriptor_width() const {
    return no_multi ? layer2.out_channels() : layer2.out_channels() / r;
}

int64_t ModelConfig::primary_capsules() const {
    if (no_caps) return 0;
    if (no_vlad) {
        return layer2.m * layer2.num_scales() * layer2.out_channels() / d_cap;
    }
    return clusters * split;
}

void ModelConfig::validate() const {
    P2SC_CHECK_AS(preset == "toy" || preset == "paper", ConfigError,
                  "config: preset must be 'toy' or 'paper', got '" << preset << "'");
    layer1.validate();
    layer2.validate();
    P2SC_CHECK_AS(layer1.in_channels == (use_normals ? 6 : 3), ConfigError,
                  "config: layer1 in_channels must be " << (use_normals ? 6 : 3));
    P2SC_CHECK_AS(layer2.in_channels == layer1.out_channels() + 3, ConfigError,
                  "config: layer2 in_channels must equal layer1 output + 3");
    P2SC_CHECK_AS(layer2.m <= layer1.m, ConfigError, "config: layer2 m exceeds layer1 m");
    P2SC_CHECK_AS(points_per_cloud >= layer1.m, ConfigError,
                  "config: points_per_cloud must be >= layer1 m");
    P2SC_CHECK_AS(num_classes >= 2, ConfigError, "config: num_classes must be >= 2");
    P2SC_CHECK_AS(num_parts >= 0, ConfigError, "config: num_parts must be >= 0");
    P2SC_CHECK_AS(routing_iters >= 1, ConfigError, "config: routing_iters must be >= 1");
    P2SC_CHECK_AS(d_cap >= 1 && d_digit >= 1, ConfigError, "config: capsule widths must be >= 1");

    const int ablations = (no_multi ? 1 : 0) + (no_vlad ? 1 : 0) + (no_caps ? 1 : 0);
    P2SC_CHECK_AS(ablations <= 1, ConfigError, "config: ablation flags are mutually exclusive");

    P2SC_CHECK_AS(r >= 1, ConfigError, "config: r must be >= 1");
    if (!no_multi) {
        P2SC_CHECK_AS(layer2.out_channels() % r == 0, ConfigError,
                      "config: r=" << r << " must divide layer2 width "
                                   << layer2.out_channels());
    }
    if (no_vlad) {
        P2SC_CHECK_AS((layer2.m * layer2.num_scales() * layer2.out_channels()) % d_cap == 0,
                      ConfigError, "config: d_cap must divide the layer-2 feature count");
    } else if (!no_caps) {
        P2SC_CHECK_AS(clusters >= 1 && split >= 1, ConfigError,
                      "config: clusters and split must be >= 1");
        P2SC_CHECK_AS(descriptor_width() % split == 0, ConfigError,
                      "config: split=" << split << " must divide descriptor width "
                                       << descriptor_width());
    }
    if (!no_caps) {
        P2SC_CHECK_AS(decoder_widths.size() == 4, ConfigError,
                      "config: decoder_widths must list exactly four layers");
        P2SC_CHECK_AS(decoder_widths.back() == points_per_cloud * 3, ConfigError,
                      "config: decoder output width must be points_per_cloud*3 = "
                          << points_per_cloud * 3);
    }
    if (num_parts > 0 && !no_caps) {
        P2SC_CHECK_AS(!seg_mid_widths.empty() && !seg_point_widths.empty(), ConfigError,
                      "config: segmentation widths must be nonempty when num_parts > 0");
    }
    loss.validate();
    optim.validate();
}

namespace {

void require_keys(const json& obj, const std::vector<std::string>& keys, const char* where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        P2SC_CHECK_AS(std::find(keys.begin(), keys.end(), it.key()) != keys.end(), ConfigError,
                      where << ": unknown key '" << it.key() << "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

json layer_to_json(const ExtractionLayerConfig& l) {
    return json{{"m", l.m},
                {"scales", l.scales},
                {"mlp_units", l.mlp_units},
                {"in_channels", l.in_channels}};
}

void layer_from_json(const json& obj, ExtractionLayerConfig& l) {
    require_keys(obj, {"m", "scales", "mlp_units", "in_channels"}, "layer config");
    read_field(obj, "m", l.m);
    read_field(obj, "scales", l.scales);
    read_field(obj, "mlp_units", l.mlp_units);
    read_field(obj, "in_channels", l.in_channels);
}

}  // namespace

std::string ModelConfig::to_json_string() const {
    json doc;
    doc["preset"] = preset;
    doc["layer1"] = layer_to_json(layer1);
    doc["layer2"] = layer_to_json(layer2);
    doc["r"] = r;
    doc["clusters"] = clusters;
    doc["split"] = split;
    doc["d_cap"] = d_cap;
    doc["d_digit"] = d_digit;
    doc["routing_iters"] = routing_iters;
    doc["num_classes"] = num_classes;
    doc["num_parts"] = num_parts;
    doc["points_per_cloud"] = points_per_cloud;
    doc["use_normals"] = use_normals;
    doc["decoder_widths"] = decoder_widths;
    doc["seg_mid_widths"] = seg_mid_widths;
    doc["seg_point_widths"] = seg_point_widths;
    doc["loss"] = json{{"m_plus", loss.m_plus},
                       {"m_minus", loss.m_minus},
                       {"lambda", loss.lambda},
                       {"alpha", loss.alpha}};
    doc["optim"] = json{{"lr", optim.lr},
                        {"beta1", optim.beta1},
                        {"beta2", optim.beta2},
                        {"eps", optim.eps},
                        {"batch_size", optim.batch_size},
                        {"epochs", optim.epochs},
                        {"cosine_decay", optim.cosine_decay}};
    doc["seed"] = seed;
    doc["no_multi"] = no_multi;
    doc["no_vlad"] = no_vlad;
    doc["no_caps"] = no_caps;
    return doc.dump(2);
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config JSON: ") + e.what());
    }
    P2SC_CHECK_AS(doc.is_object(), ConfigError, "config must be a JSON object");
    require_keys(doc,
                 {"preset", "layer1", "layer2", "r", "clusters", "split", "d_cap", "d_digit",
                  "routing_iters", "num_classes", "num_parts", "points_per_cloud", "use_normals",
                  "decoder_widths", "seg_mid_widths", "seg_point_widths", "loss", "optim", "seed",
                  "no_multi", "no_vlad", "no_caps"},
                 "config");

    // Fields start from the named preset's defaults and are overridden below.
    std::string preset = "toy";
    read_field(doc, "preset", preset);
    ModelConfig c;
    if (preset == "paper") {
        c = ModelConfig::paper();
    } else {
        P2SC_CHECK_AS(preset == "toy", ConfigError, "config: unknown preset '" << preset << "'");
        c = ModelConfig::toy();
    }

    if (doc.contains("layer1")) layer_from_json(doc["layer1"], c.layer1);
    if (doc.contains("layer2")) layer_from_json(doc["layer2"], c.layer2);
    read_field(doc, "r", c.r);
    read_field(doc, "clusters", c.clusters);
    read_field(doc, "split", c.split);
    read_field(doc, "d_cap", c.d_cap);
    read_field(doc, "d_digit", c.d_digit);
    read_field(doc, "routing_iters", c.routing_iters);
    read_field(doc, "num_classes", c.num_classes);
    read_field(doc, "num_parts", c.num_parts);
    read_field(doc, "points_per_cloud", c.points_per_cloud);
    read_field(doc, "use_normals", c.use_normals);
    read_field(doc, "decoder_widths", c.decoder_widths);
    read_field(doc, "seg_mid_widths", c.seg_mid_widths);
    read_field(doc, "seg_point_widths", c.seg_point_widths);
    if (doc.contains("loss")) {
        const json& l = doc["loss"];
        require_keys(l, {"m_plus", "m_minus", "lambda", "alpha"}, "loss config");
        read_field(l, "m_plus", c.loss.m_plus);
        read_field(l, "m_minus", c.loss.m_minus);
        read_field(l, "lambda", c.loss.lambda);
        read_field(l, "alpha", c.loss.alpha);
    }
    if (doc.contains("optim")) {
        const json& o = doc["optim"];
        require_keys(o, {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "cosine_decay"},
                     "optim config");
        read_field(o, "lr", c.optim.lr);
        read_field(o, "beta1", c.optim.beta1);
        read_field(o, "beta2", c.optim.beta2);
        read_field(o, "eps", c.optim.eps);
        read_field(o, "batch_size", c.optim.batch_size);
        read_field(o, "epochs", c.optim.epochs);
        read_field(o, "cosine_decay", c.optim.cosine_decay);
    }
    read_field(doc, "seed", c.seed);
    read_field(doc, "no_multi", c.no_multi);
    read_field(doc, "no_vlad", c.no_vlad);
    read_field(doc, "no_caps", c.no_caps);
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    P2SC_CHECK_AS(in, ConfigError, "cannot open config " << path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

ModelConfig ablation(ModelConfig base, const std::string& variant) {
    P2SC_CHECK_AS(!base.no_multi && !base.no_vlad && !base.no_caps, ConfigError,
                  "ablation: base config already carries an ablation flag");
    if (variant == "no_multi") {
        base.no_multi = true;
    } else if (variant == "no_vlad") {
        base.no_vlad = true;
    } else if (variant == "no_caps") {
        base.no_caps = true;
    } else {
        throw ConfigError("ablation: unknown variant '" + variant + "'");
    }
    base.validate();
    return base;
}

PointCloud prepare_cloud(const PointCloud& cloud, int64_t points, RngStream& rng) {
    cloud.validate();
    return normalize_unit_sphere(resample_to(cloud, points, rng));
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    RngStream init_rng(mix_seed(cfg_.seed, 0x494e4954ull));  // parameter initialization stream

    backbone_ = Backbone(reg_, cfg_.layer1, cfg_.layer2, init_rng);

    const int64_t d = cfg_.descriptor_width();
    if (!cfg_.no_vlad) {
        bank_ = ClusterBank(reg_, "agg.bank", cfg_.clusters, d, init_rng);
    }
    if (!cfg_.no_caps) {
        if (!cfg_.no_vlad) {
            fusion_ = CapsuleFusion(reg_, "caps.fusion", d / cfg_.split, cfg_.d_cap, init_rng);
        }
        router_ = CapsuleRouter(reg_, "caps.routing", cfg_.primary_capsules(), cfg_.d_cap,
                                cfg_.num_classes, cfg_.d_digit, init_rng);
        decoder_ = ReconstructionDecoder(reg_, "decoder", cfg_.d_digit, cfg_.decoder_widths,
                                         init_rng);
        if (cfg_.num_parts > 0) {
            seg_ = SegmentationHead(reg_, "seg",
                                    cfg_.layer2.num_scales() * cfg_.layer2.out_channels(),
                                    cfg_.d_digit, cfg_.layer1.out_channels(), cfg_.seg_mid_widths,
                                    cfg_.seg_point_widths, cfg_.num_parts, init_rng);
        }
    } else {
        const int64_t fused_width = cfg_.clusters * (d + 3);
        fc_classifier_ = Linear(reg_, "head.fc", fused_width, cfg_.num_classes, init_rng);
    }
}

ForwardResult Model::forward(const PointCloud& prepared, bool training,
                             CapsuleRouter::Trace* trace) {
    P2SC_CHECK_AS(prepared.size() == cfg_.points_per_cloud, DataError,
                  "model: expected " << cfg_.points_per_cloud << " points, got "
                                     << prepared.size() << " (resample first)");
    ForwardResult out;
    out.backbone = backbone_.forward(prepared, cfg_.use_normals, training);

    const int64_t m2 = cfg_.layer2.m;
    const int64_t t2 = cfg_.layer2.num_scales();
    const int64_t c2 = cfg_.layer2.out_channels();

    if (cfg_.no_vlad) {
        // Extractor output reshaped straight into squashed capsules.
        out.shuffled_flat = ops::reshape(out.backbone.layer2.features, {m2, t2 * c2});
        Tensor u = squash_rows(
            ops::reshape(out.backbone.layer2.features, {cfg_.primary_capsules(), cfg_.d_cap}));
        out.digit_caps = router_.forward(u, cfg_.routing_iters, trace);
        out.lengths = capsule_lengths(out.digit_caps);
        return out;
    }

    ShuffledFeatures shuffled;
    if (cfg_.no_multi) {
        // Bypass the periodic rearrangement: rows are the raw T x C slabs.
        shuffled.features = ops::reshape(out.backbone.layer2.features, {m2 * t2, c2});
        shuffled.source_coords.reserve(static_cast<size_t>(m2 * t2));
        for (const Point3& p : out.backbone.layer2.centroids) {
            for (int64_t rep = 0; rep < t2; ++rep) shuffled.source_coords.push_back(p);
        }
    } else {
        shuffled = multiscale_shuffle(out.backbone.layer2, cfg_.r);
    }
    out.shuffled_flat = ops::reshape(shuffled.features, {m2, t2 * c2});

    Tensor fused = aggregate_features(shuffled, bank_);  // [Q, D+3]

    if (cfg_.no_caps) {
        Tensor flat = ops::reshape(fused, {1, fused.numel()});
        out.logits = fc_classifier_.forward(flat);
        out.lengths = ops::reshape(ops::softmax(out.logits, 1), {cfg_.num_classes});
        return out;
    }

    Tensor u = rearrange_split(fused, cfg_.split, fusion_);
    out.digit_caps = router_.forward(u, cfg_.routing_iters, trace);
    out.lengths = capsule_lengths(out.digit_caps);
    return out;
}

Tensor Model::forward_seg(const PointCloud& prepared, const ForwardResult& fwd, int capsule_class,
                          bool training) {
    P2SC_CHECK_AS(has_seg_head(), ConfigError, "model: no segmentation head configured");
    P2SC_CHECK(capsule_class >= 0 && capsule_class < cfg_.num_classes,
               "model: capsule class " << capsule_class << " out of range");
    Tensor capsule = ops::reshape(
        ops::gather_rows(fwd.digit_caps, {static_cast<int64_t>(capsule_class)}), {cfg_.d_digit});
    return seg_.forward(prepared.coords, fwd.backbone, fwd.shuffled_flat, capsule, training);
}

Tensor Model::decode(const Tensor& capsule_rows, bool training) {
    P2SC_CHECK_AS(has_decoder(), ConfigError, "model: no reconstruction decoder configured");
    return decoder_.forward(capsule_rows, training);
}

Tensor Model::reconstruct(const Tensor& capsule) {
    P2SC_CHECK_AS(has_decoder(), ConfigError, "model: no reconstruction decoder configured");
    return decoder_.reconstruct(capsule);
}

}  // namespace p2sc
