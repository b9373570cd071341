#include "p2sc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

namespace p2sc {

namespace {

constexpr uint64_t kDataStream = 0x44415441ull;   // cloud resampling
constexpr uint64_t kOrderStream = 0x4f52444bull;  // epoch shuffling

std::vector<double> lengths_of(const Tensor& t) {
    auto v = t.values();
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::vector<LabeledCloud> prepare_dataset(const std::vector<LabeledCloud>& raw, int64_t points,
                                          uint64_t seed) {
    RngStream rng(mix_seed(seed, kDataStream));
    std::vector<LabeledCloud> out;
    out.reserve(raw.size());
    for (const LabeledCloud& lc : raw) {
        out.push_back(LabeledCloud{prepare_cloud(lc.cloud, points, rng), lc.label});
    }
    return out;
}

Trainer::Trainer(Model& model, std::vector<LabeledCloud> prepared)
    : model_(model),
      data_(std::move(prepared)),
      order_rng_(mix_seed(model.config().seed, kOrderStream)) {
    P2SC_CHECK_AS(!data_.empty(), DataError, "trainer: empty dataset");
    const ModelConfig& cfg = model_.config();
    for (size_t i = 0; i < data_.size(); ++i) {
        P2SC_CHECK_AS(data_[i].cloud.size() == cfg.points_per_cloud, DataError,
                      "trainer: cloud " << i << " has " << data_[i].cloud.size()
                                        << " points; run prepare_dataset first");
        P2SC_CHECK_AS(data_[i].label >= 0 && data_[i].label < cfg.num_classes, DataError,
                      "trainer: label " << data_[i].label << " outside [0, " << cfg.num_classes
                                        << ")");
    }
    if (model_.has_seg_head()) {
        for (size_t i = 0; i < data_.size(); ++i) {
            P2SC_CHECK_AS(data_[i].cloud.has_parts(), DataError,
                          "trainer: segmentation head needs part labels (cloud " << i << ")");
            for (int p : *data_[i].cloud.part_labels) {
                P2SC_CHECK_AS(p < cfg.num_parts, DataError,
                              "trainer: part label " << p << " outside [0, " << cfg.num_parts
                                                     << ")");
            }
        }
    }

    const auto n = static_cast<int64_t>(data_.size());
    const int64_t batches = (n + cfg.optim.batch_size - 1) / cfg.optim.batch_size;
    total_steps_ = batches * cfg.optim.epochs;

    for (const auto& e : model_.params().entries()) {
        if (!e.trainable) continue;
        adam_m_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
        adam_v_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
    }
}

void Trainer::adam_step() {
    const OptimConfig& oc = model_.config().optim;
    double lr = oc.lr;
    if (oc.cosine_decay && total_steps_ > 0) {
        const double t = static_cast<double>(std::min(global_step_, total_steps_ - 1));
        lr = oc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps_)));
    }
    ++global_step_;
    const auto step = static_cast<double>(global_step_);
    const double bc1 = 1.0 - std::pow(oc.beta1, step);
    const double bc2 = 1.0 - std::pow(oc.beta2, step);

    size_t slot = 0;
    for (auto& e : model_.params().entries()) {
        if (!e.trainable) continue;
        std::vector<double>& m = adam_m_[slot];
        std::vector<double>& v = adam_v_[slot];
        ++slot;
        if (!e.tensor.has_grad()) continue;  // unreached parameters keep their state
        auto g = e.tensor.grad();
        std::vector<double>& w = e.tensor.mutable_values();
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = oc.beta1 * m[i] + (1.0 - oc.beta1) * g[i];
            v[i] = oc.beta2 * v[i] + (1.0 - oc.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + oc.eps);
        }
    }
}

BatchLossResult batch_loss(Model& model, const std::vector<const LabeledCloud*>& batch,
                           bool training) {
    P2SC_CHECK(!batch.empty(), "batch_loss: empty batch");
    const ModelConfig& cfg = model.config();
    const auto bsz = static_cast<int64_t>(batch.size());
    const bool with_seg = model.has_seg_head();

    BatchLossResult result;
    Tensor cls_loss;  // margin (capsules) or cross-entropy (no_caps), summed
    Tensor rec_loss;  // chamfer, summed
    Tensor seg_loss;  // per-point cross-entropy, summed
    std::vector<Tensor> selected_caps;
    std::vector<const PointCloud*> batch_clouds;

    for (const LabeledCloud* sample : batch) {
        ForwardResult fwd = model.forward(sample->cloud, training);

        Tensor sample_cls;
        if (cfg.no_caps) {
            sample_cls = ops::cross_entropy_rows(fwd.logits, {sample->label});
        } else {
            sample_cls = margin_loss(fwd.lengths, sample->label, cfg.loss);
            selected_caps.push_back(
                ops::gather_rows(fwd.digit_caps, {static_cast<int64_t>(sample->label)}));
            batch_clouds.push_back(&sample->cloud);
        }
        cls_loss = cls_loss.defined() ? ops::add(cls_loss, sample_cls) : sample_cls;

        if (with_seg) {
            P2SC_CHECK_AS(sample->cloud.has_parts(), DataError,
                          "batch_loss: segmentation training needs part labels");
            Tensor logits = model.forward_seg(sample->cloud, fwd, sample->label, training);
            Tensor ce = ops::cross_entropy_rows(logits, *sample->cloud.part_labels);
            seg_loss = seg_loss.defined() ? ops::add(seg_loss, ce) : ce;
        }

        if (classify(lengths_of(fwd.lengths)) == sample->label) ++result.correct;
    }

    Tensor total = ops::scale(cls_loss, 1.0 / static_cast<double>(bsz));
    if (!selected_caps.empty() && cfg.loss.alpha > 0.0) {
        // The decoder runs batched so its batchnorm sees batch statistics.
        Tensor caps = selected_caps.size() == 1 ? selected_caps[0] : ops::concat(selected_caps, 0);
        Tensor decoded = model.decode(caps, training);
        for (size_t b = 0; b < batch_clouds.size(); ++b) {
            Tensor row = ops::reshape(ops::gather_rows(decoded, {static_cast<int64_t>(b)}),
                                      {cfg.points_per_cloud, 3});
            Tensor ch = chamfer(coords_tensor(batch_clouds[b]->coords), row);
            rec_loss = rec_loss.defined() ? ops::add(rec_loss, ch) : ch;
        }
        total = ops::add(total, ops::scale(rec_loss, cfg.loss.alpha / static_cast<double>(bsz)));
    }
    if (seg_loss.defined()) {
        total = ops::add(total, ops::scale(seg_loss, 1.0 / static_cast<double>(bsz)));
    }
    result.total = total;
    return result;
}

EpochStats Trainer::run_epoch() {
    const ModelConfig& cfg = model_.config();
    const auto n = static_cast<int64_t>(data_.size());
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    order_rng_.shuffle(order);

    double loss_sum = 0.0;
    int64_t correct = 0;
    double last_lr = cfg.optim.lr;

    for (int64_t start = 0; start < n; start += cfg.optim.batch_size) {
        const int64_t bsz = std::min<int64_t>(cfg.optim.batch_size, n - start);
        model_.params().zero_grad();

        std::vector<const LabeledCloud*> batch;
        batch.reserve(static_cast<size_t>(bsz));
        for (int64_t b = 0; b < bsz; ++b) {
            batch.push_back(&data_[static_cast<size_t>(order[static_cast<size_t>(start + b)])]);
        }
        BatchLossResult res = batch_loss(model_, batch, /*training=*/true);
        Tensor total = res.total;
        correct += res.correct;

        const double value = total.item();
        P2SC_CHECK_AS(std::isfinite(value), NumericError,
                      "training diverged: non-finite loss at epoch " << epoch_ + 1 << ", step "
                                                                     << global_step_);
        loss_sum += value * static_cast<double>(bsz);

        total.backward();
        const OptimConfig& oc = cfg.optim;
        if (oc.cosine_decay && total_steps_ > 0) {
            const double t = static_cast<double>(std::min(global_step_, total_steps_ - 1));
            last_lr = oc.lr * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps_)));
        }
        adam_step();
    }

    ++epoch_;
    EpochStats stats;
    stats.epoch = epoch_;
    stats.loss = loss_sum / static_cast<double>(n);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    stats.lr = last_lr;
    return stats;
}

std::vector<EpochStats> Trainer::run(int64_t epochs, std::ostream* csv) {
    P2SC_CHECK_AS(epochs >= 1, ConfigError, "trainer: epochs must be >= 1");
    if (csv && epoch_ == 0) *csv << "epoch,loss,accuracy,lr\n";
    std::vector<EpochStats> all;
    for (int64_t e = 0; e < epochs; ++e) {
        EpochStats s = run_epoch();
        if (csv) {
            *csv << s.epoch << ',' << s.loss << ',' << s.accuracy << ',' << s.lr << '\n';
            csv->flush();
        }
        all.push_back(s);
    }
    return all;
}

TrainerSnapshot Trainer::snapshot() const {
    TrainerSnapshot snap;
    snap.epoch = epoch_;
    snap.global_step = global_step_;
    snap.total_steps = total_steps_;
    snap.order_rng_state = order_rng_.serialize();
    size_t slot = 0;
    for (const auto& e : model_.params().entries()) {
        if (!e.trainable) continue;
        snap.adam_m.emplace_back(e.name, adam_m_[slot]);
        snap.adam_v.emplace_back(e.name, adam_v_[slot]);
        ++slot;
    }
    return snap;
}

void Trainer::restore(const TrainerSnapshot& snap) {
    epoch_ = snap.epoch;
    global_step_ = snap.global_step;
    total_steps_ = snap.total_steps;
    order_rng_.deserialize(snap.order_rng_state);
    size_t slot = 0;
    for (const auto& e : model_.params().entries()) {
        if (!e.trainable) continue;
        P2SC_CHECK_AS(slot < snap.adam_m.size() && snap.adam_m[slot].first == e.name &&
                          snap.adam_v[slot].first == e.name,
                      DataError, "checkpoint optimizer state does not match parameter '"
                                     << e.name << "'");
        P2SC_CHECK_AS(snap.adam_m[slot].second.size() == static_cast<size_t>(e.tensor.numel()),
                      DataError, "checkpoint optimizer state size mismatch at '" << e.name << "'");
        adam_m_[slot] = snap.adam_m[slot].second;
        adam_v_[slot] = snap.adam_v[slot].second;
        ++slot;
    }
    P2SC_CHECK_AS(slot == snap.adam_m.size(), DataError,
                  "checkpoint optimizer state has extra entries");
}

double Metrics::get(const std::string& name) const {
    for (const auto& [k, v] : rows) {
        if (k == name) return v;
    }
    throw Error("metric '" + name + "' not found");
}

RetrievalIndex build_retrieval_index(Model& model, const std::vector<LabeledCloud>& prepared) {
    NoGradGuard ng;
    RetrievalIndex index;
    for (size_t i = 0; i < prepared.size(); ++i) {
        ForwardResult fwd = model.forward(prepared[i].cloud, /*training=*/false);
        index.add(static_cast<int64_t>(i), lengths_of(fwd.lengths), prepared[i].label);
    }
    return index;
}

Metrics evaluate_cls(Model& model, const std::vector<LabeledCloud>& prepared) {
    P2SC_CHECK_AS(!prepared.empty(), DataError, "evaluate: empty dataset");
    NoGradGuard ng;
    int64_t correct = 0;
    for (const LabeledCloud& lc : prepared) {
        ForwardResult fwd = model.forward(lc.cloud, /*training=*/false);
        if (classify(lengths_of(fwd.lengths)) == lc.label) ++correct;
    }
    Metrics m;
    m.rows.emplace_back("accuracy",
                        static_cast<double>(correct) / static_cast<double>(prepared.size()));
    return m;
}

Metrics evaluate_retrieval(Model& model, const std::vector<LabeledCloud>& prepared,
                           RetrievalMetrics* details) {
    RetrievalIndex index = build_retrieval_index(model, prepared);
    RetrievalMetrics rm = mean_average_precision(index);
    if (details) *details = rm;
    Metrics m;
    m.rows.emplace_back("map", rm.map);
    m.rows.emplace_back("skipped_queries", static_cast<double>(rm.skipped_queries));
    return m;
}

Metrics evaluate_seg(Model& model, const std::vector<LabeledCloud>& prepared) {
    P2SC_CHECK_AS(model.has_seg_head(), ConfigError, "evaluate: model has no segmentation head");
    P2SC_CHECK_AS(!prepared.empty(), DataError, "evaluate: empty dataset");
    NoGradGuard ng;
    const int parts = static_cast<int>(model.config().num_parts);
    double iou_sum = 0.0;
    std::vector<double> part_sum(static_cast<size_t>(parts), 0.0);
    int64_t correct_pts = 0, total_pts = 0;
    for (const LabeledCloud& lc : prepared) {
        P2SC_CHECK_AS(lc.cloud.has_parts(), DataError, "evaluate: cloud lacks part labels");
        ForwardResult fwd = model.forward(lc.cloud, /*training=*/false);
        // The true label is unavailable at test time; use the predicted class.
        const int pred_class = classify(lengths_of(fwd.lengths));
        Tensor logits = model.forward_seg(lc.cloud, fwd, pred_class, /*training=*/false);
        auto lv = logits.values();
        const int64_t npts = lc.cloud.size();
        std::vector<int> pred(static_cast<size_t>(npts));
        for (int64_t i = 0; i < npts; ++i) {
            int best = 0;
            for (int p = 1; p < parts; ++p) {
                if (lv[i * parts + p] > lv[i * parts + best]) best = p;
            }
            pred[static_cast<size_t>(i)] = best;
            if (best == (*lc.cloud.part_labels)[static_cast<size_t>(i)]) ++correct_pts;
        }
        total_pts += npts;
        IouResult r = iou(pred, *lc.cloud.part_labels, parts);
        iou_sum += r.mean;
        for (int p = 0; p < parts; ++p) part_sum[static_cast<size_t>(p)] += r.per_part[static_cast<size_t>(p)];
    }
    Metrics m;
    const auto n = static_cast<double>(prepared.size());
    m.rows.emplace_back("mean_iou", iou_sum / n);
    m.rows.emplace_back("point_accuracy",
                        static_cast<double>(correct_pts) / static_cast<double>(total_pts));
    for (int p = 0; p < parts; ++p) {
        m.rows.emplace_back("iou_part_" + std::to_string(p), part_sum[static_cast<size_t>(p)] / n);
    }
    return m;
}

void write_metrics_csv(const std::string& path, const Metrics& metrics) {
    std::ofstream out(path);
    P2SC_CHECK_AS(out, DataError, "cannot write " << path);
    out << "metric,value\n";
    for (const auto& [k, v] : metrics.rows) out << k << ',' << v << '\n';
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for " << path);
}

void write_pr_csv(const std::string& path, const RetrievalMetrics& metrics) {
    std::ofstream out(path);
    P2SC_CHECK_AS(out, DataError, "cannot write " << path);
    out << "recall,precision\n";
    for (const auto& [r, p] : metrics.pr) out << r << ',' << p << '\n';
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for " << path);
}

namespace {

template <typename T>
void put_raw(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take_raw(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    P2SC_CHECK_AS(static_cast<bool>(in), DataError, path << ": truncated checkpoint");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put_raw<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in, const std::string& path) {
    const auto len = take_raw<uint64_t>(in, path);
    P2SC_CHECK_AS(len <= (1ull << 32), DataError, path << ": implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    P2SC_CHECK_AS(static_cast<bool>(in), DataError, path << ": truncated checkpoint");
    return s;
}

void put_doubles(std::ostream& out, std::span<const double> v) {
    put_raw<uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> take_doubles(std::istream& in, const std::string& path) {
    const auto n = take_raw<uint64_t>(in, path);
    P2SC_CHECK_AS(n <= (1ull << 34), DataError, path << ": implausible tensor size");
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    P2SC_CHECK_AS(static_cast<bool>(in), DataError, path << ": truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerSnapshot* snapshot) {
    std::ofstream out(path, std::ios::binary);
    P2SC_CHECK_AS(out, DataError, "cannot write checkpoint " << path);
    out.write("P2CK", 4);
    put_raw<uint32_t>(out, 1);
    put_string(out, model.config().to_json_string());

    put_raw<uint8_t>(out, snapshot ? 1 : 0);
    if (snapshot) {
        put_raw<int64_t>(out, snapshot->epoch);
        put_raw<int64_t>(out, snapshot->global_step);
        put_raw<int64_t>(out, snapshot->total_steps);
        put_string(out, snapshot->order_rng_state);
        put_raw<uint64_t>(out, snapshot->adam_m.size());
        for (size_t i = 0; i < snapshot->adam_m.size(); ++i) {
            put_string(out, snapshot->adam_m[i].first);
            put_doubles(out, snapshot->adam_m[i].second);
            put_doubles(out, snapshot->adam_v[i].second);
        }
    }

    const auto& entries = model.params().entries();
    put_raw<uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        put_string(out, e.name);
        put_raw<uint8_t>(out, e.trainable ? 1 : 0);
        put_raw<uint32_t>(out, static_cast<uint32_t>(e.tensor.ndim()));
        for (int64_t d : e.tensor.shape()) put_raw<int64_t>(out, d);
        put_doubles(out, e.tensor.values());
    }
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for checkpoint " << path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    P2SC_CHECK_AS(in, DataError, "cannot open checkpoint " << path);
    char magic[4];
    in.read(magic, 4);
    P2SC_CHECK_AS(in && std::memcmp(magic, "P2CK", 4) == 0, DataError,
                  path << ": not a checkpoint file (bad magic)");
    const auto version = take_raw<uint32_t>(in, path);
    P2SC_CHECK_AS(version == 1, DataError, path << ": unsupported checkpoint version " << version);

    LoadedCheckpoint result;
    const std::string config_json = take_string(in, path);
    result.model = std::make_unique<Model>(ModelConfig::from_json_string(config_json));

    const auto has_snapshot = take_raw<uint8_t>(in, path);
    if (has_snapshot) {
        TrainerSnapshot snap;
        snap.epoch = take_raw<int64_t>(in, path);
        snap.global_step = take_raw<int64_t>(in, path);
        snap.total_steps = take_raw<int64_t>(in, path);
        snap.order_rng_state = take_string(in, path);
        const auto slots = take_raw<uint64_t>(in, path);
        for (uint64_t i = 0; i < slots; ++i) {
            std::string name = take_string(in, path);
            snap.adam_m.emplace_back(name, take_doubles(in, path));
            snap.adam_v.emplace_back(std::move(name), take_doubles(in, path));
        }
        result.snapshot = std::move(snap);
    }

    const auto count = take_raw<uint64_t>(in, path);
    auto& entries = result.model->params().entries();
    P2SC_CHECK_AS(count == entries.size(), DataError,
                  path << ": checkpoint has " << count << " tensors, model expects "
                       << entries.size());
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = take_string(in, path);
        auto& e = entries[i];
        P2SC_CHECK_AS(name == e.name, DataError,
                      path << ": tensor #" << i << " is '" << name << "', expected '" << e.name
                           << "'");
        const auto trainable = take_raw<uint8_t>(in, path);
        P2SC_CHECK_AS((trainable != 0) == e.trainable, DataError,
                      path << ": trainability mismatch for '" << name << "'");
        const auto ndim = take_raw<uint32_t>(in, path);
        Shape shape(ndim);
        for (auto& d : shape) d = take_raw<int64_t>(in, path);
        P2SC_CHECK_AS(shape == e.tensor.shape(), DataError,
                      path << ": shape mismatch for '" << name << "'");
        std::vector<double> values = take_doubles(in, path);
        P2SC_CHECK_AS(values.size() == static_cast<size_t>(e.tensor.numel()), DataError,
                      path << ": size mismatch for '" << name << "'");
        e.tensor.mutable_values() = std::move(values);
    }
    return result;
}

}  // namespace p2sc
