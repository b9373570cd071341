#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "p2sc/heads.hpp"
#include "p2sc/model.hpp"

namespace p2sc {

struct EpochStats {
    int64_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

// Optimizer and data-order state captured for exact training resumption.
struct TrainerSnapshot {
    int64_t epoch = 0;
    int64_t global_step = 0;
    int64_t total_steps = 0;
    std::string order_rng_state;
    std::vector<std::pair<std::string, std::vector<double>>> adam_m;
    std::vector<std::pair<std::string, std::vector<double>>> adam_v;
};

// Resample + normalize every cloud to the model's input size, deterministically.
std::vector<LabeledCloud> prepare_dataset(const std::vector<LabeledCloud>& raw, int64_t points,
                                          uint64_t seed);

struct BatchLossResult {
    Tensor total;        // scalar batch loss (classification + alpha * reconstruction [+ seg])
    int64_t correct = 0; // argmax hits within the batch
};

// The training objective for one mini-batch of prepared clouds. Each cloud is
// its own forward graph; the reconstruction decoder runs batched across the
// selected capsules so its batchnorm sees batch statistics.
BatchLossResult batch_loss(Model& model, const std::vector<const LabeledCloud*>& batch,
                           bool training);

// Mini-batch training of the total loss (margin or cross-entropy, plus
// alpha-weighted chamfer reconstruction, plus per-point cross-entropy when a
// segmentation head is present and the data carries part labels).
class Trainer {
public:
    Trainer(Model& model, std::vector<LabeledCloud> prepared);

    EpochStats run_epoch();
    std::vector<EpochStats> run(int64_t epochs, std::ostream* csv = nullptr);

    int64_t epoch() const { return epoch_; }
    TrainerSnapshot snapshot() const;
    void restore(const TrainerSnapshot& snap);

private:
    void adam_step();

    Model& model_;
    std::vector<LabeledCloud> data_;
    RngStream order_rng_;
    int64_t epoch_ = 0;
    int64_t global_step_ = 0;
    int64_t total_steps_ = 0;
    std::vector<std::vector<double>> adam_m_, adam_v_;  // aligned with trainable entries
};

struct Metrics {
    std::vector<std::pair<std::string, double>> rows;

    double get(const std::string& name) const;
};

Metrics evaluate_cls(Model& model, const std::vector<LabeledCloud>& prepared);
Metrics evaluate_retrieval(Model& model, const std::vector<LabeledCloud>& prepared,
                           RetrievalMetrics* details = nullptr);
Metrics evaluate_seg(Model& model, const std::vector<LabeledCloud>& prepared);

// Length vectors for every cloud (eval mode, no grad).
RetrievalIndex build_retrieval_index(Model& model, const std::vector<LabeledCloud>& prepared);

void write_metrics_csv(const std::string& path, const Metrics& metrics);
void write_pr_csv(const std::string& path, const RetrievalMetrics& metrics);

// Binary checkpoint: config snapshot, every parameter/buffer tensor, and the
// optional trainer state. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerSnapshot* snapshot = nullptr);

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    std::optional<TrainerSnapshot> snapshot;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace p2sc
