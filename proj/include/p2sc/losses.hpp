#pragma once

#include <cstdint>
#include <vector>

#include "p2sc/layers.hpp"

namespace p2sc {

struct LossConfig {
    double m_plus = 0.9;
    double m_minus = 0.1;
    double lambda = 0.5;
    double alpha = 1e-4;

    void validate() const;
};

// sum_j [ T_j max(0, m+ - V_j)^2 + lambda (1 - T_j) max(0, V_j - m-)^2 ],
// T_j = 1 iff j == label.
Tensor margin_loss(const Tensor& lengths, int label, const LossConfig& cfg);

// Symmetric mean-of-minima distance between two point sets ([N,3], [N',3]),
// Euclidean. Nearest-neighbor ties send the gradient to the first match in
// scan order.
Tensor chamfer(const Tensor& x, const Tensor& x_hat);

// Four fully-connected layers; relu + batchnorm on all but the last. The last
// width must be 3 * points so rows reshape to decoded clouds.
struct ReconstructionDecoder {
    MLP mlp;
    int64_t points = 0;

    ReconstructionDecoder() = default;
    ReconstructionDecoder(ParamRegistry& reg, const std::string& prefix, int64_t in_width,
                          const std::vector<int64_t>& widths, RngStream& rng);

    // [B, d_digit] capsule rows -> [B, points*3].
    Tensor forward(const Tensor& capsules, bool training);

    // Single capsule ([d] or [1,d]) -> [points, 3] cloud, eval-mode statistics.
    Tensor reconstruct(const Tensor& capsule);
};

// L = margin + alpha * rec.
Tensor total_loss(const Tensor& margin, const Tensor& rec, const LossConfig& cfg);

}  // namespace p2sc
