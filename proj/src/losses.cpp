#include "p2sc/losses.hpp"

#include <cmath>

#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

namespace p2sc {

void LossConfig::validate() const {
    P2SC_CHECK_AS(0.0 < m_minus && m_minus < m_plus && m_plus < 1.0, ConfigError,
                  "loss config requires 0 < m_minus < m_plus < 1, got m-=" << m_minus
                                                                           << " m+=" << m_plus);
    P2SC_CHECK_AS(lambda >= 0.0, ConfigError, "loss config: lambda must be >= 0");
    P2SC_CHECK_AS(alpha >= 0.0, ConfigError, "loss config: alpha must be >= 0");
}

Tensor margin_loss(const Tensor& lengths, int label, const LossConfig& cfg) {
    P2SC_CHECK(lengths.ndim() == 1, "margin_loss expects a length vector, got "
                                        << shape_str(lengths.shape()));
    const int64_t j = lengths.dim(0);
    P2SC_CHECK(label >= 0 && label < j, "margin_loss: label " << label << " outside [0, " << j
                                                              << ")");
    auto lv = lengths.values();
    double loss = 0.0;
    for (int64_t k = 0; k < j; ++k) {
        if (k == label) {
            const double h = std::max(0.0, cfg.m_plus - lv[k]);
            loss += h * h;
        } else {
            const double h = std::max(0.0, lv[k] - cfg.m_minus);
            loss += cfg.lambda * h * h;
        }
    }
    return make_op({}, {loss}, {lengths},
                   [j, label, cfg](const detail::Node& self, std::span<const double> g,
                                   const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const auto& lv = self.parents[0]->values;
                       for (int64_t k = 0; k < j; ++k) {
                           if (k == label) {
                               const double h = std::max(0.0, cfg.m_plus - lv[k]);
                               pg[0][k] += g[0] * (-2.0 * h);
                           } else {
                               const double h = std::max(0.0, lv[k] - cfg.m_minus);
                               pg[0][k] += g[0] * (cfg.lambda * 2.0 * h);
                           }
                       }
                   });
}

Tensor chamfer(const Tensor& x, const Tensor& x_hat) {
    P2SC_CHECK(x.ndim() == 2 && x.dim(1) == 3 && x_hat.ndim() == 2 && x_hat.dim(1) == 3,
               "chamfer expects [N,3] point sets, got " << shape_str(x.shape()) << " and "
                                                        << shape_str(x_hat.shape()));
    const int64_t n = x.dim(0), m = x_hat.dim(0);
    P2SC_CHECK_AS(n > 0 && m > 0, DataError, "chamfer: empty point set");
    auto xv = x.values();
    auto hv = x_hat.values();

    auto nearest = [](std::span<const double> from, int64_t i, std::span<const double> to,
                      int64_t count) {
        const double px = from[i * 3], py = from[i * 3 + 1], pz = from[i * 3 + 2];
        int64_t best = 0;
        double best_d = -1.0;
        for (int64_t k = 0; k < count; ++k) {
            const double dx = px - to[k * 3], dy = py - to[k * 3 + 1], dz = pz - to[k * 3 + 2];
            const double d = dx * dx + dy * dy + dz * dz;
            if (best_d < 0.0 || d < best_d) {  // strict <: first index keeps ties
                best_d = d;
                best = k;
            }
        }
        return std::pair<int64_t, double>(best, std::sqrt(best_d));
    };

    std::vector<int64_t> nn_x(static_cast<size_t>(n));   // for each x: nearest x_hat
    std::vector<int64_t> nn_h(static_cast<size_t>(m));   // for each x_hat: nearest x
    double sum_x = 0.0, sum_h = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        auto [k, d] = nearest(xv, i, hv, m);
        nn_x[static_cast<size_t>(i)] = k;
        sum_x += d;
    }
    for (int64_t k = 0; k < m; ++k) {
        auto [i, d] = nearest(hv, k, xv, n);
        nn_h[static_cast<size_t>(k)] = i;
        sum_h += d;
    }
    const double value = sum_x / static_cast<double>(n) + sum_h / static_cast<double>(m);

    return make_op(
        {}, {value}, {x, x_hat},
        [n, m, nn_x = std::move(nn_x), nn_h = std::move(nn_h)](
            const detail::Node& self, std::span<const double> g, const std::vector<double*>& pg) {
            const auto& xv = self.parents[0]->values;
            const auto& hv = self.parents[1]->values;
            const double gn = g[0] / static_cast<double>(n);
            const double gm = g[0] / static_cast<double>(m);
            // d||a-b||/da = (a-b)/||a-b||; coincident pairs contribute zero.
            auto accum = [](double w, const double* a, const double* b, double* ga, double* gb) {
                const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
                const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (dist <= 0.0) return;
                const double f = w / dist;
                if (ga) {
                    ga[0] += f * dx;
                    ga[1] += f * dy;
                    ga[2] += f * dz;
                }
                if (gb) {
                    gb[0] -= f * dx;
                    gb[1] -= f * dy;
                    gb[2] -= f * dz;
                }
            };
            for (int64_t i = 0; i < n; ++i) {
                const int64_t k = nn_x[static_cast<size_t>(i)];
                accum(gn, &xv[i * 3], &hv[k * 3], pg[0] ? pg[0] + i * 3 : nullptr,
                      pg[1] ? pg[1] + k * 3 : nullptr);
            }
            for (int64_t k = 0; k < m; ++k) {
                const int64_t i = nn_h[static_cast<size_t>(k)];
                accum(gm, &hv[k * 3], &xv[i * 3], pg[1] ? pg[1] + k * 3 : nullptr,
                      pg[0] ? pg[0] + i * 3 : nullptr);
            }
        });
}

ReconstructionDecoder::ReconstructionDecoder(ParamRegistry& reg, const std::string& prefix,
                                             int64_t in_width,
                                             const std::vector<int64_t>& widths, RngStream& rng) {
    P2SC_CHECK_AS(widths.size() == 4, ConfigError,
                  "reconstruction decoder: exactly four layers required, got " << widths.size());
    P2SC_CHECK_AS(widths.back() % 3 == 0, ConfigError,
                  "reconstruction decoder: last width " << widths.back() << " must be 3*points");
    points = widths.back() / 3;
    mlp = MLP(reg, prefix, in_width, widths, rng, /*plain_last=*/true);
}

Tensor ReconstructionDecoder::forward(const Tensor& capsules, bool training) {
    P2SC_CHECK(capsules.ndim() == 2, "decoder expects [B, d] capsule rows");
    return mlp.forward(capsules, training);
}

Tensor ReconstructionDecoder::reconstruct(const Tensor& capsule) {
    Tensor row = capsule;
    if (row.ndim() == 1) row = ops::reshape(row, {1, row.dim(0)});
    P2SC_CHECK(row.ndim() == 2 && row.dim(0) == 1, "reconstruct expects a single capsule");
    Tensor out = mlp.forward(row, /*training=*/false);
    return ops::reshape(out, {points, 3});
}

Tensor total_loss(const Tensor& margin, const Tensor& rec, const LossConfig& cfg) {
    return ops::add(margin, ops::scale(rec, cfg.alpha));
}

}  // namespace p2sc
