#include "p2sc/capsules.hpp"

#include <cmath>

#include "p2sc/common.hpp"
#include "p2sc/ops.hpp"

namespace p2sc {

Tensor squash_rows(const Tensor& x) {
    P2SC_CHECK(x.ndim() == 2, "squash_rows expects [n,d], got " << shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    auto xv = x.values();
    std::vector<double> out(static_cast<size_t>(n * d));
    std::vector<double> norms(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
        double s2 = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double v = xv[r * d + c];
            s2 += v * v;
        }
        const double norm = std::sqrt(s2);
        norms[static_cast<size_t>(r)] = norm;
        const double f = norm / (1.0 + s2);  // ||x||^2/(1+||x||^2) * 1/||x||
        for (int64_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * f;
    }
    return make_op(
        x.shape(), std::move(out), {x},
        [n, d, norms = std::move(norms)](const detail::Node& self, std::span<const double> g,
                                         const std::vector<double*>& pg) {
            if (!pg[0]) return;
            const auto& xv = self.parents[0]->values;
            for (int64_t r = 0; r < n; ++r) {
                const double nm = norms[static_cast<size_t>(r)];
                if (nm <= 0.0) continue;  // squash(0)=0 with zero gradient (limit)
                const double den = 1.0 + nm * nm;
                const double f = nm / den;
                // d f(n)/dn = (1 - n^2)/(1 + n^2)^2, applied along x/||x||.
                const double fp = (1.0 - nm * nm) / (den * den);
                double gdotx = 0.0;
                for (int64_t c = 0; c < d; ++c) gdotx += g[r * d + c] * xv[r * d + c];
                const double radial = fp * gdotx / nm;
                for (int64_t c = 0; c < d; ++c) {
                    pg[0][r * d + c] += f * g[r * d + c] + radial * xv[r * d + c];
                }
            }
        });
}

CapsuleFusion::CapsuleFusion(ParamRegistry& reg, const std::string& prefix, int64_t chunk_width,
                             int64_t d_cap, RngStream& rng)
    : map(reg, prefix + ".map", chunk_width + 3, d_cap, rng, /*bias=*/false) {}

Tensor rearrange_split(const Tensor& fused, int64_t s, const CapsuleFusion& fusion) {
    P2SC_CHECK(fused.ndim() == 2 && fused.dim(1) > 3,
               "rearrange_split expects [Q, D+3], got " << shape_str(fused.shape()));
    const int64_t q = fused.dim(0);
    const int64_t d_feat = fused.dim(1) - 3;
    P2SC_CHECK_AS(s >= 1 && d_feat % s == 0, ConfigError,
                  "rearrange_split: s=" << s << " must divide feature width " << d_feat);
    const int64_t chunk = d_feat / s;
    P2SC_CHECK(fusion.map.w.dim(1) == chunk + 3,
               "rearrange_split: fusion map expects width " << fusion.map.w.dim(1)
                                                            << ", chunks have " << chunk + 3);

    Tensor feat = ops::slice_cols(fused, 0, d_feat);           // [Q, D]
    Tensor spat = ops::slice_cols(fused, d_feat, d_feat + 3);  // [Q, 3]
    Tensor chunks = ops::reshape(feat, {q * s, chunk});        // row-major: chunk rows per cluster
    std::vector<int64_t> repeat(static_cast<size_t>(q * s));
    for (int64_t i = 0; i < q * s; ++i) repeat[static_cast<size_t>(i)] = i / s;
    Tensor spat_rep = ops::gather_rows(spat, std::move(repeat));  // [Q*s, 3]
    Tensor joined = ops::concat({chunks, spat_rep}, 1);           // [Q*s, chunk+3]
    return squash_rows(fusion.map.forward(joined));
}

Tensor capsule_predict(const Tensor& u, const Tensor& w) {
    P2SC_CHECK(u.ndim() == 2 && w.ndim() == 4, "capsule_predict expects [I,d_cap] and [I,J,d_cap,d_digit]");
    const int64_t i = u.dim(0), dc = u.dim(1);
    P2SC_CHECK(w.dim(0) == i && w.dim(2) == dc,
               "capsule_predict: W " << shape_str(w.shape()) << " does not match u "
                                     << shape_str(u.shape()));
    const int64_t j = w.dim(1), dd = w.dim(3);
    auto uv = u.values();
    auto wv = w.values();
    std::vector<double> out(static_cast<size_t>(i * j * dd), 0.0);
    for (int64_t ii = 0; ii < i; ++ii) {
        for (int64_t jj = 0; jj < j; ++jj) {
            const int64_t wbase = ((ii * j + jj) * dc) * dd;
            const int64_t obase = (ii * j + jj) * dd;
            for (int64_t a = 0; a < dc; ++a) {
                const double ua = uv[ii * dc + a];
                const int64_t row = wbase + a * dd;
                for (int64_t b = 0; b < dd; ++b) out[obase + b] += ua * wv[row + b];
            }
        }
    }
    return make_op(
        {i, j, dd}, std::move(out), {u, w},
        [i, j, dc, dd](const detail::Node& self, std::span<const double> g,
                       const std::vector<double*>& pg) {
            const auto& uv = self.parents[0]->values;
            const auto& wv = self.parents[1]->values;
            for (int64_t ii = 0; ii < i; ++ii) {
                for (int64_t jj = 0; jj < j; ++jj) {
                    const int64_t wbase = ((ii * j + jj) * dc) * dd;
                    const int64_t obase = (ii * j + jj) * dd;
                    for (int64_t a = 0; a < dc; ++a) {
                        const int64_t row = wbase + a * dd;
                        if (pg[0]) {
                            double acc = 0.0;
                            for (int64_t b = 0; b < dd; ++b) acc += g[obase + b] * wv[row + b];
                            pg[0][ii * dc + a] += acc;
                        }
                        if (pg[1]) {
                            const double ua = uv[ii * dc + a];
                            for (int64_t b = 0; b < dd; ++b) pg[1][row + b] += ua * g[obase + b];
                        }
                    }
                }
            }
        });
}

Tensor coupled_sum(const Tensor& coupling, const Tensor& u_hat) {
    P2SC_CHECK(coupling.ndim() == 2 && u_hat.ndim() == 3 && coupling.dim(0) == u_hat.dim(0) &&
                   coupling.dim(1) == u_hat.dim(1),
               "coupled_sum: expected [I,J] and [I,J,d]");
    const int64_t i = u_hat.dim(0), j = u_hat.dim(1), d = u_hat.dim(2);
    auto cv = coupling.values();
    auto hv = u_hat.values();
    std::vector<double> out(static_cast<size_t>(j * d), 0.0);
    for (int64_t ii = 0; ii < i; ++ii) {
        for (int64_t jj = 0; jj < j; ++jj) {
            const double c = cv[ii * j + jj];
            const int64_t hb = (ii * j + jj) * d;
            for (int64_t b = 0; b < d; ++b) out[jj * d + b] += c * hv[hb + b];
        }
    }
    return make_op({j, d}, std::move(out), {coupling, u_hat},
                   [i, j, d](const detail::Node& self, std::span<const double> g,
                             const std::vector<double*>& pg) {
                       const auto& cv = self.parents[0]->values;
                       const auto& hv = self.parents[1]->values;
                       for (int64_t ii = 0; ii < i; ++ii) {
                           for (int64_t jj = 0; jj < j; ++jj) {
                               const int64_t hb = (ii * j + jj) * d;
                               if (pg[0]) {
                                   double acc = 0.0;
                                   for (int64_t b = 0; b < d; ++b) acc += g[jj * d + b] * hv[hb + b];
                                   pg[0][ii * j + jj] += acc;
                               }
                               if (pg[1]) {
                                   const double c = cv[ii * j + jj];
                                   for (int64_t b = 0; b < d; ++b)
                                       pg[1][hb + b] += c * g[jj * d + b];
                               }
                           }
                       }
                   });
}

Tensor agreement(const Tensor& v, const Tensor& u_hat) {
    P2SC_CHECK(v.ndim() == 2 && u_hat.ndim() == 3 && v.dim(0) == u_hat.dim(1) &&
                   v.dim(1) == u_hat.dim(2),
               "agreement: expected [J,d] and [I,J,d]");
    const int64_t i = u_hat.dim(0), j = u_hat.dim(1), d = u_hat.dim(2);
    auto vv = v.values();
    auto hv = u_hat.values();
    std::vector<double> out(static_cast<size_t>(i * j), 0.0);
    for (int64_t ii = 0; ii < i; ++ii) {
        for (int64_t jj = 0; jj < j; ++jj) {
            const int64_t hb = (ii * j + jj) * d;
            double acc = 0.0;
            for (int64_t b = 0; b < d; ++b) acc += vv[jj * d + b] * hv[hb + b];
            out[ii * j + jj] = acc;
        }
    }
    return make_op({i, j}, std::move(out), {v, u_hat},
                   [i, j, d](const detail::Node& self, std::span<const double> g,
                             const std::vector<double*>& pg) {
                       const auto& vv = self.parents[0]->values;
                       const auto& hv = self.parents[1]->values;
                       for (int64_t ii = 0; ii < i; ++ii) {
                           for (int64_t jj = 0; jj < j; ++jj) {
                               const double gg = g[ii * j + jj];
                               const int64_t hb = (ii * j + jj) * d;
                               for (int64_t b = 0; b < d; ++b) {
                                   if (pg[0]) pg[0][jj * d + b] += gg * hv[hb + b];
                                   if (pg[1]) pg[1][hb + b] += gg * vv[jj * d + b];
                               }
                           }
                       }
                   });
}

CapsuleRouter::CapsuleRouter(ParamRegistry& reg, const std::string& prefix, int64_t in_caps,
                             int64_t d_cap, int64_t out_caps, int64_t d_digit, RngStream& rng)
    : i_(in_caps), j_(out_caps), d_cap_(d_cap), d_digit_(d_digit) {
    P2SC_CHECK_AS(in_caps >= 1 && out_caps >= 1 && d_cap >= 1 && d_digit >= 1, ConfigError,
                  "capsule router: all dimensions must be positive");
    w_ = reg.parameter(prefix + ".w", {in_caps, out_caps, d_cap, d_digit},
                       glorot_uniform(d_cap, d_digit, in_caps * out_caps * d_cap * d_digit, rng));
    b_prior_ = reg.parameter(prefix + ".b_prior", {in_caps, out_caps},
                             std::vector<double>(static_cast<size_t>(in_caps * out_caps), 0.0));
}

Tensor CapsuleRouter::forward(const Tensor& u, int64_t iters, Trace* trace) const {
    P2SC_CHECK(iters >= 1, "dynamic routing requires iters >= 1, got " << iters);
    P2SC_CHECK(u.ndim() == 2 && u.dim(0) == i_ && u.dim(1) == d_cap_,
               "capsule router: expected u [" << i_ << ", " << d_cap_ << "], got "
                                              << shape_str(u.shape()));
    Tensor u_hat = capsule_predict(u, w_);
    Tensor b = b_prior_;
    Tensor v;
    for (int64_t it = 0; it < iters; ++it) {
        Tensor c = ops::softmax(b, 1);
        v = squash_rows(coupled_sum(c, u_hat));
        if (trace) {
            trace->coupling.push_back(c);
            trace->v_per_iter.push_back(v);
        }
        // The final iteration's b update would be dead computation.
        if (it + 1 < iters) b = ops::add(b, agreement(v, u_hat));
    }
    return v;
}

Tensor capsule_lengths(const Tensor& v) {
    return ops::l2norm_rows(v);
}

}  // namespace p2sc
