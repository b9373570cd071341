#include "p2sc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace p2sc::ops {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using MutMap = Eigen::Map<MatRM>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    P2SC_CHECK(a.shape() == b.shape(), op << ": shape mismatch " << shape_str(a.shape()) << " vs "
                                          << shape_str(b.shape()));
}

// Decomposes a shape around one axis for strided slice iteration.
struct AxisSplit {
    int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
    P2SC_CHECK(axis >= 0 && axis < static_cast<int>(s.size()),
               op << ": axis " << axis << " out of range for " << shape_str(s));
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.axis = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](const detail::Node&, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       for (size_t i = 0; i < g.size(); ++i) {
                           if (pg[0]) pg[0][i] += g[i];
                           if (pg[1]) pg[1][i] += g[i];
                       }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](const detail::Node&, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       for (size_t i = 0; i < g.size(); ++i) {
                           if (pg[0]) pg[0][i] += g[i];
                           if (pg[1]) pg[1][i] -= g[i];
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](const detail::Node& self, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       const auto& av = self.parents[0]->values;
                       const auto& bv = self.parents[1]->values;
                       for (size_t i = 0; i < g.size(); ++i) {
                           if (pg[0]) pg[0][i] += g[i] * bv[i];
                           if (pg[1]) pg[1][i] += g[i] * av[i];
                       }
                   });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= c;
    return make_op(a.shape(), std::move(out), {a},
                   [c](const detail::Node&, std::span<const double> g,
                       const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (size_t i = 0; i < g.size(); ++i) pg[0][i] += c * g[i];
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v += c;
    return make_op(a.shape(), std::move(out), {a},
                   [](const detail::Node&, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                   });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    P2SC_CHECK(m.ndim() == 2 && v.ndim() == 1 && m.dim(1) == v.dim(0),
               "add_rowvec: incompatible shapes " << shape_str(m.shape()) << " and "
                                                  << shape_str(v.shape()));
    const int64_t rows = m.dim(0), cols = m.dim(1);
    std::vector<double> out(m.values().begin(), m.values().end());
    auto vv = v.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[r * cols + c] += vv[c];
    return make_op(m.shape(), std::move(out), {m, v},
                   [rows, cols](const detail::Node&, std::span<const double> g,
                                const std::vector<double*>& pg) {
                       if (pg[0])
                           for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                       if (pg[1])
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t c = 0; c < cols; ++c) pg[1][c] += g[r * cols + c];
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    P2SC_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
               "matmul: incompatible shapes " << shape_str(a.shape()) << " and "
                                              << shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
    return make_op({m, n}, std::move(out), {a, b},
                   [m, k, n](const detail::Node& self, std::span<const double> g,
                             const std::vector<double*>& pg) {
                       ConstMap gm(g.data(), m, n);
                       if (pg[0])
                           MutMap(pg[0], m, k).noalias() +=
                               gm * ConstMap(self.parents[1]->values.data(), k, n).transpose();
                       if (pg[1])
                           MutMap(pg[1], k, n).noalias() +=
                               ConstMap(self.parents[0]->values.data(), m, k).transpose() * gm;
                   });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    P2SC_CHECK(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1 && x.dim(1) == w.dim(1) &&
                   w.dim(0) == b.dim(0),
               "linear: incompatible shapes x=" << shape_str(x.shape())
                                                << " w=" << shape_str(w.shape())
                                                << " b=" << shape_str(b.shape()));
    const int64_t n = x.dim(0), in = x.dim(1), outw = w.dim(0);
    std::vector<double> out(static_cast<size_t>(n * outw));
    MutMap om(out.data(), n, outw);
    om.noalias() =
        ConstMap(x.values().data(), n, in) * ConstMap(w.values().data(), outw, in).transpose();
    auto bv = b.values();
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < outw; ++c) out[r * outw + c] += bv[c];
    return make_op({n, outw}, std::move(out), {x, w, b},
                   [n, in, outw](const detail::Node& self, std::span<const double> g,
                                 const std::vector<double*>& pg) {
                       ConstMap gm(g.data(), n, outw);
                       if (pg[0])
                           MutMap(pg[0], n, in).noalias() +=
                               gm * ConstMap(self.parents[1]->values.data(), outw, in);
                       if (pg[1])
                           MutMap(pg[1], outw, in).noalias() +=
                               gm.transpose() * ConstMap(self.parents[0]->values.data(), n, in);
                       if (pg[2])
                           for (int64_t r = 0; r < n; ++r)
                               for (int64_t c = 0; c < outw; ++c) pg[2][c] += g[r * outw + c];
                   });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_op(a.shape(), std::move(out), {a},
                   [](const detail::Node& self, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const auto& xv = self.parents[0]->values;
                       for (size_t i = 0; i < g.size(); ++i)
                           if (xv[i] > 0.0) pg[0][i] += g[i];
                   });
}

Tensor softmax(const Tensor& a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
    auto av = a.values();
    std::vector<double> out(a.numel());
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.axis * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t k = 0; k < sp.axis; ++k) mx = std::max(mx, av[base + k * sp.inner]);
            double sum = 0.0;
            for (int64_t k = 0; k < sp.axis; ++k) {
                double e = std::exp(av[base + k * sp.inner] - mx);
                out[base + k * sp.inner] = e;
                sum += e;
            }
            for (int64_t k = 0; k < sp.axis; ++k) out[base + k * sp.inner] /= sum;
        }
    }
    return make_op(a.shape(), std::move(out), {a},
                   [sp](const detail::Node& self, std::span<const double> g,
                        const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const auto& y = self.values;
                       for (int64_t o = 0; o < sp.outer; ++o) {
                           for (int64_t i = 0; i < sp.inner; ++i) {
                               const int64_t base = o * sp.axis * sp.inner + i;
                               double dot = 0.0;
                               for (int64_t k = 0; k < sp.axis; ++k) {
                                   const int64_t at = base + k * sp.inner;
                                   dot += g[at] * y[at];
                               }
                               for (int64_t k = 0; k < sp.axis; ++k) {
                                   const int64_t at = base + k * sp.inner;
                                   pg[0][at] += y[at] * (g[at] - dot);
                               }
                           }
                       }
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    P2SC_CHECK(!parts.empty(), "concat: no inputs");
    const Shape& first = parts[0].shape();
    Shape out_shape = first;
    int64_t total_axis = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        P2SC_CHECK(s.size() == first.size(), "concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis)
                P2SC_CHECK(s[d] == first[d], "concat: shape mismatch off axis at dim "
                                                 << d << ": " << shape_str(s) << " vs "
                                                 << shape_str(first));
        total_axis += s[axis];
    }
    out_shape[axis] = total_axis;
    const AxisSplit sp = split_axis(out_shape, axis, "concat");

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> axis_sizes;
    int64_t offset = 0;
    for (const Tensor& t : parts) {
        const int64_t ax = t.shape()[axis];
        axis_sizes.push_back(ax);
        auto tv = t.values();
        for (int64_t o = 0; o < sp.outer; ++o) {
            const double* src = tv.data() + o * ax * sp.inner;
            double* dst = out.data() + (o * sp.axis + offset) * sp.inner;
            std::copy(src, src + ax * sp.inner, dst);
        }
        offset += ax;
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return make_op(std::move(out_shape), std::move(out), std::move(parents),
                   [sp, axis_sizes](const detail::Node&, std::span<const double> g,
                                    const std::vector<double*>& pg) {
                       int64_t off = 0;
                       for (size_t p = 0; p < axis_sizes.size(); ++p) {
                           const int64_t ax = axis_sizes[p];
                           if (pg[p]) {
                               for (int64_t o = 0; o < sp.outer; ++o) {
                                   const double* src = g.data() + (o * sp.axis + off) * sp.inner;
                                   double* dst = pg[p] + o * ax * sp.inner;
                                   for (int64_t i = 0; i < ax * sp.inner; ++i) dst[i] += src[i];
                               }
                           }
                           off += ax;
                       }
                   });
}

Tensor reduce_sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const size_t n = a.values().size();
    return make_op({1}, {s}, {a},
                   [n](const detail::Node&, std::span<const double> g,
                       const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (size_t i = 0; i < n; ++i) pg[0][i] += g[0];
                   });
}

namespace {
Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    for (size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) out.push_back(s[i]);
    if (out.empty()) out.push_back(1);
    return out;
}
}  // namespace

Tensor reduce_sum_axis(const Tensor& a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "reduce_sum_axis");
    auto av = a.values();
    std::vector<double> out(static_cast<size_t>(sp.outer * sp.inner), 0.0);
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t k = 0; k < sp.axis; ++k)
            for (int64_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += av[(o * sp.axis + k) * sp.inner + i];
    return make_op(drop_axis(a.shape(), axis), std::move(out), {a},
                   [sp](const detail::Node&, std::span<const double> g,
                        const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (int64_t o = 0; o < sp.outer; ++o)
                           for (int64_t k = 0; k < sp.axis; ++k)
                               for (int64_t i = 0; i < sp.inner; ++i)
                                   pg[0][(o * sp.axis + k) * sp.inner + i] += g[o * sp.inner + i];
                   });
}

Tensor reduce_max_axis(const Tensor& a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "reduce_max_axis");
    auto av = a.values();
    std::vector<double> out(static_cast<size_t>(sp.outer * sp.inner));
    std::vector<int64_t> argmax(out.size());
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            int64_t best = 0;
            double bv = av[(o * sp.axis) * sp.inner + i];
            for (int64_t k = 1; k < sp.axis; ++k) {
                double v = av[(o * sp.axis + k) * sp.inner + i];
                if (v > bv) {  // strict: ties keep the first index
                    bv = v;
                    best = k;
                }
            }
            out[o * sp.inner + i] = bv;
            argmax[o * sp.inner + i] = best;
        }
    }
    return make_op(drop_axis(a.shape(), axis), std::move(out), {a},
                   [sp, argmax](const detail::Node&, std::span<const double> g,
                                const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (int64_t o = 0; o < sp.outer; ++o)
                           for (int64_t i = 0; i < sp.inner; ++i) {
                               const int64_t k = argmax[o * sp.inner + i];
                               pg[0][(o * sp.axis + k) * sp.inner + i] += g[o * sp.inner + i];
                           }
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    P2SC_CHECK(x.ndim() == 2 && s.ndim() == 1 && x.dim(0) == s.dim(0),
               "scale_rows expects [n,d] and [n], got " << shape_str(x.shape()) << " and "
                                                        << shape_str(s.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    auto xv = x.values();
    auto sv = s.values();
    std::vector<double> out(static_cast<size_t>(n * d));
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * sv[r];
    return make_op(x.shape(), std::move(out), {x, s},
                   [n, d](const detail::Node& self, std::span<const double> g,
                          const std::vector<double*>& pg) {
                       const auto& xv = self.parents[0]->values;
                       const auto& sv = self.parents[1]->values;
                       if (pg[0]) {
                           for (int64_t r = 0; r < n; ++r)
                               for (int64_t c = 0; c < d; ++c)
                                   pg[0][r * d + c] += g[r * d + c] * sv[r];
                       }
                       if (pg[1]) {
                           for (int64_t r = 0; r < n; ++r) {
                               double acc = 0.0;
                               for (int64_t c = 0; c < d; ++c) acc += g[r * d + c] * xv[r * d + c];
                               pg[1][r] += acc;
                           }
                       }
                   });
}

Tensor l2norm_rows(const Tensor& a) {
    P2SC_CHECK(a.ndim() == 2, "l2norm_rows expects a 2-D tensor, got " << shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    auto av = a.values();
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            double v = av[r * cols + c];
            s += v * v;
        }
        out[r] = std::sqrt(s);
    }
    return make_op({rows}, std::move(out), {a},
                   [rows, cols](const detail::Node& self, std::span<const double> g,
                                const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const auto& xv = self.parents[0]->values;
                       const auto& norms = self.values;
                       for (int64_t r = 0; r < rows; ++r) {
                           if (norms[r] <= 0.0) continue;
                           const double f = g[r] / norms[r];
                           for (int64_t c = 0; c < cols; ++c)
                               pg[0][r * cols + c] += f * xv[r * cols + c];
                       }
                   });
}

Tensor l2_normalize_rows(const Tensor& a) {
    P2SC_CHECK(a.ndim() == 2,
               "l2_normalize_rows expects a 2-D tensor, got " << shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    auto av = a.values();
    std::vector<double> out(a.numel());
    std::vector<double> norms(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            double v = av[r * cols + c];
            s += v * v;
        }
        norms[r] = std::sqrt(s);
        const double inv = norms[r] > 0.0 ? 1.0 / norms[r] : 0.0;
        for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] * inv;
    }
    return make_op(a.shape(), std::move(out), {a},
                   [rows, cols, norms](const detail::Node& self, std::span<const double> g,
                                       const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const auto& y = self.values;
                       for (int64_t r = 0; r < rows; ++r) {
                           if (norms[r] <= 0.0) continue;
                           double dot = 0.0;
                           for (int64_t c = 0; c < cols; ++c)
                               dot += g[r * cols + c] * y[r * cols + c];
                           const double inv = 1.0 / norms[r];
                           for (int64_t c = 0; c < cols; ++c)
                               pg[0][r * cols + c] +=
                                   inv * (g[r * cols + c] - y[r * cols + c] * dot);
                       }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
    P2SC_CHECK(shape_numel(shape) == a.numel(), "reshape: cannot view " << shape_str(a.shape())
                                                                        << " as "
                                                                        << shape_str(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_op(std::move(shape), std::move(out), {a},
                   [](const detail::Node&, std::span<const double> g,
                      const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                   });
}

Tensor transpose(const Tensor& a) {
    P2SC_CHECK(a.ndim() == 2, "transpose expects a 2-D tensor, got " << shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    auto av = a.values();
    std::vector<double> out(a.numel());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = av[r * cols + c];
    return make_op({cols, rows}, std::move(out), {a},
                   [rows, cols](const detail::Node&, std::span<const double> g,
                                const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (int64_t r = 0; r < rows; ++r)
                           for (int64_t c = 0; c < cols; ++c)
                               pg[0][r * cols + c] += g[c * rows + r];
                   });
}

Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx) {
    P2SC_CHECK(a.ndim() == 2, "gather_rows expects a 2-D tensor, got " << shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    for (int64_t i : idx)
        P2SC_CHECK(i >= 0 && i < rows, "gather_rows: index " << i << " out of range [0, " << rows
                                                             << ")");
    const int64_t m = static_cast<int64_t>(idx.size());
    auto av = a.values();
    std::vector<double> out(static_cast<size_t>(m * cols));
    for (int64_t r = 0; r < m; ++r)
        std::copy(av.data() + idx[r] * cols, av.data() + (idx[r] + 1) * cols,
                  out.data() + r * cols);
    return make_op({m, cols}, std::move(out), {a},
                   [idx = std::move(idx), cols](const detail::Node&, std::span<const double> g,
                                                const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (size_t r = 0; r < idx.size(); ++r)
                           for (int64_t c = 0; c < cols; ++c)
                               pg[0][idx[r] * cols + c] += g[r * cols + c];
                   });
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
    P2SC_CHECK(a.ndim() == 2, "slice_cols expects a 2-D tensor, got " << shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    P2SC_CHECK(0 <= c0 && c0 < c1 && c1 <= cols,
               "slice_cols: range [" << c0 << ", " << c1 << ") invalid for width " << cols);
    const int64_t w = c1 - c0;
    auto av = a.values();
    std::vector<double> out(static_cast<size_t>(rows * w));
    for (int64_t r = 0; r < rows; ++r)
        std::copy(av.data() + r * cols + c0, av.data() + r * cols + c1, out.data() + r * w);
    return make_op({rows, w}, std::move(out), {a},
                   [rows, cols, c0, w](const detail::Node&, std::span<const double> g,
                                       const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       for (int64_t r = 0; r < rows; ++r)
                           for (int64_t c = 0; c < w; ++c)
                               pg[0][r * cols + c0 + c] += g[r * w + c];
                   });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum, double eps) {
    P2SC_CHECK(x.ndim() == 2, "batchnorm expects a 2-D tensor, got " << shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    P2SC_CHECK(gamma.ndim() == 1 && gamma.dim(0) == d && beta.ndim() == 1 && beta.dim(0) == d,
               "batchnorm: affine parameters must have width " << d);
    P2SC_CHECK(running_mean.dim(0) == d && running_var.dim(0) == d,
               "batchnorm: running statistics must have width " << d);

    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();

    std::vector<double> mean(static_cast<size_t>(d), 0.0), var(static_cast<size_t>(d), 0.0);
    if (training) {
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < d; ++c) mean[c] += xv[r * d + c];
        for (int64_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < d; ++c) {
                const double delta = xv[r * d + c] - mean[c];
                var[c] += delta * delta;
            }
        for (int64_t c = 0; c < d; ++c) var[c] /= static_cast<double>(n);
        auto& rm = running_mean.mutable_values();
        auto& rv = running_var.mutable_values();
        for (int64_t c = 0; c < d; ++c) {
            rm[c] = momentum * rm[c] + (1.0 - momentum) * mean[c];
            rv[c] = momentum * rv[c] + (1.0 - momentum) * var[c];
        }
    } else {
        mean.assign(running_mean.values().begin(), running_mean.values().end());
        var.assign(running_var.values().begin(), running_var.values().end());
    }

    std::vector<double> inv_std(static_cast<size_t>(d));
    for (int64_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

    std::vector<double> xhat(static_cast<size_t>(n * d)), out(static_cast<size_t>(n * d));
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) {
            const double h = (xv[r * d + c] - mean[c]) * inv_std[c];
            xhat[r * d + c] = h;
            out[r * d + c] = gv[c] * h + bv[c];
        }

    return make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, d, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](
            const detail::Node& self, std::span<const double> g,
            const std::vector<double*>& pg) {
            const auto& gv = self.parents[1]->values;
            // Per-feature reductions of the incoming gradient.
            std::vector<double> sum_g(static_cast<size_t>(d), 0.0),
                sum_gx(static_cast<size_t>(d), 0.0);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t c = 0; c < d; ++c) {
                    sum_g[c] += g[r * d + c];
                    sum_gx[c] += g[r * d + c] * xhat[r * d + c];
                }
            if (pg[0]) {
                if (training) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (int64_t r = 0; r < n; ++r)
                        for (int64_t c = 0; c < d; ++c)
                            pg[0][r * d + c] +=
                                gv[c] * inv_std[c] *
                                (g[r * d + c] - inv_n * sum_g[c] -
                                 xhat[r * d + c] * inv_n * sum_gx[c]);
                } else {
                    for (int64_t r = 0; r < n; ++r)
                        for (int64_t c = 0; c < d; ++c)
                            pg[0][r * d + c] += gv[c] * inv_std[c] * g[r * d + c];
                }
            }
            if (pg[1])
                for (int64_t c = 0; c < d; ++c) pg[1][c] += sum_gx[c];
            if (pg[2])
                for (int64_t c = 0; c < d; ++c) pg[2][c] += sum_g[c];
        });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    P2SC_CHECK(logits.ndim() == 2,
               "cross_entropy_rows expects 2-D logits, got " << shape_str(logits.shape()));
    const int64_t n = logits.dim(0), p = logits.dim(1);
    P2SC_CHECK(static_cast<int64_t>(labels.size()) == n,
               "cross_entropy_rows: " << labels.size() << " labels for " << n << " rows");
    auto lv = logits.values();
    std::vector<double> probs(static_cast<size_t>(n * p));
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        P2SC_CHECK(labels[r] >= 0 && labels[r] < p,
                   "cross_entropy_rows: label " << labels[r] << " out of range [0, " << p << ")");
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < p; ++c) mx = std::max(mx, lv[r * p + c]);
        double sum = 0.0;
        for (int64_t c = 0; c < p; ++c) {
            const double e = std::exp(lv[r * p + c] - mx);
            probs[r * p + c] = e;
            sum += e;
        }
        for (int64_t c = 0; c < p; ++c) probs[r * p + c] /= sum;
        loss -= std::log(std::max(probs[r * p + labels[r]], 1e-300));
    }
    loss /= static_cast<double>(n);
    return make_op({}, {loss}, {logits},
                   [n, p, labels, probs = std::move(probs)](const detail::Node&,
                                                            std::span<const double> g,
                                                            const std::vector<double*>& pg) {
                       if (!pg[0]) return;
                       const double f = g[0] / static_cast<double>(n);
                       for (int64_t r = 0; r < n; ++r)
                           for (int64_t c = 0; c < p; ++c)
                               pg[0][r * p + c] +=
                                   f * (probs[r * p + c] - (labels[r] == c ? 1.0 : 0.0));
                   });
}

}  // namespace p2sc::ops
