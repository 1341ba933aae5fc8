#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "less/tensor.hpp"

// Differentiable operations. Broadcasting is limited to scalar-with-tensor and
// equal shapes; everything else is an explicit op (linear, gather_rows, ...).
// All reductions run left to right in row-major order.

namespace less {

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <class F, class DF>
Tensor unary(const Tensor& x, std::string_view op, F f, DF df) {
    std::vector<double> y(x.numel());
    auto xs = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
    Tensor out(x.shape(), std::move(y));
    record_op(op, {x}, out, [x, out, df](std::span<const double> g, std::span<const std::span<double>> gi) {
        auto xs = x.data();
        auto ys = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * df(xs[i], ys[i]);
    });
    return out;
}

enum class BinaryKind { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, std::string_view op) {
    const bool same = a.shape() == b.shape();
    const bool a_scalar = a.numel() == 1 && !same;
    const bool b_scalar = b.numel() == 1 && !same;
    if (!same && !a_scalar && !b_scalar)
        throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const Shape& shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    auto as = a.data();
    auto bs = b.data();
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double av = a_scalar ? as[0] : as[i];
        const double bv = b_scalar ? bs[0] : bs[i];
        switch (kind) {
            case BinaryKind::add: y[i] = av + bv; break;
            case BinaryKind::sub: y[i] = av - bv; break;
            case BinaryKind::mul: y[i] = av * bv; break;
        }
    }
    Tensor out(shape, std::move(y));
    record_op(op, {a, b}, out,
              [a, b, kind, a_scalar, b_scalar](std::span<const double> g, std::span<const std::span<double>> gi) {
                  auto as = a.data();
                  auto bs = b.data();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                      const std::size_t ia = a_scalar ? 0 : i;
                      const std::size_t ib = b_scalar ? 0 : i;
                      double da = 0.0, db = 0.0;
                      switch (kind) {
                          case BinaryKind::add: da = g[i]; db = g[i]; break;
                          case BinaryKind::sub: da = g[i]; db = -g[i]; break;
                          case BinaryKind::mul: da = g[i] * bs[ib]; db = g[i] * as[ia]; break;
                      }
                      if (!gi[0].empty()) gi[0][ia] += da;
                      if (!gi[1].empty()) gi[1][ib] += db;
                  }
              });
    return out;
}

// View a shape as [outer, axis, inner] around `axis`.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::mul, "mul"); }

inline Tensor scale(const Tensor& x, double s) {
    return detail::unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

// x + c
inline Tensor shift(const Tensor& x, double c) {
    return detail::unary(x, "shift", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(x, "sigmoid", detail::sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    record_op("sum", {x}, out, [](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (auto& v : gi[0]) v += g[0];
    });
    return out;
}

inline Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.numel());
    Tensor out = Tensor::scalar(s / n);
    record_op("mean", {x}, out, [n](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (auto& v : gi[0]) v += g[0] / n;
    });
    return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape), x.to_vector());
    record_op("reshape", {x}, out, [](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
    });
    return out;
}

inline Tensor transpose(const Tensor& x) {
    detail::require_rank2(x, "transpose");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> y(m * n);
    auto xs = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[j * m + i] = xs[i * n + j];
    Tensor out({n, m}, std::move(y));
    record_op("transpose", {x}, out, [m, n](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
    });
    return out;
}

namespace detail {
// c[m×n] += a[m×k] · b[k×n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}
// c[m×k] += g[m×n] · b[k×n]ᵀ
inline void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
            c[i * k + p] += s;
        }
    }
}
// c[k×n] += a[m×k]ᵀ · g[m×n]
inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
        }
    }
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " are not compatible");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(m * n, 0.0);
    detail::gemm_acc(a.data().data(), b.data().data(), y.data(), m, k, n);
    Tensor out({m, n}, std::move(y));
    record_op("matmul", {a, b}, out, [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gi) {
        if (!gi[0].empty()) detail::gemm_nt_acc(g.data(), b.data().data(), gi[0].data(), m, k, n);
        if (!gi[1].empty()) detail::gemm_tn_acc(a.data().data(), g.data(), gi[1].data(), m, k, n);
    });
    return out;
}

// x[N×Cin] · w[Cin×Cout] + bias[Cout] (bias may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (bias.defined() && bias.numel() != n)
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    std::vector<double> y(m * n, 0.0);
    if (bias.defined()) {
        auto bs = bias.data();
        for (std::size_t i = 0; i < m; ++i) std::copy(bs.begin(), bs.end(), y.begin() + i * n);
    }
    detail::gemm_acc(x.data().data(), w.data().data(), y.data(), m, k, n);
    Tensor out({m, n}, std::move(y));
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    record_op("linear", inputs, out, [x, w, m, k, n](std::span<const double> g, std::span<const std::span<double>> gi) {
        if (!gi[0].empty()) detail::gemm_nt_acc(g.data(), w.data().data(), gi[0].data(), m, k, n);
        if (!gi[1].empty()) detail::gemm_tn_acc(x.data().data(), g.data(), gi[1].data(), m, k, n);
        if (gi.size() > 2 && !gi[2].empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gi[2][j] += g[i * n + j];
    });
    return out;
}

// Numerically stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis, "softmax");
    auto xs = x.data();
    std::vector<double> y(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < sp.len; ++a) mx = std::max(mx, xs[base + a * sp.inner]);
            double s = 0.0;
            for (std::size_t a = 0; a < sp.len; ++a) {
                const double e = std::exp(xs[base + a * sp.inner] - mx);
                y[base + a * sp.inner] = e;
                s += e;
            }
            for (std::size_t a = 0; a < sp.len; ++a) y[base + a * sp.inner] /= s;
        }
    Tensor out(x.shape(), std::move(y));
    record_op("softmax", {x}, out, [out, sp](std::span<const double> g, std::span<const std::span<double>> gi) {
        auto ys = out.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::size_t a = 0; a < sp.len; ++a) dot += g[base + a * sp.inner] * ys[base + a * sp.inner];
                for (std::size_t a = 0; a < sp.len; ++a) {
                    const std::size_t i = base + a * sp.inner;
                    gi[0][i] += ys[i] * (g[i] - dot);
                }
            }
    });
    return out;
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis, "log_softmax");
    auto xs = x.data();
    std::vector<double> y(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < sp.len; ++a) mx = std::max(mx, xs[base + a * sp.inner]);
            double s = 0.0;
            for (std::size_t a = 0; a < sp.len; ++a) s += std::exp(xs[base + a * sp.inner] - mx);
            const double lse = mx + std::log(s);
            for (std::size_t a = 0; a < sp.len; ++a) y[base + a * sp.inner] = xs[base + a * sp.inner] - lse;
        }
    Tensor out(x.shape(), std::move(y));
    record_op("log_softmax", {x}, out, [out, sp](std::span<const double> g, std::span<const std::span<double>> gi) {
        auto ys = out.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double gs = 0.0;
                for (std::size_t a = 0; a < sp.len; ++a) gs += g[base + a * sp.inner];
                for (std::size_t a = 0; a < sp.len; ++a) {
                    const std::size_t i = base + a * sp.inner;
                    gi[0][i] += g[i] - std::exp(ys[i]) * gs;
                }
            }
    });
    return out;
}

// Row-wise softmax over the entries where mask is nonzero; masked entries
// come out as exactly 0. A row with no visible entry is treated as fully
// visible.
inline Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
    detail::require_rank2(x, "masked_softmax_rows");
    if (mask.size() != x.numel())
        throw DimensionError("masked_softmax_rows: mask of " + std::to_string(mask.size()) +
                             " entries for shape " + shape_str(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<std::uint8_t> eff(mask.begin(), mask.end());
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = eff.begin() + static_cast<std::ptrdiff_t>(r * cols);
        if (std::none_of(row, row + static_cast<std::ptrdiff_t>(cols), [](std::uint8_t v) { return v != 0; }))
            std::fill(row, row + static_cast<std::ptrdiff_t>(cols), std::uint8_t{1});
    }
    auto xs = x.data();
    std::vector<double> y(x.numel(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c)
            if (eff[base + c]) mx = std::max(mx, xs[base + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
            if (eff[base + c]) {
                y[base + c] = std::exp(xs[base + c] - mx);
                s += y[base + c];
            }
        for (std::size_t c = 0; c < cols; ++c) y[base + c] /= s;
    }
    Tensor out(x.shape(), std::move(y));
    record_op("masked_softmax_rows", {x}, out,
              [out, rows, cols](std::span<const double> g, std::span<const std::span<double>> gi) {
                  auto ys = out.data();
                  for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t base = r * cols;
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * ys[base + c];
                      for (std::size_t c = 0; c < cols; ++c) gi[0][base + c] += ys[base + c] * (g[base + c] - dot);
                  }
              });
    return out;
}

// Rows of x (first axis) selected by idx; backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
    const std::size_t n = x.rows(), w = x.cols();
    if (idx.empty()) throw IndexError("gather_rows: empty index list");
    for (auto i : idx)
        if (i >= n)
            throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " + std::to_string(n) +
                             " rows");
    Shape shape = x.shape();
    shape[0] = idx.size();
    std::vector<double> y(idx.size() * w);
    auto xs = x.data();
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(idx[r] * w), w, y.begin() + static_cast<std::ptrdiff_t>(r * w));
    Tensor out(std::move(shape), std::move(y));
    std::vector<std::size_t> index(idx.begin(), idx.end());
    record_op("gather_rows", {x}, out,
              [index = std::move(index), w](std::span<const double> g, std::span<const std::span<double>> gi) {
                  for (std::size_t r = 0; r < index.size(); ++r) {
                      double* dst = gi[0].data() + index[r] * w;
                      const double* src = g.data() + r * w;
                      for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
                  }
              });
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "concat_cols");
    detail::require_rank2(b, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw DimensionError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
    std::vector<double> y(n * c);
    auto as = a.data();
    auto bs = b.data();
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(as.begin() + static_cast<std::ptrdiff_t>(r * ca), ca, y.begin() + static_cast<std::ptrdiff_t>(r * c));
        std::copy_n(bs.begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                    y.begin() + static_cast<std::ptrdiff_t>(r * c + ca));
    }
    Tensor out({n, c}, std::move(y));
    record_op("concat_cols", {a, b}, out, [n, ca, cb, c](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t r = 0; r < n; ++r) {
            if (!gi[0].empty())
                for (std::size_t j = 0; j < ca; ++j) gi[0][r * ca + j] += g[r * c + j];
            if (!gi[1].empty())
                for (std::size_t j = 0; j < cb; ++j) gi[1][r * cb + j] += g[r * c + ca + j];
        }
    });
    return out;
}

// Stacks row blocks with equal trailing width.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t w = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != w)
            throw DimensionError("concat_rows: shape " + shape_str(p.shape()) + " does not have width " +
                                 std::to_string(w));
        total += p.rows();
    }
    std::vector<double> y;
    y.reserve(total * w);
    for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
    Tensor out({total, w}, std::move(y));
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.numel());
    record_op("concat_rows", parts, out, [sizes](std::span<const double> g, std::span<const std::span<double>> gi) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (!gi[k].empty())
                for (std::size_t i = 0; i < sizes[k]; ++i) gi[k][i] += g[off + i];
            off += sizes[k];
        }
    });
    return out;
}

// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    detail::require_rank2(x, "slice_cols");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (begin >= end || end > c)
        throw IndexError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
    const std::size_t w = end - begin;
    std::vector<double> y(n * w);
    auto xs = x.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) y[r * w + j] = xs[r * c + begin + j];
    Tensor out({n, w}, std::move(y));
    record_op("slice_cols", {x}, out, [n, c, w, begin](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) gi[0][r * c + begin + j] += g[r * w + j];
    });
    return out;
}

// Column means of a matrix, as [1×C].
inline Tensor mean_rows(const Tensor& x) {
    detail::require_rank2(x, "mean_rows");
    const std::size_t n = x.dim(0), c = x.dim(1);
    std::vector<double> y(c, 0.0);
    auto xs = x.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) y[j] += xs[r * c + j];
    for (auto& v : y) v /= static_cast<double>(n);
    Tensor out({1, c}, std::move(y));
    record_op("mean_rows", {x}, out, [n, c](std::span<const double> g, std::span<const std::span<double>> gi) {
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += g[j] * inv;
    });
    return out;
}

// Each row divided by max(‖row‖₂, eps).
inline Tensor normalize_rows(const Tensor& x, double eps = 1e-12) {
    detail::require_rank2(x, "normalize_rows");
    const std::size_t n = x.dim(0), c = x.dim(1);
    auto xs = x.data();
    std::vector<double> y(n * c), norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += xs[r * c + j] * xs[r * c + j];
        norms[r] = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < c; ++j) y[r * c + j] = xs[r * c + j] / norms[r];
    }
    Tensor out({n, c}, std::move(y));
    record_op("normalize_rows", {x}, out,
              [out, norms, n, c, eps](std::span<const double> g, std::span<const std::span<double>> gi) {
                  auto ys = out.data();
                  for (std::size_t r = 0; r < n; ++r) {
                      const double nr = norms[r];
                      if (nr <= eps) {
                          for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += g[r * c + j] / nr;
                          continue;
                      }
                      double dot = 0.0;
                      for (std::size_t j = 0; j < c; ++j) dot += ys[r * c + j] * g[r * c + j];
                      for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += (g[r * c + j] - ys[r * c + j] * dot) / nr;
                  }
              });
    return out;
}

// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets, in the
// overflow-free form max(x,0) − x·y + log(1 + e^{−|x|}).
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
    if (logits.numel() != targets.size())
        throw DimensionError("bce_with_logits: " + std::to_string(logits.numel()) + " logits vs " +
                             std::to_string(targets.size()) + " targets");
    auto xs = logits.data();
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double x = xs[i];
        s += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    const double n = static_cast<double>(xs.size());
    Tensor out = Tensor::scalar(s / n);
    std::vector<double> y(targets.begin(), targets.end());
    record_op("bce_with_logits", {logits}, out,
              [logits, y = std::move(y), n](std::span<const double> g, std::span<const std::span<double>> gi) {
                  auto xs = logits.data();
                  for (std::size_t i = 0; i < xs.size(); ++i)
                      gi[0][i] += g[0] * (detail::sigmoid_scalar(xs[i]) - y[i]) / n;
              });
    return out;
}

}  // namespace less
