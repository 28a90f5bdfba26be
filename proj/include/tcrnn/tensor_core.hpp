// SPDX-License-Identifier: Apache-2.0
//
// Dense multi-dimensional arrays and index arithmetic.
//
// Storage is row-major (last index fastest) throughout, and the index
// bijections between a linear position and a multi-index are big-endian mixed
// radix. Together these make reshaping a flat vector into a tensor a no-op on
// the underlying values.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcrnn/error.hpp"

namespace tcrnn {

using Index = std::size_t;
using MultiIndex = std::vector<Index>;

/// Mode sizes of a tensor. Every mode is >= 1.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}
    explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
        Index n = 1;
        for (Index d : dims_) {
            if (d == 0) throw ShapeError("Shape: mode size must be >= 1");
            if (n > std::numeric_limits<Index>::max() / d)
                throw ShapeError("Shape: element count overflows index range");
            n *= d;
        }
        size_ = n;
    }

    const std::vector<Index>& dims() const noexcept { return dims_; }
    Index order() const noexcept { return dims_.size(); }
    Index operator[](Index k) const { return dims_.at(k); }
    /// Number of elements (product of mode sizes; 1 for the order-0 shape).
    Index size() const noexcept { return size_; }

    friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

    std::string str() const {
        std::string s = "(";
        for (Index k = 0; k < dims_.size(); ++k) {
            if (k) s += ",";
            s += std::to_string(dims_[k]);
        }
        return s + ")";
    }

private:
    std::vector<Index> dims_;
    Index size_ = 1;
};

/// Big-endian mixed-radix digits of p in the bases given by dims.
inline MultiIndex linear_to_multi(Index p, const Shape& dims) {
    if (p >= dims.size())
        throw std::out_of_range("linear_to_multi: index " + std::to_string(p) +
                                " outside " + dims.str());
    MultiIndex idx(dims.order());
    for (Index k = dims.order(); k-- > 0;) {
        idx[k] = p % dims[k];
        p /= dims[k];
    }
    return idx;
}

inline Index multi_to_linear(std::span<const Index> idx, const Shape& dims) {
    if (idx.size() != dims.order())
        throw std::out_of_range("multi_to_linear: index has wrong order");
    Index p = 0;
    for (Index k = 0; k < idx.size(); ++k) {
        if (idx[k] >= dims[k])
            throw std::out_of_range("multi_to_linear: component " + std::to_string(k) +
                                    " outside " + dims.str());
        p = p * dims[k] + idx[k];
    }
    return p;
}

/// Row-major matrix of doubles.
struct Matrix {
    Index rows = 0;
    Index cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(Index r, Index c) : rows(r), cols(c), values(r * c, 0.0) {}
    Matrix(Index r, Index c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
        if (values.size() != r * c) throw ShapeError("Matrix: value count mismatch");
    }

    double& operator()(Index r, Index c) { return values[r * cols + c]; }
    double operator()(Index r, Index c) const { return values[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (Index r = 0; r < m.rows; ++r)
        for (Index c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    return t;
}

/// y = M x
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols) throw ShapeError("matvec: length mismatch");
    std::vector<double> y(m.rows, 0.0);
    for (Index r = 0; r < m.rows; ++r) {
        const double* row = m.values.data() + r * m.cols;
        double acc = 0.0;
        for (Index c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

/// y = M^T x
inline std::vector<double> matvec_transposed(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.rows) throw ShapeError("matvec_transposed: length mismatch");
    std::vector<double> y(m.cols, 0.0);
    for (Index r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const double* row = m.values.data() + r * m.cols;
        for (Index c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
    return y;
}

struct DenseTensor {
    Shape shape;
    std::vector<double> values;

    DenseTensor() = default;
    explicit DenseTensor(Shape s) : shape(std::move(s)), values(shape.size(), 0.0) {}
    DenseTensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape.size())
            throw ShapeError("DenseTensor: " + std::to_string(values.size()) +
                             " values for shape " + shape.str());
    }

    double& at(std::span<const Index> idx) { return values[multi_to_linear(idx, shape)]; }
    double at(std::span<const Index> idx) const { return values[multi_to_linear(idx, shape)]; }

    friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
        return a.shape == b.shape && a.values == b.values;
    }
};

namespace detail {

// Splits a shape around `mode` into (outer, mode size, inner) extents.
struct ModeSplit {
    Index outer = 1;
    Index extent = 1;
    Index inner = 1;
};

inline ModeSplit split_at(const Shape& s, Index mode) {
    ModeSplit out;
    for (Index k = 0; k < mode; ++k) out.outer *= s[k];
    out.extent = s[mode];
    for (Index k = mode + 1; k < s.order(); ++k) out.inner *= s[k];
    return out;
}

}  // namespace detail

/// Mode-n product: out[.., a, ..] = sum_b m(a, b) * t[.., b, ..] along `mode`.
inline DenseTensor mode_product(const DenseTensor& t, const Matrix& m, Index mode) {
    if (mode >= t.shape.order()) throw ShapeError("mode_product: mode out of range");
    if (t.shape[mode] != m.cols)
        throw ShapeError("mode_product: tensor mode " + std::to_string(mode) + " has size " +
                         std::to_string(t.shape[mode]) + ", matrix expects " +
                         std::to_string(m.cols));
    auto dims = t.shape.dims();
    dims[mode] = m.rows;
    DenseTensor out{Shape(dims)};
    const auto sp = detail::split_at(t.shape, mode);
    for (Index o = 0; o < sp.outer; ++o) {
        const double* src = t.values.data() + o * sp.extent * sp.inner;
        double* dst = out.values.data() + o * m.rows * sp.inner;
        for (Index a = 0; a < m.rows; ++a) {
            double* drow = dst + a * sp.inner;
            for (Index b = 0; b < m.cols; ++b) {
                const double w = m(a, b);
                if (w == 0.0) continue;
                const double* srow = src + b * sp.inner;
                for (Index i = 0; i < sp.inner; ++i) drow[i] += w * srow[i];
            }
        }
    }
    return out;
}

/// Contraction of two equally shaped tensors over every mode except `mode`:
/// g(a, b) = sum_{rest} lhs[.., a, ..] * rhs[.., b, ..]. Shapes may differ
/// only at `mode`. This is the gradient of mode_product with respect to its
/// matrix argument.
inline Matrix mode_gram(const DenseTensor& lhs, const DenseTensor& rhs, Index mode) {
    if (lhs.shape.order() != rhs.shape.order() || mode >= lhs.shape.order())
        throw ShapeError("mode_gram: order mismatch");
    for (Index k = 0; k < lhs.shape.order(); ++k)
        if (k != mode && lhs.shape[k] != rhs.shape[k])
            throw ShapeError("mode_gram: shapes differ outside the contracted mode");
    const auto sl = detail::split_at(lhs.shape, mode);
    const Index rb = rhs.shape[mode];
    Matrix g(sl.extent, rb);
    for (Index o = 0; o < sl.outer; ++o) {
        const double* l = lhs.values.data() + o * sl.extent * sl.inner;
        const double* r = rhs.values.data() + o * rb * sl.inner;
        for (Index a = 0; a < sl.extent; ++a)
            for (Index b = 0; b < rb; ++b) {
                double acc = 0.0;
                for (Index i = 0; i < sl.inner; ++i) acc += l[a * sl.inner + i] * r[b * sl.inner + i];
                g(a, b) += acc;
            }
    }
    return g;
}

/// target += scale * (v_0 (x) v_1 (x) ... (x) v_{d-1})
inline void outer_accumulate(std::span<const std::vector<double>> vectors, DenseTensor& target,
                             double scale) {
    const Shape& s = target.shape;
    if (vectors.size() != s.order()) throw ShapeError("outer_accumulate: wrong number of vectors");
    for (Index k = 0; k < s.order(); ++k)
        if (vectors[k].size() != s[k])
            throw ShapeError("outer_accumulate: vector " + std::to_string(k) + " has length " +
                             std::to_string(vectors[k].size()) + ", expected " +
                             std::to_string(s[k]));
    if (scale == 0.0) return;
    // Grow the partial outer product one mode at a time.
    std::vector<double> acc{scale};
    for (Index k = 0; k < s.order(); ++k) {
        std::vector<double> next(acc.size() * s[k]);
        for (Index p = 0; p < acc.size(); ++p)
            for (Index i = 0; i < s[k]; ++i) next[p * s[k] + i] = acc[p] * vectors[k][i];
        acc = std::move(next);
    }
    for (Index p = 0; p < acc.size(); ++p) target.values[p] += acc[p];
}

inline DenseTensor reshape_vector(std::span<const double> v, const Shape& dims) {
    if (v.size() != dims.size())
        throw ShapeError("reshape_vector: length " + std::to_string(v.size()) +
                         " does not match " + dims.str());
    return DenseTensor(dims, std::vector<double>(v.begin(), v.end()));
}

inline std::vector<double> flatten(const DenseTensor& t) { return t.values; }

}  // namespace tcrnn
