#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "tdmix/common.hpp"
#include "tdmix/rng.hpp"

namespace tdmix {

/**
 * Dense row-major array of 64-bit floats. Value type: copy is deep, moves are
 * cheap. Every constructor rejects non-finite data, so a Tensor in hand is
 * always finite.
 */
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape (expects " + std::to_string(count(shape_)) + ")");
        check_finite();
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        if (!std::isfinite(v)) throw NumericError("full: non-finite fill value");
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return full({}, v); }

    static Tensor random_uniform(std::vector<std::size_t> shape, rng::Stream& rs,
                                 double lo, double hi) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = rs.uniform(lo, hi);
        return t;
    }

    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    const std::vector<std::size_t>& shape() const { return shape_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (row-major).
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // 3-D accessors, used for H x W x C images.
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size()) throw ShapeError("reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void check_finite() const {
        if (!all_finite()) throw NumericError("tensor holds non-finite values");
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "x" : "") + std::to_string(shape_[i]);
        return s + "]";
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {
inline void require_matrix(const Tensor& t, const char* who) {
    if (t.rank() != 2) throw ShapeError(std::string(who) + ": expected a matrix, got " + t.shape_str());
}
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
} // namespace detail

/// Standard matrix product, m x k times k x n.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + a.shape_str() + " vs " + b.shape_str());
    Tensor c({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();
    // i-k-j order keeps the b row hot in cache.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    c.check_finite();
    return c;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] += b[i];
    c.check_finite();
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
    c.check_finite();
    return c;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] *= c;
    r.check_finite();
    return r;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "hadamard");
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] *= b[i];
    c.check_finite();
    return c;
}

inline Tensor relu(const Tensor& a) {
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] = c[i] > 0.0 ? c[i] : 0.0;
    return c;
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    return s;
}

/// Row-wise softmax with max-subtraction. Rank-1 input is treated as one row.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 1 && x.rank() != 2)
        throw ShapeError("softmax_rows: expected vector or matrix, got " + x.shape_str());
    const std::size_t rows = x.rank() == 2 ? x.extent(0) : 1;
    const std::size_t cols = x.rank() == 2 ? x.extent(1) : x.extent(0);
    Tensor y = x;
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = y.data().data() + i * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < cols; ++j) row[j] /= s;
    }
    return y;
}

/// Mean over rows: N x d -> d.
inline Tensor mean_rows(const Tensor& x) {
    detail::require_matrix(x, "mean_rows");
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor m({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m[j] += x.at(i, j);
    for (std::size_t j = 0; j < d; ++j) m[j] /= static_cast<double>(n);
    return m;
}

namespace detail {
inline std::size_t flat_vector_len(const Tensor& t, const char* who) {
    if (t.rank() == 1) return t.extent(0);
    if (t.rank() == 2 && t.extent(0) == 1) return t.extent(1);
    throw ShapeError(std::string(who) + ": expected a vector, got " + t.shape_str());
}
} // namespace detail

/// log(sum(exp(x))) over a vector, max-shifted.
inline double log_sum_exp(const Tensor& x) {
    const std::size_t n = detail::flat_vector_len(x, "log_sum_exp");
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    return mx + std::log(s);
}

/**
 * Cross entropy of a soft target against logits, fused with log-softmax:
 *   CE = logsumexp(logits) - target . logits     (target sums to 1)
 * Target must be entrywise >= 0 and sum to 1.
 */
inline double cross_entropy(const Tensor& logits, const Tensor& target) {
    const std::size_t n = detail::flat_vector_len(logits, "cross_entropy");
    if (detail::flat_vector_len(target, "cross_entropy") != n)
        throw ShapeError("cross_entropy: logits " + logits.shape_str() + " vs target " +
                         target.shape_str());
    double tsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (target[i] < 0.0) throw ContractError("cross_entropy: negative target entry");
        tsum += target[i];
    }
    if (std::abs(tsum - 1.0) > 1e-9)
        throw ContractError("cross_entropy: target sums to " + std::to_string(tsum) + ", not 1");
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += target[i] * logits[i];
    return log_sum_exp(logits) - dot;
}

/// Mean absolute elementwise difference.
inline double l1_distance(const Tensor& p, const Tensor& q) {
    detail::require_same_shape(p, q, "l1_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) s += std::abs(p[i] - q[i]);
    return s / static_cast<double>(p.numel());
}

/// Columns [c0, c1) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    detail::require_matrix(a, "slice_cols");
    if (c0 >= c1 || c1 > a.extent(1)) throw ShapeError("slice_cols: bad column range");
    const std::size_t m = a.extent(0), w = c1 - c0;
    Tensor r({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) r.at(i, j) = a.at(i, c0 + j);
    return r;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = parts[0].extent(0);
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.extent(0) != m) throw ShapeError("concat_cols: row count mismatch");
        n += p.extent(1);
    }
    Tensor r({m, n});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.extent(1); ++j) r.at(i, off + j) = p.at(i, j);
        off += p.extent(1);
    }
    return r;
}

/// Euclidean norm of each row: N x d -> N.
inline Tensor row_norms(const Tensor& x) {
    detail::require_matrix(x, "row_norms");
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor r({n});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x.at(i, j) * x.at(i, j);
        r[i] = std::sqrt(s);
    }
    return r;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace tdmix
