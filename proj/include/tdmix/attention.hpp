#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tdmix/common.hpp"
#include "tdmix/tensor.hpp"
#include "tdmix/vit.hpp"

namespace tdmix {

/**
 * Normalized per-patch importance map on the (H/P) x (W/P) grid.
 * Entries are non-negative and sum to 1 (within 1e-9, checked).
 */
class AttentionGrid {
public:
    AttentionGrid(std::size_t rows, std::size_t cols, Tensor grid)
        : rows_(rows), cols_(cols), grid_(std::move(grid)) {
        if (grid_.rank() != 2 || grid_.extent(0) != rows_ || grid_.extent(1) != cols_)
            throw ShapeError("attention grid: tensor " + grid_.shape_str() + " does not match " +
                             std::to_string(rows_) + "x" + std::to_string(cols_));
        double s = 0.0;
        for (std::size_t i = 0; i < grid_.numel(); ++i) {
            if (grid_[i] < 0.0) throw ContractError("attention grid: negative entry");
            s += grid_[i];
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw ContractError("attention grid: sums to " + std::to_string(s) + ", not 1");
    }

    /// Normalize non-negative raw scores to sum 1. An all-zero input becomes
    /// the uniform grid.
    static AttentionGrid normalized(std::size_t rows, std::size_t cols, const Tensor& raw) {
        if (raw.numel() != rows * cols)
            throw ShapeError("attention grid: raw scores do not match grid dims");
        double s = 0.0;
        for (std::size_t i = 0; i < raw.numel(); ++i) {
            if (raw[i] < 0.0) throw ContractError("attention grid: negative raw score");
            s += raw[i];
        }
        Tensor g({rows, cols});
        if (s <= 0.0) {
            const double u = 1.0 / static_cast<double>(rows * cols);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = u;
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = raw[i] / s;
        }
        return AttentionGrid(rows, cols, std::move(g));
    }

    static AttentionGrid uniform(std::size_t rows, std::size_t cols) {
        return normalized(rows, cols, Tensor::full({rows, cols}, 1.0));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double at(std::size_t i, std::size_t j) const { return grid_.at(i, j); }
    const Tensor& tensor() const { return grid_; }

private:
    std::size_t rows_, cols_;
    Tensor grid_;
};

/// Scale of the top-down signal. Zero reproduces pure bottom-up attention.
struct BalanceFactor {
    double sigma;
    explicit BalanceFactor(double s) : sigma(s) {
        if (!(s >= 0.0)) throw ContractError("balance factor must be >= 0");
    }
};

/**
 * Label-conditioned signal injected into V: the per-token scalar t.w_td,
 * replicated across the feature dimension and scaled by sigma.
 */
inline Tensor top_down_signal(const Tensor& t, const Tensor& w_td, BalanceFactor sigma) {
    detail::require_matrix(t, "top_down_signal");
    if (w_td.rank() != 2 || w_td.extent(1) != 1 || w_td.extent(0) != t.extent(1))
        throw ShapeError("top_down_signal: w_td " + w_td.shape_str() + " does not conform to t " +
                         t.shape_str());
    const Tensor s = matmul(t, w_td);  // N x 1
    const std::size_t n = t.extent(0), d = t.extent(1);
    Tensor v_td({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double x = sigma.sigma * s.at(i, 0);
        for (std::size_t j = 0; j < d; ++j) v_td.at(i, j) = x;
    }
    return v_td;
}

struct AttentionResult {
    Tensor outputs;  // N x d attention outputs, heads concatenated
    Tensor weights;  // N x N attention matrix, head-averaged
};

namespace detail {
inline AttentionResult attention_body(const Tensor& Q, const Tensor& K, const Tensor& V,
                                      const Tensor* v_td, std::size_t heads) {
    require_matrix(Q, "attention");
    require_same_shape(Q, K, "attention");
    require_same_shape(Q, V, "attention");
    const std::size_t n = Q.extent(0), d = Q.extent(1);
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: heads must divide dim");
    Tensor v_sum = v_td ? add(V, *v_td) : V;
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor a_avg({n, n});
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(K, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v_sum, h * dh, (h + 1) * dh);
        Tensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        outs.push_back(matmul(a, vh));
        for (std::size_t i = 0; i < a.numel(); ++i) a_avg[i] += a[i];
    }
    if (heads > 1)
        for (std::size_t i = 0; i < a_avg.numel(); ++i) a_avg[i] /= static_cast<double>(heads);
    return {heads == 1 ? std::move(outs[0]) : concat_cols(outs), std::move(a_avg)};
}
} // namespace detail

/**
 * Attention with the top-down signal added to V. Returns the outputs
 * A.(V + V_td) and the head-averaged weight matrix A = softmax(QK^T/sqrt(d)).
 */
inline AttentionResult task_adaptive_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                                               const Tensor& v_td, std::size_t heads = 1) {
    detail::require_same_shape(Q, v_td, "task_adaptive_attention");
    return detail::attention_body(Q, K, V, &v_td, heads);
}

/// Plain attention, no injected signal. The sigma = 0 reference path.
inline AttentionResult bottom_up_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                                           std::size_t heads = 1) {
    return detail::attention_body(Q, K, V, nullptr, heads);
}

/// Token -> scalar reduction used to collapse attention to a per-patch score.
enum class GridReduction {
    ReceivedTimesNorm,  // (column sum of A) x (L2 norm of the output row); default
    ColumnSum,          // column sum of A only (ignores V, so sigma has no effect)
    OutputNorm,         // L2 norm of the output row only
};

inline const char* to_string(GridReduction r) {
    switch (r) {
        case GridReduction::ReceivedTimesNorm: return "received-x-norm";
        case GridReduction::ColumnSum: return "column-sum";
        case GridReduction::OutputNorm: return "output-norm";
    }
    return "?";
}

/**
 * Collapse attention weights and outputs to the normalized per-patch grid.
 * Token i's raw score under the default reduction is the total attention it
 * receives (column sum of A) times the L2 norm of its output row; the output
 * factor is what lets the injected V_td move the grid.
 */
inline AttentionGrid attention_grid(const Tensor& A, const Tensor& outputs, std::size_t rows,
                                    std::size_t cols,
                                    GridReduction reduction = GridReduction::ReceivedTimesNorm) {
    detail::require_matrix(A, "attention_grid");
    const std::size_t n = A.extent(0);
    if (A.extent(1) != n) throw ShapeError("attention_grid: A must be square");
    if (n != rows * cols)
        throw ShapeError("attention_grid: " + std::to_string(n) + " tokens vs " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    Tensor score({n});
    if (reduction != GridReduction::OutputNorm) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += A.at(i, j);
            score[j] = s;
        }
    } else {
        for (std::size_t j = 0; j < n; ++j) score[j] = 1.0;
    }
    if (reduction != GridReduction::ColumnSum) {
        const Tensor norms = row_norms(outputs);
        for (std::size_t j = 0; j < n; ++j) score[j] *= norms[j];
    }
    return AttentionGrid::normalized(rows, cols, score);
}

/// Per-image attention settings at mixing time.
struct MixAttention {
    BalanceFactor sigma{1.0};
    GridReduction reduction = GridReduction::ReceivedTimesNorm;
};

/**
 * Full pipeline for one image: plain forward on a frozen model, top-down
 * signal from the classifier column of `label`, task adaptive attention on
 * the final block, reduction to the patch grid.
 */
inline AttentionGrid image_attention_grid(const VitModel& m, const Tensor& image, std::size_t label,
                                          const MixAttention& att) {
    const VitForwardPlain fwd = vit_forward(m, image);
    const auto& blk = fwd.blocks.back();
    const Tensor v_td = top_down_signal(fwd.tokens, classifier_column(m, label), att.sigma);
    const AttentionResult r = task_adaptive_attention(blk.q, blk.k, blk.v, v_td, m.cfg.heads);
    return attention_grid(r.weights, r.outputs, m.cfg.grid_rows(), m.cfg.grid_cols(), att.reduction);
}

/// Same pipeline with no top-down signal at all (never touches w_cls).
inline AttentionGrid bottom_up_grid(const VitModel& m, const Tensor& image,
                                    GridReduction reduction = GridReduction::ReceivedTimesNorm) {
    const VitForwardPlain fwd = vit_forward(m, image);
    const auto& blk = fwd.blocks.back();
    const AttentionResult r = bottom_up_attention(blk.q, blk.k, blk.v, m.cfg.heads);
    return attention_grid(r.weights, r.outputs, m.cfg.grid_rows(), m.cfg.grid_cols(), reduction);
}

/// Plain-text export: one line per grid row, space-separated decimal floats.
inline void write_grid_text(const AttentionGrid& g, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open grid file for writing: " + path);
    char buf[40];
    for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", g.at(i, j));
            os << (j ? " " : "") << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

} // namespace tdmix
