#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/region_mix.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

/// Per-class probability vector; entries >= 0, sum 1 within 1e-12.
class ProbVector {
public:
    explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {
        double s = 0.0;
        for (double x : p_) {
            if (!(x >= 0.0)) throw ContractError("prob vector: negative or non-finite entry");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw ContractError("prob vector: sums to " + std::to_string(s) + ", not 1");
    }

    static ProbVector one_hot(std::size_t cls, std::size_t n) {
        if (cls >= n) throw ContractError("one_hot: class out of range");
        std::vector<double> p(n, 0.0);
        p[cls] = 1.0;
        return ProbVector(std::move(p));
    }

    static ProbVector uniform(std::size_t n) {
        return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
    }

    std::size_t size() const { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    const std::vector<double>& data() const { return p_; }
    Tensor tensor() const { return Tensor({p_.size()}, p_); }

private:
    std::vector<double> p_;
};

namespace detail {
inline void require_unit(double x, const char* name) {
    if (!(x >= -1e-12 && x <= 1.0 + 1e-12))
        throw ContractError(std::string(name) + " = " + std::to_string(x) + " outside [0,1]");
}
} // namespace detail

/// Area ratio of the pasted window: h w P^2 / (H W).
inline double area_ratio(std::size_t h, std::size_t w, std::size_t P, std::size_t H,
                         std::size_t W) {
    if (h * P > H || w * P > W) throw ContractError("area_ratio: window larger than image");
    return static_cast<double>(h * w * P * P) / static_cast<double>(H * W);
}

/**
 * Attention ratio of the source image in the mix:
 *   Att_A = source-window sum of alpha_A,
 *   Att_B = total alpha_B minus target-window sum of alpha_B,
 *   lambda_a = Att_A / (Att_A + Att_B).
 * Window sums come from summed-area tables.
 */
inline double attention_ratio(const AttentionGrid& alpha_a, const AttentionGrid& alpha_b,
                              const MixPlan& plan) {
    const IntegralGrid sa(alpha_a);
    const IntegralGrid sb(alpha_b);
    const std::size_t src_i = plan.i_s - plan.h / 2, src_j = plan.j_s - plan.w / 2;
    const std::size_t tgt_i = plan.i_t - plan.h / 2, tgt_j = plan.j_t - plan.w / 2;
    const double att_a = std::max(0.0, sa.window_sum(src_i, src_j, plan.h, plan.w));
    const double total_b = sb.prefix(alpha_b.rows() - 1, alpha_b.cols() - 1);
    const double att_b = std::max(0.0, total_b - sb.window_sum(tgt_i, tgt_j, plan.h, plan.w));
    const double denom = att_a + att_b;
    if (denom <= 0.0) throw ContractError("attention_ratio: degenerate, Att_A + Att_B = 0");
    return att_a / denom;
}

/// Final mixing ratio: the beta-weighted blend of area and attention ratios.
inline double mix_ratio(double lambda_r, double lambda_a, double beta) {
    detail::require_unit(lambda_r, "lambda_r");
    detail::require_unit(lambda_a, "lambda_a");
    detail::require_unit(beta, "beta");
    return beta * lambda_r + (1.0 - beta) * lambda_a;
}

/// y_M = lambda y_A + (1 - lambda) y_B.
inline ProbVector mix_labels(const ProbVector& y_a, const ProbVector& y_b, double lambda) {
    detail::require_unit(lambda, "lambda");
    lambda = std::min(1.0, std::max(0.0, lambda));  // shave round-off slack
    if (y_a.size() != y_b.size()) throw ShapeError("mix_labels: class counts differ");
    std::vector<double> m(y_a.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = lambda * y_a[i] + (1.0 - lambda) * y_b[i];
    return ProbVector(std::move(m));
}

} // namespace tdmix
