#pragma once

#include <cstddef>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

/**
 * Full provenance of one mix: the sampled window, both window centers (patch
 * units), and the three mixing ratios. Windows are centered at (i - floor(h/2),
 * j - floor(w/2)) top-left and always lie fully inside the grid.
 */
struct MixPlan {
    double delta = 0.0;
    std::size_t h = 0, w = 0;
    std::size_t i_s = 0, j_s = 0;  // source center (max-attention window)
    std::size_t i_t = 0, j_t = 0;  // target center (min-attention window)
    double lambda_r = 0.0, lambda_a = 0.0, lambda = 0.0;

    /// One-line tab-separated record for experiment logs.
    std::string to_record() const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%.17g\t%zu\t%zu\t%zu\t%zu\t%zu\t%zu\t%.17g\t%.17g\t%.17g",
                      delta, h, w, i_s, j_s, i_t, j_t, lambda_r, lambda_a, lambda);
        return buf;
    }

    static MixPlan from_record(const std::string& line) {
        MixPlan p;
        std::istringstream is(line);
        if (!(is >> p.delta >> p.h >> p.w >> p.i_s >> p.j_s >> p.i_t >> p.j_t >> p.lambda_r >>
              p.lambda_a >> p.lambda))
            throw ParseError("malformed mix plan record", 0);
        return p;
    }
};

/// Binary patch-grid mask; ones form one h x w rectangle.
struct PatchMask {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> m;

    PatchMask() = default;
    PatchMask(std::size_t r, std::size_t c) : rows(r), cols(c), m(r * c, 0) {}

    std::uint8_t at(std::size_t i, std::size_t j) const { return m[i * cols + j]; }
    std::uint8_t& at(std::size_t i, std::size_t j) { return m[i * cols + j]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (std::uint8_t v : m) n += v;
        return n;
    }
};

struct WindowSample {
    double delta;
    std::size_t h, w;
};

/**
 * Draw delta ~ Uniform(0.25, 0.75) and derive the window extents
 * h = floor(delta H/P), w = floor(delta W/P), clamped to >= 1. One shared
 * draw covers both axes.
 */
inline WindowSample sample_window(rng::Stream& rs, std::size_t H, std::size_t W, std::size_t P) {
    if (P == 0 || H % P != 0 || W % P != 0)
        throw ConfigError("sample_window: patch size must divide image dims");
    WindowSample s;
    s.delta = rs.uniform(0.25, 0.75);
    s.h = static_cast<std::size_t>(s.delta * static_cast<double>(H / P));
    s.w = static_cast<std::size_t>(s.delta * static_cast<double>(W / P));
    if (s.h == 0) s.h = 1;
    if (s.w == 0) s.w = 1;
    return s;
}

/// Summed-area table over an attention grid; O(1) rectangle sums.
class IntegralGrid {
public:
    explicit IntegralGrid(const AttentionGrid& g) : rows_(g.rows()), cols_(g.cols()),
                                                    s_((rows_ + 1) * (cols_ + 1), 0.0) {
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                at(i + 1, j + 1) = g.at(i, j) + at(i, j + 1) + at(i + 1, j) - at(i, j);
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    /// Inclusive prefix sum over rows <= i, cols <= j (grid indices).
    double prefix(std::size_t i, std::size_t j) const { return at(i + 1, j + 1); }

    /// Sum of the h x w window whose top-left grid cell is (ti, tj).
    double window_sum(std::size_t ti, std::size_t tj, std::size_t h, std::size_t w) const {
        if (ti + h > rows_ || tj + w > cols_)
            throw ContractError("integral grid: window out of bounds");
        return at(ti + h, tj + w) - at(ti, tj + w) - at(ti + h, tj) + at(ti, tj);
    }

private:
    double at(std::size_t i, std::size_t j) const { return s_[i * (cols_ + 1) + j]; }
    double& at(std::size_t i, std::size_t j) { return s_[i * (cols_ + 1) + j]; }

    std::size_t rows_, cols_;
    std::vector<double> s_;
};

namespace detail {

/// Valid center range so the window stays inside: i in [h/2, rows - h + h/2].
inline std::pair<std::size_t, std::size_t> center_range(std::size_t extent, std::size_t win) {
    const std::size_t lo = win / 2;
    return {lo, extent - win + lo};
}

/// Row-major direct sum. Tied windows with identical contents produce
/// bit-equal sums, so the first-winner tie-break below is exact.
inline double window_sum_direct(const AttentionGrid& g, std::size_t ti, std::size_t tj,
                                std::size_t h, std::size_t w) {
    double s = 0.0;
    for (std::size_t p = 0; p < h; ++p)
        for (std::size_t q = 0; q < w; ++q) s += g.at(ti + p, tj + q);
    return s;
}

template <bool Max>
inline std::pair<std::size_t, std::size_t> select_center(const AttentionGrid& g, std::size_t h,
                                                         std::size_t w) {
    if (h == 0 || w == 0) throw ContractError("select_center: empty window");
    if (h > g.rows() || w > g.cols())
        throw ContractError("select_center: window " + std::to_string(h) + "x" +
                            std::to_string(w) + " larger than grid");
    const auto [ilo, ihi] = center_range(g.rows(), h);
    const auto [jlo, jhi] = center_range(g.cols(), w);
    std::size_t bi = ilo, bj = jlo;
    double best = window_sum_direct(g, ilo - h / 2, jlo - w / 2, h, w);
    for (std::size_t i = ilo; i <= ihi; ++i)
        for (std::size_t j = jlo; j <= jhi; ++j) {
            const double v = window_sum_direct(g, i - h / 2, j - w / 2, h, w);
            const bool better = Max ? (v > best) : (v < best);
            if (better) {
                best = v;
                bi = i;
                bj = j;
            }
        }
    return {bi, bj};
}

} // namespace detail

/// Center of the h x w window with the largest attention sum; row-major first
/// winner on ties.
inline std::pair<std::size_t, std::size_t> select_max_center(const AttentionGrid& g, std::size_t h,
                                                             std::size_t w) {
    return detail::select_center<true>(g, h, w);
}

/// Center of the h x w window with the smallest attention sum; same tie-break.
inline std::pair<std::size_t, std::size_t> select_min_center(const AttentionGrid& g, std::size_t h,
                                                             std::size_t w) {
    return detail::select_center<false>(g, h, w);
}

struct PasteResult {
    Tensor mixed;    // x_M
    PatchMask mask;  // target-window patches set to 1
};

/**
 * Copy of x_B with the source window of x_A pasted over the target window,
 * patch-aligned. The mask marks the target window at patch granularity.
 */
inline PasteResult paste(const Tensor& x_a, const Tensor& x_b, const MixPlan& plan, std::size_t P) {
    if (x_a.rank() != 3 || !x_a.same_shape(x_b))
        throw ShapeError("paste: images must share H x W x C shape");
    const std::size_t H = x_a.extent(0), W = x_a.extent(1), C = x_a.extent(2);
    if (P == 0 || H % P != 0 || W % P != 0) throw ConfigError("paste: patch size must divide dims");
    const std::size_t gr = H / P, gc = W / P;
    const std::size_t src_i = plan.i_s - plan.h / 2, src_j = plan.j_s - plan.w / 2;
    const std::size_t tgt_i = plan.i_t - plan.h / 2, tgt_j = plan.j_t - plan.w / 2;
    if (plan.i_s < plan.h / 2 || plan.j_s < plan.w / 2 || plan.i_t < plan.h / 2 ||
        plan.j_t < plan.w / 2 || src_i + plan.h > gr || src_j + plan.w > gc ||
        tgt_i + plan.h > gr || tgt_j + plan.w > gc)
        throw ContractError("paste: window out of bounds");

    PasteResult res;
    res.mixed = x_b;
    res.mask = PatchMask(gr, gc);
    for (std::size_t p = 0; p < plan.h; ++p)
        for (std::size_t q = 0; q < plan.w; ++q) {
            res.mask.at(tgt_i + p, tgt_j + q) = 1;
            const std::size_t sr = (src_i + p) * P, sc = (src_j + q) * P;
            const std::size_t tr = (tgt_i + p) * P, tc = (tgt_j + q) * P;
            for (std::size_t r = 0; r < P; ++r)
                for (std::size_t c = 0; c < P; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        res.mixed.at(tr + r, tc + c, ch) = x_a.at(sr + r, sc + c, ch);
        }
    return res;
}

} // namespace tdmix
