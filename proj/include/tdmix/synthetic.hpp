#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/label_mix.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

/**
 * Desk-scale stand-in for a labeled image dataset. Each image holds one
 * class glyph (shape x color) at a random position over a cluttered
 * background with high-contrast distractor blobs, plus the binary mask of
 * the glyph. The mask doubles as synthetic gaze ground truth.
 */
struct SyntheticDataset {
    std::size_t H = 0, W = 0, C = 3, n_cls = 0;
    std::vector<Tensor> images;                      // H x W x C in [0,1]
    std::vector<std::size_t> labels;                 // class index per record
    std::vector<std::vector<std::uint8_t>> masks;    // H*W, 1 on object pixels
    std::vector<std::size_t> train_idx, val_idx;     // deterministic split

    std::size_t size() const { return images.size(); }
    ProbVector one_hot(std::size_t i) const { return ProbVector::one_hot(labels[i], n_cls); }
    std::uint8_t mask_at(std::size_t i, std::size_t r, std::size_t c) const {
        return masks[i][r * W + c];
    }
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = std::fmod(h, 360.0) / 60.0;
    const int k = static_cast<int>(h);
    const double f = h - k;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (k % 6) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

/// Is (r,c) inside glyph `shape` of half-size R centered at (cy,cx)?
inline bool glyph_hit(std::size_t shape, double r, double c, double cy, double cx, double R) {
    const double dy = r - cy, dx = c - cx;
    const double ay = std::abs(dy), ax = std::abs(dx);
    switch (shape % 8) {
        case 0:  // disk
            return dy * dy + dx * dx <= R * R;
        case 1:  // square
            return ay <= R && ax <= R;
        case 2:  // triangle, apex up
            return dy >= -R && dy <= R && ax <= (dy + R) * 0.5;
        case 3: {  // ring
            const double d2 = dy * dy + dx * dx;
            return d2 <= R * R && d2 >= 0.45 * 0.45 * R * R;
        }
        case 4:  // cross
            return (ay <= R && ax <= 0.34 * R) || (ax <= R && ay <= 0.34 * R);
        case 5:  // diamond
            return ay + ax <= R;
        case 6:  // checker square
            return ay <= R && ax <= R &&
                   ((static_cast<int>(std::floor((dy + R) / (0.5 * R))) +
                     static_cast<int>(std::floor((dx + R) / (0.5 * R)))) % 2 == 0);
        default:  // horizontal stripes
            return ay <= R && ax <= R && static_cast<int>(std::floor((dy + R) / (0.4 * R))) % 2 == 0;
    }
}

} // namespace detail

inline void assign_split(SyntheticDataset& ds);

/**
 * Deterministic synthetic set: n_cls glyph classes, n_per_class images each,
 * generated class-major. Distractor blobs are deliberately high-contrast so
 * purely stimulus-driven saliency has something irrelevant to latch onto.
 */
inline SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_per_class,
                                                   std::size_t n_cls, std::size_t H,
                                                   std::size_t W) {
    if (n_cls < 2) throw ContractError("generate_synthetic_dataset: need at least 2 classes");
    if (n_per_class == 0) throw ContractError("generate_synthetic_dataset: empty classes");
    if (H < 16 || W < 16) throw ContractError("generate_synthetic_dataset: image too small");

    SyntheticDataset ds;
    ds.H = H;
    ds.W = W;
    ds.C = 3;
    ds.n_cls = n_cls;

    for (std::size_t cls = 0; cls < n_cls; ++cls) {
        double fg[3];
        detail::hsv_to_rgb(static_cast<double>(cls) * 360.0 / static_cast<double>(n_cls), 0.85,
                           0.95, fg);
        for (std::size_t rep = 0; rep < n_per_class; ++rep) {
            rng::Stream rs(rng::derive(seed, cls * 1000003ULL + rep));
            Tensor img({H, W, 3});
            std::vector<std::uint8_t> mask(H * W, 0);

            // background: tinted base + two low-frequency gratings + pixel noise
            double base[3];
            for (double& b : base) b = 0.40 + rs.uniform(0.0, 0.12);
            double gf[4], gp[2];
            for (double& f : gf) f = rs.uniform(0.3, 1.8);
            for (double& p : gp) p = rs.uniform(0.0, 6.28318530717958648);
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c) {
                    const double x = static_cast<double>(c) / static_cast<double>(W);
                    const double y = static_cast<double>(r) / static_cast<double>(H);
                    const double g = 0.05 * std::cos(6.2831853 * (gf[0] * x + gf[1] * y) + gp[0]) +
                                     0.05 * std::cos(6.2831853 * (gf[2] * x + gf[3] * y) + gp[1]);
                    const double n = rs.uniform(-0.02, 0.02);
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        img.at(r, c, ch) = std::clamp(base[ch] + g + n, 0.0, 1.0);
                }

            // distractor stones: small, high contrast, label-irrelevant
            const std::size_t n_stones = 1 + rs.uniform_int(3);
            for (std::size_t s = 0; s < n_stones; ++s) {
                const double ry = rs.uniform(3.0, static_cast<double>(H) - 3.0);
                const double rx = rs.uniform(3.0, static_cast<double>(W) - 3.0);
                const double rad = rs.uniform(1.5, 3.2);
                const double ecc = rs.uniform(0.6, 1.0);
                const double shade = rs.uniform() < 0.7 ? rs.uniform(0.02, 0.12)
                                                        : rs.uniform(0.88, 0.98);
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t c = 0; c < W; ++c) {
                        const double dy = (static_cast<double>(r) - ry) / rad;
                        const double dx = (static_cast<double>(c) - rx) / (rad * ecc);
                        if (dy * dy + dx * dx <= 1.0) {
                            const double v = std::clamp(shade + rs.uniform(-0.03, 0.03), 0.0, 1.0);
                            for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = v;
                        }
                    }
            }

            // class glyph over everything else; its support is the mask
            const double R = (0.19 + rs.uniform(0.0, 0.09)) * static_cast<double>(std::min(H, W));
            const double cy = rs.uniform(R + 1.0, static_cast<double>(H) - R - 1.0);
            const double cx = rs.uniform(R + 1.0, static_cast<double>(W) - R - 1.0);
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    if (detail::glyph_hit(cls, static_cast<double>(r), static_cast<double>(c), cy,
                                          cx, R)) {
                        const double j = rs.uniform(-0.05, 0.05);
                        for (std::size_t ch = 0; ch < 3; ++ch)
                            img.at(r, c, ch) = std::clamp(fg[ch] + j, 0.0, 1.0);
                        mask[r * W + c] = 1;
                    }

            ds.images.push_back(std::move(img));
            ds.labels.push_back(cls);
            ds.masks.push_back(std::move(mask));
        }
    }
    assign_split(ds);
    return ds;
}

/**
 * Recompute the train/val split from the record order alone: within each
 * class, the last fifth of its records (at least one when the class has two
 * or more) goes to validation. Loading a dataset file reproduces the same
 * split.
 */
inline void assign_split(SyntheticDataset& ds) {
    ds.train_idx.clear();
    ds.val_idx.clear();
    std::vector<std::size_t> per_class(ds.n_cls, 0), seen(ds.n_cls, 0);
    for (std::size_t l : ds.labels) ++per_class.at(l);
    std::vector<std::size_t> val_count(ds.n_cls, 0);
    for (std::size_t c = 0; c < ds.n_cls; ++c) {
        const std::size_t n = per_class[c];
        val_count[c] = n >= 5 ? n / 5 : (n >= 2 ? 1 : 0);
    }
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        const std::size_t c = ds.labels[i];
        if (seen[c]++ >= per_class[c] - val_count[c])
            ds.val_idx.push_back(i);
        else
            ds.train_idx.push_back(i);
    }
}

/**
 * Patch-grid gaze stand-in: the object mask pooled to (H/P) x (W/P) and
 * normalized to sum 1.
 */
inline AttentionGrid gaze_from_mask(const SyntheticDataset& ds, std::size_t i, std::size_t P) {
    if (P == 0 || ds.H % P != 0 || ds.W % P != 0)
        throw ConfigError("gaze_from_mask: patch must divide image dims");
    const std::size_t gr = ds.H / P, gc = ds.W / P;
    Tensor raw({gr, gc});
    const std::vector<std::uint8_t>& m = ds.masks.at(i);
    for (std::size_t r = 0; r < ds.H; ++r)
        for (std::size_t c = 0; c < ds.W; ++c)
            if (m[r * ds.W + c]) raw.at(r / P, c / P) += 1.0;
    return AttentionGrid::normalized(gr, gc, raw);
}

} // namespace tdmix
