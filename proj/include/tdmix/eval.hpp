#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tdmix/common.hpp"
#include "tdmix/formats.hpp"
#include "tdmix/mixers.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/synthetic.hpp"
#include "tdmix/train.hpp"
#include "tdmix/vit.hpp"

namespace tdmix {

/// Indices of v sorted by value descending, index ascending on ties.
inline std::vector<std::size_t> argsort_desc(const Tensor& v) {
    std::vector<std::size_t> idx(v.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
}

struct MixedEvalResult {
    double top1 = 0.0;  // argmax lands in {y_A, y_B}
    double top2 = 0.0;  // top-2 set recovers {y_A, y_B} exactly
    std::size_t pairs = 0;
};

/**
 * Accuracy on freshly mixed validation pairs. A pair draws its own stream
 * from (seed, pair index), so the pair list and all mixer draws are
 * reproducible and independent of evaluation order.
 */
inline MixedEvalResult eval_mixed_accuracy(const VitModel& m, const SyntheticDataset& ds,
                                           const MixerConfig& cfg, std::size_t n_pairs,
                                           std::uint64_t seed) {
    if (cfg.kind == MixerKind::None) throw ConfigError("eval-mixed: mixer 'none' mixes nothing");
    if (ds.val_idx.size() < 2) throw ContractError("eval-mixed: need at least 2 val records");
    MixedEvalResult res;
    res.pairs = n_pairs;
    std::size_t hit1 = 0, hit2 = 0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        rng::Stream rs(rng::derive(seed, 0xE000 + p));
        const std::size_t a = ds.val_idx[rs.uniform_int(ds.val_idx.size())];
        std::size_t b = a;
        while (b == a) b = ds.val_idx[rs.uniform_int(ds.val_idx.size())];
        const MixedSample s =
            mix_pair(m, ds.images[a], ds.labels[a], ds.images[b], ds.labels[b], cfg, rs);
        const Tensor logits = vit_forward(m, s.image).logits;
        const std::vector<std::size_t> order = argsort_desc(logits);
        const std::size_t y_a = ds.labels[a], y_b = ds.labels[b];
        if (order[0] == y_a || order[0] == y_b) ++hit1;
        if (y_a == y_b) {
            if (order[0] == y_a) ++hit2;
        } else {
            const std::size_t lo = std::min(order[0], order[1]), hi = std::max(order[0], order[1]);
            if (lo == std::min(y_a, y_b) && hi == std::max(y_a, y_b)) ++hit2;
        }
    }
    res.top1 = static_cast<double>(hit1) / static_cast<double>(n_pairs);
    res.top2 = static_cast<double>(hit2) / static_cast<double>(n_pairs);
    return res;
}

enum class OcclusionMode { Random, Salient, NonSalient };

inline const char* to_string(OcclusionMode m) {
    switch (m) {
        case OcclusionMode::Random: return "random";
        case OcclusionMode::Salient: return "salient";
        default: return "non-salient";
    }
}

inline OcclusionMode parse_occlusion_mode(const std::string& s) {
    if (s == "random") return OcclusionMode::Random;
    if (s == "salient") return OcclusionMode::Salient;
    if (s == "non-salient") return OcclusionMode::NonSalient;
    throw ConfigError("unknown occlusion mode '" + s + "' (random, salient, non-salient)");
}

struct OcclusionPoint {
    OcclusionMode mode;
    double ratio;
    double top1;
};

/**
 * Patch-drop robustness on the validation split. Per image, an ordering of
 * its patches is fixed once (random permutation, or bottom-up saliency
 * descending/ascending with row-major tie-break); for each drop ratio the
 * first round(ratio * N) patches are zeroed before the forward pass.
 */
inline std::vector<OcclusionPoint> eval_occlusion(const VitModel& m, const SyntheticDataset& ds,
                                                  OcclusionMode mode,
                                                  const std::vector<double>& ratios,
                                                  std::uint64_t seed) {
    if (ds.val_idx.empty()) throw ContractError("eval-occlusion: empty validation split");
    const std::size_t P = m.cfg.patch;
    const std::size_t gr = m.cfg.grid_rows(), gc = m.cfg.grid_cols(), N = gr * gc;
    for (double r : ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval-occlusion: ratio outside [0,1]");

    std::vector<std::vector<std::size_t>> order(ds.val_idx.size());
    for (std::size_t k = 0; k < ds.val_idx.size(); ++k) {
        const std::size_t i = ds.val_idx[k];
        if (mode == OcclusionMode::Random) {
            rng::Stream rs(rng::derive(seed, 0xF000 + i));
            order[k] = rs.permutation(N);
        } else {
            const AttentionGrid g = bottom_up_grid(m, ds.images[i]);
            order[k] = argsort_desc(g.tensor());
            if (mode == OcclusionMode::NonSalient) std::reverse(order[k].begin(), order[k].end());
        }
    }

    std::vector<OcclusionPoint> out;
    for (double ratio : ratios) {
        const std::size_t drop = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(N)));
        std::size_t hit = 0;
        for (std::size_t k = 0; k < ds.val_idx.size(); ++k) {
            const std::size_t i = ds.val_idx[k];
            Tensor img = ds.images[i];
            for (std::size_t d = 0; d < drop && d < N; ++d) {
                const std::size_t pr = order[k][d] / gc, pc = order[k][d] % gc;
                for (std::size_t r = 0; r < P; ++r)
                    for (std::size_t c = 0; c < P; ++c)
                        for (std::size_t ch = 0; ch < m.cfg.channels; ++ch)
                            img.at(pr * P + r, pc * P + c, ch) = 0.0;
            }
            if (argmax_index(vit_forward(m, img).logits) == ds.labels[i]) ++hit;
        }
        out.push_back({mode, ratio,
                       static_cast<double>(hit) / static_cast<double>(ds.val_idx.size())});
    }
    return out;
}

struct MixerUnderStudy {
    std::string name;
    MixerConfig cfg;
};

struct InconsistencyRow {
    std::string mixer;
    double mean_inconsistency = 0.0;
    std::size_t pairs = 0;
    std::size_t skipped = 0;
};

/**
 * Image-label inconsistency |lambda_gt - lambda| per mixer, where
 * lambda_gt re-blends the plan's area ratio with the attention ratio
 * computed from gaze grids (mask-derived unless a gaze directory overrides
 * them). All mixers see the same pair list, and per pair each mixer's
 * stream is seeded identically, so the shared leading delta draw matches.
 *
 * A pair is skipped for every mixer when a gaze grid is missing or when
 * some mixer's plan lands on zero gaze mass in both regions (sparse gaze
 * makes the attention ratio undefined there); mixers always average over
 * the same pair set.
 */
inline std::vector<InconsistencyRow> inconsistency_study(
    const VitModel& m, const SyntheticDataset& ds, const std::vector<MixerUnderStudy>& mixers,
    std::size_t n_pairs, std::uint64_t seed, double beta_gt,
    const std::optional<std::string>& gaze_dir) {
    if (ds.size() < 2) throw ContractError("inconsistency: need at least 2 records");
    const std::size_t P = m.cfg.patch;
    const std::size_t gr = m.cfg.grid_rows(), gc = m.cfg.grid_cols();

    // gaze grid per record: mask pooling, or the sidecar file when present
    std::vector<std::optional<AttentionGrid>> gaze(ds.size());
    std::vector<bool> gaze_missing(ds.size(), false);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (gaze_dir) {
            const std::string path = *gaze_dir + "/" + gaze_file_name(i);
            try {
                AttentionGrid g = read_gaze_grid(path);
                if (g.rows() != gr || g.cols() != gc)
                    throw ParseError("gaze grid shape does not match model grid", 0);
                gaze[i] = std::move(g);
            } catch (const IoError&) {
                gaze_missing[i] = true;
            }
        } else {
            gaze[i] = gaze_from_mask(ds, i, P);
        }
    }

    // guidance grids are pure in (mixer, image); cache them across pairs
    std::vector<std::vector<std::optional<AttentionGrid>>> cache(
        mixers.size(), std::vector<std::optional<AttentionGrid>>(ds.size()));
    const AttentionGrid uniform = AttentionGrid::uniform(gr, gc);
    auto grid_for = [&](std::size_t mi, std::size_t img) -> const AttentionGrid& {
        if (mixers[mi].cfg.kind == MixerKind::RandomCutmix) return uniform;
        auto& slot = cache[mi][img];
        if (!slot) slot = guidance_grid(m, ds.images[img], ds.labels[img], mixers[mi].cfg);
        return *slot;
    };

    std::vector<InconsistencyRow> rows;
    for (const MixerUnderStudy& mu : mixers) rows.push_back({mu.name, 0.0, 0, 0});

    for (std::size_t p = 0; p < n_pairs; ++p) {
        rng::Stream pick(rng::derive(seed, 0xB000 + p));
        const std::size_t a = pick.uniform_int(ds.size());
        std::size_t b = a;
        while (b == a) b = pick.uniform_int(ds.size());
        if (gaze_missing[a] || gaze_missing[b]) {
            for (auto& r : rows) ++r.skipped;
            continue;
        }
        std::vector<double> incons(mixers.size(), 0.0);
        bool degenerate = false;
        for (std::size_t mi = 0; mi < mixers.size() && !degenerate; ++mi) {
            rng::Stream mix_rs(rng::derive(seed, 0xC000 + p));
            const MixPlan plan = plan_mix(grid_for(mi, a), grid_for(mi, b), mixers[mi].cfg, ds.H,
                                          ds.W, P, mix_rs);
            try {
                const double lambda_a_gt = attention_ratio(*gaze[a], *gaze[b], plan);
                incons[mi] = std::abs(mix_ratio(plan.lambda_r, lambda_a_gt, beta_gt) - plan.lambda);
            } catch (const ContractError&) {
                degenerate = true;
            }
        }
        if (degenerate) {
            for (auto& r : rows) ++r.skipped;
            continue;
        }
        for (std::size_t mi = 0; mi < mixers.size(); ++mi) {
            rows[mi].mean_inconsistency += incons[mi];
            ++rows[mi].pairs;
        }
    }
    for (auto& r : rows)
        if (r.pairs) r.mean_inconsistency /= static_cast<double>(r.pairs);
    return rows;
}

} // namespace tdmix
