#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/label_mix.hpp"
#include "tdmix/region_mix.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/vit.hpp"

namespace tdmix {

enum class MixerKind { None, RandomCutmix, TdAttenMix };

inline const char* to_string(MixerKind k) {
    switch (k) {
        case MixerKind::None: return "none";
        case MixerKind::RandomCutmix: return "random-cutmix";
        default: return "tdattenmix";
    }
}

inline MixerKind parse_mixer(const std::string& s) {
    if (s == "none") return MixerKind::None;
    if (s == "random-cutmix") return MixerKind::RandomCutmix;
    if (s == "tdattenmix") return MixerKind::TdAttenMix;
    throw ConfigError("unknown mixer '" + s + "' (none, random-cutmix, tdattenmix)");
}

struct MixerConfig {
    MixerKind kind = MixerKind::TdAttenMix;
    double sigma = 1.0;                // top-down balance at mixing time
    double beta = 0.5;                 // area/attention label weight
    bool random_beta = false;          // draw beta ~ U(0,1) per pair
    GridReduction reduction = GridReduction::ReceivedTimesNorm;
    bool bottom_up_only = false;       // guide windows by bottom-up grids
    double fixed_delta = -1.0;         // < 0 samples delta per pair
};

struct MixedSample {
    Tensor image;
    ProbVector label;
    PatchMask mask;
    MixPlan plan;
};

inline WindowSample window_from_delta(double delta, std::size_t H, std::size_t W, std::size_t P) {
    if (!(delta > 0.0) || delta > 1.0)
        throw ContractError("window_from_delta: delta outside (0, 1]");
    if (P == 0 || H % P != 0 || W % P != 0)
        throw ConfigError("window_from_delta: patch size must divide image dims");
    WindowSample s;
    s.delta = delta;
    s.h = static_cast<std::size_t>(delta * static_cast<double>(H / P));
    s.w = static_cast<std::size_t>(delta * static_cast<double>(W / P));
    if (s.h == 0) s.h = 1;
    if (s.w == 0) s.w = 1;
    if (s.h > H / P) s.h = H / P;
    if (s.w > W / P) s.w = W / P;
    return s;
}

/// Guidance grid for one image under the mixer settings.
inline AttentionGrid guidance_grid(const VitModel& m, const Tensor& image, std::size_t label,
                                   const MixerConfig& cfg) {
    if (cfg.bottom_up_only) return bottom_up_grid(m, image, cfg.reduction);
    MixAttention att;
    att.sigma = BalanceFactor{cfg.sigma};
    att.reduction = cfg.reduction;
    return image_attention_grid(m, image, label, att);
}

/**
 * Build the plan from precomputed guidance grids. Draw order is fixed
 * (delta, then beta when randomized, then any centers), so two mixers fed
 * identical freshly seeded streams see the same delta for the same pair.
 */
inline MixPlan plan_mix(const AttentionGrid& g_a, const AttentionGrid& g_b,
                        const MixerConfig& cfg, std::size_t H, std::size_t W, std::size_t P,
                        rng::Stream& rs) {
    if (cfg.kind == MixerKind::None) throw ContractError("plan_mix: mixer 'none' has no plan");
    if (g_a.rows() != g_b.rows() || g_a.cols() != g_b.cols())
        throw ShapeError("plan_mix: grids disagree on shape");
    const WindowSample win = cfg.fixed_delta >= 0.0
                                 ? window_from_delta(cfg.fixed_delta, H, W, P)
                                 : sample_window(rs, H, W, P);
    const double beta = cfg.random_beta ? rs.uniform() : cfg.beta;

    MixPlan plan;
    plan.delta = win.delta;
    plan.h = win.h;
    plan.w = win.w;
    plan.lambda_r = area_ratio(plan.h, plan.w, P, H, W);
    if (cfg.kind == MixerKind::RandomCutmix) {
        // one uniformly random valid center, shared by source and target
        const auto [ilo, ihi] = detail::center_range(g_a.rows(), plan.h);
        const auto [jlo, jhi] = detail::center_range(g_a.cols(), plan.w);
        plan.i_s = plan.i_t = ilo + rs.uniform_int(ihi - ilo + 1);
        plan.j_s = plan.j_t = jlo + rs.uniform_int(jhi - jlo + 1);
        plan.lambda_a = plan.lambda_r;
        plan.lambda = plan.lambda_r;
    } else {
        std::tie(plan.i_s, plan.j_s) = select_max_center(g_a, plan.h, plan.w);
        std::tie(plan.i_t, plan.j_t) = select_min_center(g_b, plan.h, plan.w);
        plan.lambda_a = attention_ratio(g_a, g_b, plan);
        plan.lambda = mix_ratio(plan.lambda_r, plan.lambda_a, beta);
    }
    return plan;
}

/// Full pair mix with grids supplied by the caller (cached-grid path).
inline MixedSample mix_pair_with_grids(const Tensor& x_a, std::size_t y_a, const Tensor& x_b,
                                       std::size_t y_b, std::size_t n_cls,
                                       const AttentionGrid& g_a, const AttentionGrid& g_b,
                                       const MixerConfig& cfg, std::size_t P, rng::Stream& rs) {
    const std::size_t H = x_a.extent(0), W = x_a.extent(1);
    const MixPlan plan = plan_mix(g_a, g_b, cfg, H, W, P, rs);
    PasteResult pr = paste(x_a, x_b, plan, P);
    ProbVector label =
        mix_labels(ProbVector::one_hot(y_a, n_cls), ProbVector::one_hot(y_b, n_cls), plan.lambda);
    return MixedSample{std::move(pr.mixed), std::move(label), std::move(pr.mask), plan};
}

/// Full pair mix, guidance grids computed from the frozen model snapshot.
inline MixedSample mix_pair(const VitModel& m, const Tensor& x_a, std::size_t y_a,
                            const Tensor& x_b, std::size_t y_b, const MixerConfig& cfg,
                            rng::Stream& rs) {
    if (cfg.kind == MixerKind::None) throw ContractError("mix_pair: mixer 'none' mixes nothing");
    const std::size_t P = m.cfg.patch;
    if (cfg.kind == MixerKind::RandomCutmix) {
        // grids are irrelevant here; skip both forwards
        const AttentionGrid u = AttentionGrid::uniform(m.cfg.grid_rows(), m.cfg.grid_cols());
        return mix_pair_with_grids(x_a, y_a, x_b, y_b, m.cfg.classes, u, u, cfg, P, rs);
    }
    const AttentionGrid g_a = guidance_grid(m, x_a, y_a, cfg);
    const AttentionGrid g_b = guidance_grid(m, x_b, y_b, cfg);
    return mix_pair_with_grids(x_a, y_a, x_b, y_b, m.cfg.classes, g_a, g_b, cfg, P, rs);
}

/**
 * Cheap structural checks run on a sampled subset of training mixes:
 * the mask is exactly the plan's rectangle, the label is a distribution,
 * and lambda matches its defining blend.
 */
inline void check_mix_invariants(const MixedSample& s, const MixerConfig& cfg) {
    if (s.mask.count() != s.plan.h * s.plan.w)
        throw ContractError("mix invariant: mask count != h*w");
    for (std::size_t i = 0; i < s.mask.rows; ++i)
        for (std::size_t j = 0; j < s.mask.cols; ++j) {
            const bool inside = i + s.plan.h / 2 >= s.plan.i_t &&
                                i + s.plan.h / 2 < s.plan.i_t + s.plan.h &&
                                j + s.plan.w / 2 >= s.plan.j_t &&
                                j + s.plan.w / 2 < s.plan.j_t + s.plan.w;
            if ((s.mask.at(i, j) != 0) != inside)
                throw ContractError("mix invariant: mask is not the plan rectangle");
        }
    if (!(s.plan.lambda >= 0.0 && s.plan.lambda <= 1.0))
        throw ContractError("mix invariant: lambda outside [0,1]");
    double sum = 0.0;
    for (std::size_t i = 0; i < s.label.size(); ++i) sum += s.label[i];
    if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError("mix invariant: mixed label does not sum to 1");
    if (cfg.kind == MixerKind::TdAttenMix && !cfg.random_beta) {
        const double expect = cfg.beta * s.plan.lambda_r + (1.0 - cfg.beta) * s.plan.lambda_a;
        if (s.plan.lambda != expect)
            throw ContractError("mix invariant: lambda != beta blend");
    }
}

} // namespace tdmix
