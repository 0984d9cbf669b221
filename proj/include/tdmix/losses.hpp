#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "tdmix/autodiff.hpp"
#include "tdmix/common.hpp"
#include "tdmix/label_mix.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

enum class LossMode { ResnetStyle, VitStyle };

inline const char* to_string(LossMode m) {
    return m == LossMode::ResnetStyle ? "resnet" : "vit";
}

/// All loss terms of one step, with the exact per-mode total.
struct LossBundle {
    LossMode mode;
    double cls = 0.0;
    double con = 0.0;
    double fine = 0.0;  // zero and unused in resnet mode
    double total = 0.0;
};

/// Cross entropy of the mixed-image prediction against the mixed label.
inline double loss_cls(const Tensor& logits_m, const ProbVector& y_m) {
    return cross_entropy(logits_m, y_m.tensor());
}

/// Mean absolute gap between the mixed prediction distribution and the
/// lambda-blend of the unmixed ones. All three are probability distributions;
/// the blend operands act as constants.
inline double loss_con(const Tensor& y_m_pred, const Tensor& y_a_pred, const Tensor& y_b_pred,
                       double lambda) {
    detail::require_unit(lambda, "lambda");
    detail::require_same_shape(y_a_pred, y_b_pred, "loss_con");
    Tensor blend = add(scale(y_a_pred, lambda), scale(y_b_pred, 1.0 - lambda));
    return l1_distance(y_m_pred, blend);
}

/// Average classification loss of the two unmixed images.
inline double loss_fine(const Tensor& logits_a, const ProbVector& y_a, const Tensor& logits_b,
                        const ProbVector& y_b) {
    return 0.5 * (cross_entropy(logits_a, y_a.tensor()) + cross_entropy(logits_b, y_b.tensor()));
}

/**
 * Assemble the per-mode total. Resnet-style sums cls + con; vit-style sums
 * cls + fine + con and requires the fine term.
 */
inline LossBundle total_loss(LossMode mode, double cls, double con, std::optional<double> fine) {
    LossBundle b;
    b.mode = mode;
    b.cls = cls;
    b.con = con;
    if (mode == LossMode::ResnetStyle) {
        b.fine = 0.0;
        b.total = cls + con;
    } else {
        if (!fine.has_value()) throw ContractError("total_loss: vit mode requires the fine term");
        b.fine = *fine;
        b.total = cls + b.fine + con;
    }
    return b;
}

// --- recorded counterparts used by the training step ---

inline ad::Value loss_cls_rec(ad::Value logits_m, const ProbVector& y_m) {
    return ad::cross_entropy(logits_m, y_m.tensor());
}

/// probs_m is the recorded softmax of the mixed logits; the unmixed
/// prediction distributions enter as detached constants.
inline ad::Value loss_con_rec(ad::Value probs_m, const Tensor& y_a_pred, const Tensor& y_b_pred,
                              double lambda) {
    detail::require_unit(lambda, "lambda");
    Tensor blend = add(scale(y_a_pred, lambda), scale(y_b_pred, 1.0 - lambda));
    return ad::l1_to_const(probs_m, blend);
}

inline ad::Value loss_fine_rec(ad::Value logits_a, const ProbVector& y_a, ad::Value logits_b,
                               const ProbVector& y_b) {
    return ad::scale(ad::add(ad::cross_entropy(logits_a, y_a.tensor()),
                             ad::cross_entropy(logits_b, y_b.tensor())),
                     0.5);
}

struct LossValuesRec {
    ad::Value cls, con, total;
    std::optional<ad::Value> fine;
};

inline LossValuesRec total_loss_rec(LossMode mode, ad::Value cls, ad::Value con,
                                    std::optional<ad::Value> fine) {
    LossValuesRec r;
    r.cls = cls;
    r.con = con;
    r.fine = fine;
    if (mode == LossMode::ResnetStyle) {
        r.total = ad::add(cls, con);
    } else {
        if (!fine.has_value()) throw ContractError("total_loss: vit mode requires the fine term");
        r.total = ad::add(ad::add(cls, *fine), con);
    }
    return r;
}

} // namespace tdmix
