#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "tdmix/autodiff.hpp"
#include "tdmix/common.hpp"
#include "tdmix/losses.hpp"
#include "tdmix/mixers.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/synthetic.hpp"
#include "tdmix/vit.hpp"

namespace tdmix {

struct TrainConfig {
    VitConfig vit;
    std::size_t epochs = 15;
    std::size_t batch_size = 16;
    double lr = 0.02;
    double momentum = 0.9;
    MixerConfig mixer;                      // kind None trains plain supervised
    LossMode loss_mode = LossMode::VitStyle;
    std::uint64_t seed = 1;
    std::size_t check_every = 16;           // mix invariant spot-check period

    void validate() const {
        vit.validate();
        if (epochs == 0) throw ConfigError("train: epochs must be positive");
        if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: bad learning rate");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum outside [0,1)");
    }
};

struct TrainResult {
    VitModel model;
    std::vector<std::string> csv;       // header + one row per step (+ epoch rows)
    std::vector<double> val_top1;       // per epoch
};

/// Deterministic argmax: highest value, lowest index on ties.
inline std::size_t argmax_index(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.numel(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline double val_top1_accuracy(const VitModel& m, const SyntheticDataset& ds) {
    if (ds.val_idx.empty()) throw ContractError("val_top1_accuracy: empty validation split");
    std::size_t hit = 0;
    for (std::size_t i : ds.val_idx)
        if (argmax_index(vit_forward(m, ds.images[i]).logits) == ds.labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ds.val_idx.size());
}

namespace detail {

inline std::string csv_row(std::size_t epoch, std::size_t step, const LossBundle& l,
                           std::optional<double> val) {
    char buf[256];
    if (val)
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g", epoch, step, l.cls,
                      l.con, l.fine, l.total, *val);
    else
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,", epoch, step, l.cls,
                      l.con, l.fine, l.total);
    return buf;
}

} // namespace detail

/**
 * SGD with momentum over the combined objective. Each step: mix pairs with
 * the current weights frozen, one recorded forward per distinct image plus
 * one per mixed image, backward on the batch-mean total, in-place update.
 *
 * Divergence (any non-finite intermediate) surfaces as NumericError tagged
 * with epoch and step.
 */
inline TrainResult train(const TrainConfig& cfg, const SyntheticDataset& ds) {
    cfg.validate();
    if (ds.H != cfg.vit.image_h || ds.W != cfg.vit.image_w || ds.n_cls != cfg.vit.classes)
        throw ConfigError("train: dataset does not match model config");
    if (ds.train_idx.size() < cfg.batch_size)
        throw ConfigError("train: fewer training records than one batch");

    TrainResult res{VitModel::init(cfg.vit), {}, {}};
    VitModel& model = res.model;
    res.csv.push_back("epoch,step,loss_cls,loss_con,loss_fine,loss_total,val_top1");

    rng::Stream shuffle_rs(rng::derive(cfg.seed, 0xA1));
    rng::Stream pair_rs(rng::derive(cfg.seed, 0xA2));
    rng::Stream mix_rs(rng::derive(cfg.seed, 0xA3));

    std::vector<Tensor> velocity;
    for (Tensor* p : model.parameters()) velocity.push_back(Tensor(p->shape()));

    const bool mixing = cfg.mixer.kind != MixerKind::None;
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = ds.train_idx;
        shuffle_rs.shuffle(order);

        for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
            const std::size_t B = std::min(cfg.batch_size, order.size() - start);
            if (B < 2) break;
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + B));
            const std::vector<std::size_t> perm = pair_rs.permutation(B);
            try {
                // pair i mixes source A=batch[perm[i]] into target B=batch[i]
                std::vector<MixedSample> mixed;
                if (mixing)
                    for (std::size_t i = 0; i < B; ++i) {
                        mixed.push_back(mix_pair(model, ds.images[batch[perm[i]]],
                                                 ds.labels[batch[perm[i]]], ds.images[batch[i]],
                                                 ds.labels[batch[i]], cfg.mixer, mix_rs));
                        if (cfg.check_every && (global_step + 1) % cfg.check_every == 0 && i == 0)
                            check_mix_invariants(mixed.back(), cfg.mixer);
                    }

                ad::Tape tape;
                VitParamValues pv = VitParamValues::leaves(tape, model);

                // unmixed prediction per distinct image: recorded when the
                // fine-grained term needs gradients, plain otherwise
                std::vector<ad::Value> logits_rec(B);
                std::vector<Tensor> probs_plain(B);
                if (mixing) {
                    const bool rec = cfg.loss_mode == LossMode::VitStyle;
                    for (std::size_t i = 0; i < B; ++i) {
                        if (rec) {
                            logits_rec[i] =
                                vit_forward(tape, cfg.vit, pv, ds.images[batch[i]]).logits;
                            probs_plain[i] = softmax_rows(tape.value(logits_rec[i]));
                        } else {
                            probs_plain[i] =
                                softmax_rows(vit_forward(model, ds.images[batch[i]]).logits);
                        }
                    }
                }

                std::optional<ad::Value> cls_sum, con_sum, fine_sum;
                auto acc = [&](std::optional<ad::Value>& slot, ad::Value v) {
                    slot = slot ? ad::add(*slot, v) : v;
                };
                for (std::size_t i = 0; i < B; ++i) {
                    if (!mixing) {
                        ad::Value lg = vit_forward(tape, cfg.vit, pv, ds.images[batch[i]]).logits;
                        acc(cls_sum, loss_cls_rec(lg, ds.one_hot(batch[i])));
                        continue;
                    }
                    ad::Value lg_m = vit_forward(tape, cfg.vit, pv, mixed[i].image).logits;
                    acc(cls_sum, loss_cls_rec(lg_m, mixed[i].label));
                    acc(con_sum, loss_con_rec(ad::softmax_rows(lg_m), probs_plain[perm[i]],
                                              probs_plain[i], mixed[i].plan.lambda));
                    if (cfg.loss_mode == LossMode::VitStyle)
                        acc(fine_sum, loss_fine_rec(logits_rec[perm[i]], ds.one_hot(batch[perm[i]]),
                                                    logits_rec[i], ds.one_hot(batch[i])));
                }
                const double inv = 1.0 / static_cast<double>(B);
                ad::Value cls_mean = ad::scale(*cls_sum, inv);
                LossBundle bundle;
                bundle.mode = cfg.loss_mode;
                ad::Value total = cls_mean;
                bundle.cls = tape.value(cls_mean)[0];
                if (mixing) {
                    ad::Value con_mean = ad::scale(*con_sum, inv);
                    bundle.con = tape.value(con_mean)[0];
                    if (cfg.loss_mode == LossMode::VitStyle) {
                        ad::Value fine_mean = ad::scale(*fine_sum, inv);
                        bundle.fine = tape.value(fine_mean)[0];
                        total = ad::add(ad::add(cls_mean, fine_mean), con_mean);
                    } else {
                        total = ad::add(cls_mean, con_mean);
                    }
                }
                bundle.total = tape.value(total)[0];
                if (!std::isfinite(bundle.total)) throw NumericError("non-finite batch loss");

                tape.backward(total);
                std::vector<Tensor*> params = model.parameters();
                const std::vector<ad::Value> leaves = pv.all();
                for (std::size_t p = 0; p < params.size(); ++p) {
                    const Tensor g = tape.grad(leaves[p]);
                    Tensor& v = velocity[p];
                    Tensor& w = *params[p];
                    for (std::size_t k = 0; k < w.numel(); ++k) {
                        v[k] = cfg.momentum * v[k] - cfg.lr * g[k];
                        w[k] += v[k];
                    }
                }
                ++global_step;
                const bool last_in_epoch = start + cfg.batch_size >= order.size() ||
                                           order.size() - (start + cfg.batch_size) < 2;
                if (last_in_epoch) {
                    const double acc_val = val_top1_accuracy(model, ds);
                    res.val_top1.push_back(acc_val);
                    res.csv.push_back(detail::csv_row(epoch, global_step, bundle, acc_val));
                } else {
                    res.csv.push_back(detail::csv_row(epoch, global_step, bundle, std::nullopt));
                }
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(global_step) + ": " + e.what());
            }
        }
    }
    return res;
}

} // namespace tdmix
