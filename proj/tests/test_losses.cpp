#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tdmix/losses.hpp"
#include "tdmix/rng.hpp"

using namespace tdmix;

namespace {

Tensor rand_logits(std::uint64_t seed, std::size_t n = 6) {
    rng::Stream rs(seed);
    return Tensor::random_uniform({n}, rs, -2.0, 2.0);
}

Tensor probs_of(const Tensor& logits) { return softmax_rows(logits); }

} // namespace

TEST_CASE("classification loss equals the log-sum-exp form") {
    const Tensor logits = rand_logits(1);
    const ProbVector y = ProbVector::one_hot(3, 6);
    double dot = 0.0;
    for (std::size_t i = 0; i < 6; ++i) dot += y[i] * logits[i];
    REQUIRE(loss_cls(logits, y) ==
            Catch::Approx(log_sum_exp(logits) - dot).epsilon(1e-12));
}

TEST_CASE("consistency loss is the mean absolute gap to the blend") {
    const Tensor pm = probs_of(rand_logits(2));
    const Tensor pa = probs_of(rand_logits(3));
    const Tensor pb = probs_of(rand_logits(4));
    const double lambda = 0.35;
    double acc = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        acc += std::abs(pm[i] - (lambda * pa[i] + (1.0 - lambda) * pb[i]));
    REQUIRE(loss_con(pm, pa, pb, lambda) == Catch::Approx(acc / 6.0).epsilon(1e-12));
    REQUIRE_THROWS_AS(loss_con(pm, pa, pb, 1.5), ContractError);
}

TEST_CASE("consistency loss vanishes when the prediction already matches the blend") {
    const Tensor pa = probs_of(rand_logits(5));
    const Tensor pb = probs_of(rand_logits(6));
    const Tensor blend = add(scale(pa, 0.4), scale(pb, 0.6));
    REQUIRE(loss_con(blend, pa, pb, 0.4) == 0.0);
}

TEST_CASE("fine loss averages the two unmixed cross entropies") {
    const Tensor la = rand_logits(7), lb = rand_logits(8);
    const ProbVector ya = ProbVector::one_hot(0, 6), yb = ProbVector::one_hot(5, 6);
    REQUIRE(loss_fine(la, ya, lb, yb) ==
            Catch::Approx(0.5 * (cross_entropy(la, ya.tensor()) +
                                 cross_entropy(lb, yb.tensor())))
                .epsilon(1e-15));
}

TEST_CASE("per-mode totals assemble the right terms") {
    const LossBundle r = total_loss(LossMode::ResnetStyle, 1.25, 0.5, std::nullopt);
    REQUIRE(r.fine == 0.0);
    REQUIRE(r.total == 1.75);

    const LossBundle v = total_loss(LossMode::VitStyle, 1.25, 0.5, 0.75);
    REQUIRE(v.fine == 0.75);
    REQUIRE(v.total == 2.5);

    REQUIRE_THROWS_AS(total_loss(LossMode::VitStyle, 1.0, 1.0, std::nullopt), ContractError);
    REQUIRE(std::string(to_string(LossMode::ResnetStyle)) == "resnet");
    REQUIRE(std::string(to_string(LossMode::VitStyle)) == "vit");
}

TEST_CASE("recorded losses agree with the plain ones bitwise") {
    const Tensor lm = rand_logits(9), la = rand_logits(10), lb = rand_logits(11);
    const ProbVector ym = mix_labels(ProbVector::one_hot(1, 6), ProbVector::one_hot(4, 6), 0.3);
    const ProbVector ya = ProbVector::one_hot(1, 6), yb = ProbVector::one_hot(4, 6);
    const Tensor pa = probs_of(la), pb = probs_of(lb);

    ad::Tape tape;
    const ad::Value vm = tape.leaf(lm);
    const ad::Value va = tape.leaf(la);
    const ad::Value vb = tape.leaf(lb);
    const ad::Value cls = loss_cls_rec(vm, ym);
    const ad::Value con = loss_con_rec(ad::softmax_rows(vm), pa, pb, 0.3);
    const ad::Value fine = loss_fine_rec(va, ya, vb, yb);
    const LossValuesRec tot = total_loss_rec(LossMode::VitStyle, cls, con, fine);

    REQUIRE(tape.value(cls)[0] == loss_cls(lm, ym));
    REQUIRE(tape.value(con)[0] == loss_con(probs_of(lm), pa, pb, 0.3));
    REQUIRE(tape.value(fine)[0] == loss_fine(la, ya, lb, yb));
    const LossBundle plain = total_loss(LossMode::VitStyle, tape.value(cls)[0],
                                        tape.value(con)[0], tape.value(fine)[0]);
    // same summation order: (cls + fine) + con
    REQUIRE(tape.value(tot.total)[0] == plain.total);

    REQUIRE_THROWS_AS(total_loss_rec(LossMode::VitStyle, cls, con, std::nullopt), ContractError);
}

TEST_CASE("classification loss gradient passes finite differences") {
    const Tensor lm = rand_logits(12);
    const ProbVector ym = mix_labels(ProbVector::one_hot(2, 6), ProbVector::one_hot(0, 6), 0.45);

    ad::Tape tape;
    const ad::Value v = tape.leaf(lm);
    const ad::Value loss = loss_cls_rec(v, ym);
    tape.backward(loss);

    const double worst = ad::finite_diff_check(
        [&](const Tensor& p) { return loss_cls(p, ym); }, lm, tape.grad(v), 1e-6);
    REQUIRE(worst < 1e-8);
}

TEST_CASE("consistency loss gradient passes finite differences") {
    const Tensor lm = rand_logits(13);
    const Tensor pa = probs_of(rand_logits(14)), pb = probs_of(rand_logits(15));

    ad::Tape tape;
    const ad::Value v = tape.leaf(lm);
    const ad::Value loss = loss_con_rec(ad::softmax_rows(v), pa, pb, 0.6);
    tape.backward(loss);

    const double worst = ad::finite_diff_check(
        [&](const Tensor& p) { return loss_con(probs_of(p), pa, pb, 0.6); }, lm, tape.grad(v),
        1e-6);
    REQUIRE(worst < 1e-6);
}

TEST_CASE("vit-style total gradient passes finite differences") {
    // One shared logits leaf feeding all three terms stresses accumulation.
    const Tensor lm = rand_logits(16);
    const ProbVector ym = mix_labels(ProbVector::one_hot(3, 6), ProbVector::one_hot(1, 6), 0.5);
    const ProbVector ya = ProbVector::one_hot(3, 6), yb = ProbVector::one_hot(1, 6);
    const Tensor pa = probs_of(rand_logits(17)), pb = probs_of(rand_logits(18));

    ad::Tape tape;
    const ad::Value v = tape.leaf(lm);
    const LossValuesRec tot =
        total_loss_rec(LossMode::VitStyle, loss_cls_rec(v, ym),
                       loss_con_rec(ad::softmax_rows(v), pa, pb, 0.5),
                       loss_fine_rec(v, ya, v, yb));
    tape.backward(tot.total);

    const auto f = [&](const Tensor& p) {
        const double cls = loss_cls(p, ym);
        const double con = loss_con(probs_of(p), pa, pb, 0.5);
        const double fine = loss_fine(p, ya, p, yb);
        return total_loss(LossMode::VitStyle, cls, con, fine).total;
    };
    REQUIRE(ad::finite_diff_check(f, lm, tape.grad(v), 1e-6) < 1e-6);
}
