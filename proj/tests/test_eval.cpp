#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <vector>

#include "tdmix/eval.hpp"

using namespace tdmix;
namespace fs = std::filesystem;

namespace {

VitConfig toy_cfg() {
    VitConfig cfg;
    cfg.classes = 4;
    return cfg;
}

} // namespace

TEST_CASE("descending argsort breaks ties by index") {
    const std::vector<std::size_t> got = argsort_desc(Tensor({5}, {1.0, 3.0, 3.0, 0.5, 3.0}));
    REQUIRE(got == std::vector<std::size_t>{1, 2, 4, 0, 3});
}

TEST_CASE("mixed-pair evaluation is reproducible and bounded") {
    const SyntheticDataset ds = generate_synthetic_dataset(41, 10, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    MixerConfig cfg;

    const MixedEvalResult a = eval_mixed_accuracy(m, ds, cfg, 40, 5);
    const MixedEvalResult b = eval_mixed_accuracy(m, ds, cfg, 40, 5);
    REQUIRE(a.pairs == 40);
    REQUIRE(a.top1 == b.top1);
    REQUIRE(a.top2 == b.top2);
    REQUIRE(a.top1 >= 0.0);
    REQUIRE(a.top1 <= 1.0);
    REQUIRE(a.top2 >= 0.0);
    REQUIRE(a.top2 <= 1.0);

    MixerConfig none;
    none.kind = MixerKind::None;
    REQUIRE_THROWS_AS(eval_mixed_accuracy(m, ds, none, 10, 1), ConfigError);
}

TEST_CASE("occlusion at ratio zero reproduces the clean accuracy exactly") {
    const SyntheticDataset ds = generate_synthetic_dataset(42, 10, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    for (OcclusionMode mode :
         {OcclusionMode::Random, OcclusionMode::Salient, OcclusionMode::NonSalient}) {
        const std::vector<OcclusionPoint> pts = eval_occlusion(m, ds, mode, {0.0}, 3);
        REQUIRE(pts.size() == 1);
        REQUIRE(pts[0].top1 == val_top1_accuracy(m, ds));
    }
}

TEST_CASE("occlusion at ratio one blanks every image the same way") {
    const SyntheticDataset ds = generate_synthetic_dataset(43, 10, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());

    const Tensor blank({32, 32, 3});
    const std::size_t pick = argmax_index(vit_forward(m, blank).logits);
    std::size_t hits = 0;
    for (std::size_t i : ds.val_idx) hits += pick == ds.labels[i];
    const double expect = static_cast<double>(hits) / static_cast<double>(ds.val_idx.size());

    for (OcclusionMode mode :
         {OcclusionMode::Random, OcclusionMode::Salient, OcclusionMode::NonSalient}) {
        const std::vector<OcclusionPoint> pts = eval_occlusion(m, ds, mode, {1.0}, 3);
        REQUIRE(pts[0].top1 == expect);
    }
}

TEST_CASE("occlusion curves are deterministic and validate their inputs") {
    const SyntheticDataset ds = generate_synthetic_dataset(44, 10, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    const std::vector<double> ratios{0.0, 0.25, 0.5, 1.0};

    const auto a = eval_occlusion(m, ds, OcclusionMode::Random, ratios, 9);
    const auto b = eval_occlusion(m, ds, OcclusionMode::Random, ratios, 9);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].ratio == ratios[i]);
        REQUIRE(a[i].top1 == b[i].top1);
    }

    REQUIRE_THROWS_AS(eval_occlusion(m, ds, OcclusionMode::Random, {1.5}, 1), ConfigError);
    const SyntheticDataset noval = generate_synthetic_dataset(44, 1, 4, 32, 32);
    REQUIRE_THROWS_AS(eval_occlusion(m, noval, OcclusionMode::Random, {0.0}, 1), ContractError);
}

TEST_CASE("occlusion mode names round-trip") {
    for (OcclusionMode mode :
         {OcclusionMode::Random, OcclusionMode::Salient, OcclusionMode::NonSalient})
        REQUIRE(parse_occlusion_mode(to_string(mode)) == mode);
    REQUIRE_THROWS_AS(parse_occlusion_mode("saliency"), ConfigError);
}

TEST_CASE("the inconsistency study fills one deterministic row per mixer") {
    const SyntheticDataset ds = generate_synthetic_dataset(45, 4, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    MixerConfig td;
    MixerConfig rc;
    rc.kind = MixerKind::RandomCutmix;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}, {"random-cutmix", rc}};

    const auto rows = inconsistency_study(m, ds, mixers, 60, 7, 0.5, std::nullopt);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].mixer == "tdattenmix");
    REQUIRE(rows[1].mixer == "random-cutmix");
    for (const auto& r : rows) {
        REQUIRE(r.pairs == 60);
        REQUIRE(r.skipped == 0);
        REQUIRE(r.mean_inconsistency >= 0.0);
        REQUIRE(r.mean_inconsistency <= 1.0);
    }

    const auto again = inconsistency_study(m, ds, mixers, 60, 7, 0.5, std::nullopt);
    REQUIRE(rows[0].mean_inconsistency == again[0].mean_inconsistency);
    REQUIRE(rows[1].mean_inconsistency == again[1].mean_inconsistency);
}

TEST_CASE("area-only ground truth zeroes the cutmix inconsistency") {
    const SyntheticDataset ds = generate_synthetic_dataset(46, 4, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    MixerConfig td;
    MixerConfig rc;
    rc.kind = MixerKind::RandomCutmix;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}, {"random-cutmix", rc}};

    // beta_gt = 1 makes lambda_gt the pure area ratio, which is exactly what
    // random cutmix reports as lambda
    const auto rows = inconsistency_study(m, ds, mixers, 40, 8, 1.0, std::nullopt);
    REQUIRE(rows[1].mean_inconsistency == 0.0);
    REQUIRE(rows[0].mean_inconsistency > 0.0);
}

TEST_CASE("gaze grids written from the mixer's own guidance are consistent") {
    const SyntheticDataset ds = generate_synthetic_dataset(47, 4, 4, 32, 32);
    const VitModel m = VitModel::init(toy_cfg());
    MixerConfig td;

    const fs::path dir = fs::temp_directory_path() / "tdmix_eval_gaze";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < ds.size(); ++i)
        write_gaze_grid(guidance_grid(m, ds.images[i], ds.labels[i], td),
                        (dir / gaze_file_name(i)).string());

    MixerConfig rc;
    rc.kind = MixerKind::RandomCutmix;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}, {"random-cutmix", rc}};
    const auto rows =
        inconsistency_study(m, ds, mixers, 50, 9, 0.5, std::make_optional(dir.string()));

    REQUIRE(rows[0].mean_inconsistency < 1e-9);
    REQUIRE(rows[0].mean_inconsistency < rows[1].mean_inconsistency);
}

TEST_CASE("missing gaze files skip the pair for every mixer") {
    const SyntheticDataset ds = generate_synthetic_dataset(48, 2, 2, 32, 32);
    const VitModel m = VitModel::init([] {
        VitConfig c;
        c.classes = 2;
        return c;
    }());
    MixerConfig td;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}};

    const fs::path dir = fs::temp_directory_path() / "tdmix_eval_gaze_empty";
    fs::create_directories(dir);
    for (const auto& e : fs::directory_iterator(dir)) fs::remove(e.path());

    const auto rows = inconsistency_study(m, ds, mixers, 15, 10, 0.5,
                                          std::make_optional(dir.string()));
    REQUIRE(rows[0].pairs == 0);
    REQUIRE(rows[0].skipped == 15);
    REQUIRE(rows[0].mean_inconsistency == 0.0);
}

TEST_CASE("partial gaze coverage keeps covered pairs and counts the rest") {
    const SyntheticDataset ds = generate_synthetic_dataset(49, 2, 2, 32, 32);
    const VitModel m = VitModel::init([] {
        VitConfig c;
        c.classes = 2;
        return c;
    }());
    MixerConfig td;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}};

    const fs::path dir = fs::temp_directory_path() / "tdmix_eval_gaze_partial";
    fs::create_directories(dir);
    for (const auto& e : fs::directory_iterator(dir)) fs::remove(e.path());
    // cover records 0 and 1 only; records 2 and 3 stay missing
    for (std::size_t i = 0; i < 2; ++i)
        write_gaze_grid(gaze_from_mask(ds, i, 4), (dir / gaze_file_name(i)).string());

    const auto rows = inconsistency_study(m, ds, mixers, 30, 11, 0.5,
                                          std::make_optional(dir.string()));
    REQUIRE(rows[0].pairs + rows[0].skipped == 30);
    REQUIRE(rows[0].pairs > 0);
    REQUIRE(rows[0].skipped > 0);
}

TEST_CASE("shape-mismatched gaze files are an error, not a skip") {
    const SyntheticDataset ds = generate_synthetic_dataset(50, 2, 2, 32, 32);
    const VitModel m = VitModel::init([] {
        VitConfig c;
        c.classes = 2;
        return c;
    }());
    const fs::path dir = fs::temp_directory_path() / "tdmix_eval_gaze_shape";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < ds.size(); ++i)
        write_gaze_grid(AttentionGrid::uniform(4, 4), (dir / gaze_file_name(i)).string());

    MixerConfig td;
    const std::vector<MixerUnderStudy> mixers{{"tdattenmix", td}};
    REQUIRE_THROWS_AS(
        inconsistency_study(m, ds, mixers, 5, 12, 0.5, std::make_optional(dir.string())),
        ParseError);
}
