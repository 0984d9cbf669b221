#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdmix/tdmix.hpp"

namespace fs = std::filesystem;

namespace {

using namespace tdmix;

struct Cli {
    TrainConfig cfg;
    std::string config_file, out, data, model, gaze_dir;
    std::string mixer = "tdattenmix", loss_mode = "vit", reduction = "received-x-norm";
    std::string values, mode = "all";
    std::string ratios = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
    std::size_t n_per_class = 40, image = 32, pairs = 500, rec_a = 0, rec_b = 1;
    std::uint64_t model_seed = 0;
    bool write_gaze = false, bottom_up_only = false, random_beta = false;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    for (std::string& t : out) {
        t = tdmix::detail::trim(t);
        if (t.empty()) throw ConfigError("empty entry in list '" + s + "'");
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& t : split_list(s)) out.push_back(tdmix::detail::to_double("list", t));
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream o(path);
    if (!o) throw IoError("cannot open for write: " + path);
    o << body;
    if (!o) throw IoError("short write: " + path);
}

/// Registers the option set shared by every subcommand and returns the
/// flag-name -> config-key pairs used to let command-line flags win over
/// the config file.
std::vector<std::pair<std::string, std::string>> add_common(CLI::App* sub, Cli& c) {
    sub->add_option("--config", c.config_file, "flat key=value config file");
    sub->add_option("--out", c.out, "output directory (all files land here)")->required();
    sub->add_option("--seed", c.cfg.seed, "master seed");
    sub->add_option("--sigma", c.cfg.mixer.sigma, "top-down balance factor");
    sub->add_option("--beta", c.cfg.mixer.beta, "area/attention label blend");
    sub->add_option("--mixer", c.mixer, "none | random-cutmix | tdattenmix");
    sub->add_option("--epochs", c.cfg.epochs, "training epochs");
    sub->add_option("--batch-size", c.cfg.batch_size, "batch size");
    sub->add_option("--lr", c.cfg.lr, "learning rate");
    sub->add_option("--momentum", c.cfg.momentum, "SGD momentum");
    sub->add_option("--loss-mode", c.loss_mode, "resnet | vit");
    sub->add_option("--reduction", c.reduction,
                    "received-x-norm | column-sum | output-norm");
    sub->add_flag("--bottom-up-only", c.bottom_up_only, "guide windows by bottom-up grids");
    sub->add_flag("--random-beta", c.random_beta, "draw beta per pair");
    sub->add_option("--fixed-delta", c.cfg.mixer.fixed_delta, "fixed window scale in (0,1]");
    sub->add_option("--check-every", c.cfg.check_every, "mix invariant spot-check period");
    sub->add_option("--image", c.image, "square image side");
    sub->add_option("--patch", c.cfg.vit.patch, "patch side");
    sub->add_option("--embed-dim", c.cfg.vit.embed_dim, "token embedding dim");
    sub->add_option("--heads", c.cfg.vit.heads, "attention heads");
    sub->add_option("--blocks", c.cfg.vit.blocks, "transformer blocks");
    sub->add_option("--classes", c.cfg.vit.classes, "class count");
    sub->add_option("--model-seed", c.model_seed, "weight init seed (defaults to --seed)");
    sub->add_option("--n-per-class", c.n_per_class, "generated records per class");
    return {{"--seed", "seed"},
            {"--sigma", "sigma"},
            {"--beta", "beta"},
            {"--mixer", "mixer"},
            {"--epochs", "epochs"},
            {"--batch-size", "batch-size"},
            {"--lr", "lr"},
            {"--momentum", "momentum"},
            {"--loss-mode", "loss-mode"},
            {"--reduction", "reduction"},
            {"--bottom-up-only", "bottom-up-only"},
            {"--random-beta", "random-beta"},
            {"--fixed-delta", "fixed-delta"},
            {"--check-every", "check-every"},
            {"--image", "image-h"},
            {"--patch", "patch"},
            {"--embed-dim", "embed-dim"},
            {"--heads", "heads"},
            {"--blocks", "blocks"},
            {"--classes", "classes"},
            {"--model-seed", "model-seed"}};
}

/// Merge config file and string-valued flags into c.cfg. Flags given on the
/// command line always win over file values.
void finalize(CLI::App* sub, Cli& c,
              const std::vector<std::pair<std::string, std::string>>& keymap) {
    std::set<std::string> overridden;
    for (const auto& [flag, key] : keymap)
        if (sub->count(flag) > 0) overridden.insert(key);
    if (sub->count("--image") > 0) overridden.insert("image-w");

    std::map<std::string, std::string> kv;
    if (!c.config_file.empty()) {
        kv = parse_config_file(c.config_file);
        apply_config(c.cfg, kv, overridden);
    }
    if (sub->count("--mixer") > 0) c.cfg.mixer.kind = parse_mixer(c.mixer);
    if (sub->count("--loss-mode") > 0) c.cfg.loss_mode = parse_loss_mode(c.loss_mode);
    if (sub->count("--reduction") > 0) c.cfg.mixer.reduction = parse_reduction(c.reduction);
    if (sub->count("--bottom-up-only") > 0) c.cfg.mixer.bottom_up_only = c.bottom_up_only;
    if (sub->count("--random-beta") > 0) c.cfg.mixer.random_beta = c.random_beta;
    if (sub->count("--image") > 0) c.cfg.vit.image_h = c.cfg.vit.image_w = c.image;
    if (sub->count("--model-seed") > 0)
        c.cfg.vit.seed = c.model_seed;
    else if (!(kv.count("model-seed") && !overridden.count("model-seed")))
        c.cfg.vit.seed = c.cfg.seed;

    fs::create_directories(c.out);
}

SyntheticDataset get_data(const Cli& c) {
    if (!c.data.empty()) return read_dataset(c.data);
    return generate_synthetic_dataset(c.cfg.seed, c.n_per_class, c.cfg.vit.classes,
                                      c.cfg.vit.image_h, c.cfg.vit.image_w);
}

VitModel get_model(const Cli& c) {
    if (!c.model.empty()) return load_checkpoint(c.model);
    return VitModel::init(c.cfg.vit);
}

void check_data_matches(const SyntheticDataset& ds, const VitConfig& vc) {
    if (ds.H != vc.image_h || ds.W != vc.image_w || ds.n_cls != vc.classes)
        throw ConfigError("dataset (" + std::to_string(ds.H) + "x" + std::to_string(ds.W) + ", " +
                          std::to_string(ds.n_cls) + " classes) does not match the model config");
}

void run_gen_data(const Cli& c) {
    SyntheticDataset ds = generate_synthetic_dataset(c.cfg.seed, c.n_per_class,
                                                     c.cfg.vit.classes, c.cfg.vit.image_h,
                                                     c.cfg.vit.image_w);
    write_dataset(ds, c.out + "/dataset.tdmix");
    if (c.write_gaze) {
        fs::create_directories(c.out + "/gaze");
        for (std::size_t i = 0; i < ds.size(); ++i)
            write_gaze_grid(gaze_from_mask(ds, i, c.cfg.vit.patch),
                            c.out + "/gaze/" + gaze_file_name(i));
    }
    std::printf("wrote %zu records (%zu train, %zu val) to %s/dataset.tdmix\n", ds.size(),
                ds.train_idx.size(), ds.val_idx.size(), c.out.c_str());
}

void run_train(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    check_data_matches(ds, c.cfg.vit);
    TrainResult r = train(c.cfg, ds);
    save_checkpoint(r.model, c.out + "/checkpoint.tdmix");
    std::string csv;
    for (const std::string& line : r.csv) csv += line + "\n";
    write_text(c.out + "/metrics.csv", csv);
    std::printf("trained %zu epochs, final val top-1 %.4f, outputs in %s\n", c.cfg.epochs,
                r.val_top1.empty() ? 0.0 : r.val_top1.back(), c.out.c_str());
}

void run_mix(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    VitModel m = get_model(c);
    check_data_matches(ds, m.cfg);
    if (c.rec_a >= ds.size() || c.rec_b >= ds.size())
        throw ConfigError("record index out of range (dataset has " + std::to_string(ds.size()) +
                          " records)");
    if (c.cfg.mixer.kind == MixerKind::None)
        throw ConfigError("mix: pick a mixer other than 'none'");

    const std::size_t P = m.cfg.patch;
    const AttentionGrid g_a = c.cfg.mixer.kind == MixerKind::RandomCutmix
                                  ? AttentionGrid::uniform(m.cfg.grid_rows(), m.cfg.grid_cols())
                                  : guidance_grid(m, ds.images[c.rec_a], ds.labels[c.rec_a],
                                                  c.cfg.mixer);
    const AttentionGrid g_b = c.cfg.mixer.kind == MixerKind::RandomCutmix
                                  ? AttentionGrid::uniform(m.cfg.grid_rows(), m.cfg.grid_cols())
                                  : guidance_grid(m, ds.images[c.rec_b], ds.labels[c.rec_b],
                                                  c.cfg.mixer);
    rng::Stream rs(rng::derive(c.cfg.seed, 0xD1));
    MixedSample s = mix_pair_with_grids(ds.images[c.rec_a], ds.labels[c.rec_a],
                                        ds.images[c.rec_b], ds.labels[c.rec_b], ds.n_cls, g_a,
                                        g_b, c.cfg.mixer, P, rs);
    write_ppm(s.image, c.out + "/mixed.ppm");
    write_ppm(render_overlay(ds.images[c.rec_a], g_a, P), c.out + "/overlay_a.ppm");
    write_ppm(render_overlay(ds.images[c.rec_b], g_b, P), c.out + "/overlay_b.ppm");
    write_text(c.out + "/plan.txt", s.plan.to_record() + "\n");
    std::printf("mixed records %zu and %zu: lambda=%.4f (area %.4f, attention %.4f)\n", c.rec_a,
                c.rec_b, s.plan.lambda, s.plan.lambda_r, s.plan.lambda_a);
}

void run_eval_mixed(const Cli& c, bool delta_defaulted) {
    SyntheticDataset ds = get_data(c);
    VitModel m = get_model(c);
    check_data_matches(ds, m.cfg);
    Cli cc = c;
    if (delta_defaulted && cc.cfg.mixer.fixed_delta < 0.0) cc.cfg.mixer.fixed_delta = 0.5;
    MixedEvalResult r = eval_mixed_accuracy(m, ds, cc.cfg.mixer, c.pairs, c.cfg.seed);
    write_text(c.out + "/eval_mixed.csv",
               "mixer,pairs,top1,top2\n" + std::string(to_string(cc.cfg.mixer.kind)) + "," +
                   std::to_string(r.pairs) + "," + fmt(r.top1) + "," + fmt(r.top2) + "\n");
    std::printf("mixed-pair accuracy over %zu pairs: top1 %.4f, top2 %.4f\n", r.pairs, r.top1,
                r.top2);
}

void run_eval_occlusion(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    VitModel m = get_model(c);
    check_data_matches(ds, m.cfg);
    const std::vector<double> ratios = split_doubles(c.ratios);
    std::vector<OcclusionMode> modes;
    if (c.mode == "all")
        modes = {OcclusionMode::Random, OcclusionMode::Salient, OcclusionMode::NonSalient};
    else
        modes = {parse_occlusion_mode(c.mode)};
    std::string csv = "mode,ratio,top1\n";
    for (OcclusionMode mode : modes)
        for (const OcclusionPoint& pt : eval_occlusion(m, ds, mode, ratios, c.cfg.seed))
            csv += std::string(to_string(pt.mode)) + "," + fmt(pt.ratio) + "," + fmt(pt.top1) +
                   "\n";
    write_text(c.out + "/occlusion.csv", csv);
    std::printf("occlusion curves over %zu ratios written to %s/occlusion.csv\n", ratios.size(),
                c.out.c_str());
}

void run_inconsistency(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    VitModel m = [&] {
        if (!c.model.empty()) return load_checkpoint(c.model);
        // no checkpoint given: train a plain supervised reference model
        TrainConfig tc = c.cfg;
        tc.mixer.kind = MixerKind::None;
        std::printf("no --model given; training a %zu-epoch reference model first\n", tc.epochs);
        return train(tc, ds).model;
    }();
    check_data_matches(ds, m.cfg);

    MixerConfig td = c.cfg.mixer;
    td.kind = MixerKind::TdAttenMix;
    MixerConfig bu = td;
    bu.sigma = 0.0;
    MixerConfig cut = td;
    cut.kind = MixerKind::RandomCutmix;
    const std::vector<MixerUnderStudy> mixers = {
        {"tdattenmix", td}, {"tdattenmix-bottom-up", bu}, {"random-cutmix", cut}};

    const std::optional<std::string> gaze =
        c.gaze_dir.empty() ? std::nullopt : std::optional<std::string>(c.gaze_dir);
    const std::vector<InconsistencyRow> rows =
        inconsistency_study(m, ds, mixers, c.pairs, c.cfg.seed, c.cfg.mixer.beta, gaze);
    std::string csv = "mixer,mean_inconsistency,pairs,skipped\n";
    for (const InconsistencyRow& r : rows)
        csv += r.mixer + "," + fmt(r.mean_inconsistency) + "," + std::to_string(r.pairs) + "," +
               std::to_string(r.skipped) + "\n";
    write_text(c.out + "/inconsistency.csv", csv);
    for (const InconsistencyRow& r : rows)
        std::printf("%-24s mean inconsistency %.6f over %zu pairs (%zu skipped)\n",
                    r.mixer.c_str(), r.mean_inconsistency, r.pairs, r.skipped);
}

void run_ablate_sigma(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    check_data_matches(ds, c.cfg.vit);
    const std::string values = c.values.empty() ? "0,0.5,1,2,3,4" : c.values;
    std::string csv = "sigma,val_top1\n";
    for (double sigma : split_doubles(values)) {
        TrainConfig tc = c.cfg;
        tc.mixer.kind = MixerKind::TdAttenMix;
        tc.mixer.sigma = sigma;
        TrainResult r = train(tc, ds);
        csv += fmt(sigma) + "," + fmt(r.val_top1.back()) + "\n";
        std::printf("sigma %-6g val top-1 %.4f\n", sigma, r.val_top1.back());
    }
    write_text(c.out + "/ablate_sigma.csv", csv);
}

void run_ablate_beta(const Cli& c) {
    SyntheticDataset ds = get_data(c);
    check_data_matches(ds, c.cfg.vit);
    const std::string values = c.values.empty() ? "0,0.3,0.5,0.7,1,random" : c.values;
    std::string csv = "beta,val_top1\n";
    for (const std::string& tok : split_list(values)) {
        TrainConfig tc = c.cfg;
        tc.mixer.kind = MixerKind::TdAttenMix;
        if (tok == "random") {
            tc.mixer.random_beta = true;
        } else {
            tc.mixer.random_beta = false;
            tc.mixer.beta = tdmix::detail::to_double("beta", tok);
        }
        TrainResult r = train(tc, ds);
        csv += tok + "," + fmt(r.val_top1.back()) + "\n";
        std::printf("beta %-8s val top-1 %.4f\n", tok.c_str(), r.val_top1.back());
    }
    write_text(c.out + "/ablate_beta.csv", csv);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-guided cutmix pipeline on a toy vision transformer"};
    app.require_subcommand(1);
    Cli c;
    int rc = 0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic glyph dataset");
    auto gen_keys = add_common(gen, c);
    gen->add_flag("--write-gaze", c.write_gaze, "emit per-record gaze grid files");
    gen->callback([&] {
        finalize(gen, c, gen_keys);
        run_gen_data(c);
    });

    auto* tr = app.add_subcommand("train", "train a model with the configured mixer");
    auto tr_keys = add_common(tr, c);
    tr->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    tr->callback([&] {
        finalize(tr, c, tr_keys);
        run_train(c);
    });

    auto* mx = app.add_subcommand("mix", "mix two records and render the evidence");
    auto mx_keys = add_common(mx, c);
    mx->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    mx->add_option("--model", c.model, "checkpoint for guidance grids (fresh init when absent)");
    mx->add_option("--a", c.rec_a, "source record index");
    mx->add_option("--b", c.rec_b, "target record index");
    mx->callback([&] {
        finalize(mx, c, mx_keys);
        run_mix(c);
    });

    auto* em = app.add_subcommand("eval-mixed", "accuracy on freshly mixed validation pairs");
    auto em_keys = add_common(em, c);
    em->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    em->add_option("--model", c.model, "trained checkpoint")->required();
    em->add_option("--pairs", c.pairs, "number of evaluation pairs");
    em->callback([&] {
        finalize(em, c, em_keys);
        run_eval_mixed(c, em->count("--fixed-delta") == 0);
    });

    auto* eo = app.add_subcommand("eval-occlusion", "patch-drop robustness curves");
    auto eo_keys = add_common(eo, c);
    eo->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    eo->add_option("--model", c.model, "trained checkpoint")->required();
    eo->add_option("--mode", c.mode, "random | salient | non-salient | all");
    eo->add_option("--ratios", c.ratios, "comma list of drop ratios in [0,1]");
    eo->callback([&] {
        finalize(eo, c, eo_keys);
        run_eval_occlusion(c);
    });

    auto* in = app.add_subcommand("inconsistency", "image-label inconsistency per mixer");
    auto in_keys = add_common(in, c);
    in->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    in->add_option("--model", c.model, "trained checkpoint (trains one when absent)");
    in->add_option("--pairs", c.pairs, "number of study pairs");
    in->add_option("--gaze-dir", c.gaze_dir, "directory of gaze grid files (mask-derived when absent)");
    in->callback([&] {
        finalize(in, c, in_keys);
        run_inconsistency(c);
    });

    auto* as = app.add_subcommand("ablate-sigma", "train once per sigma value");
    auto as_keys = add_common(as, c);
    as->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    as->add_option("--values", c.values, "comma list of sigma values");
    as->callback([&] {
        finalize(as, c, as_keys);
        run_ablate_sigma(c);
    });

    auto* ab = app.add_subcommand("ablate-beta", "train once per beta value");
    auto ab_keys = add_common(ab, c);
    ab->add_option("--data", c.data, "dataset file (generated in memory when absent)");
    ab->add_option("--values", c.values, "comma list of beta values, 'random' allowed");
    ab->callback([&] {
        finalize(ab, c, ab_keys);
        run_ablate_beta(c);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return rc;
}
