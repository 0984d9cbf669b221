#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/losses.hpp"
#include "tdmix/mixers.hpp"
#include "tdmix/train.hpp"

namespace tdmix {

inline GridReduction parse_reduction(const std::string& s) {
    if (s == "received-x-norm") return GridReduction::ReceivedTimesNorm;
    if (s == "column-sum") return GridReduction::ColumnSum;
    if (s == "output-norm") return GridReduction::OutputNorm;
    throw ConfigError("unknown reduction '" + s +
                      "' (received-x-norm, column-sum, output-norm)");
}

inline LossMode parse_loss_mode(const std::string& s) {
    if (s == "resnet") return LossMode::ResnetStyle;
    if (s == "vit") return LossMode::VitStyle;
    throw ConfigError("unknown loss mode '" + s + "' (resnet, vit)");
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline double to_double(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + k + "': '" + v + "' is not a number");
    }
}

inline std::uint64_t to_u64(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + k + "': '" + v + "' is not a non-negative integer");
    }
}

inline bool to_bool(const std::string& k, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + k + "': '" + v + "' is not a boolean");
}

} // namespace detail

/**
 * Flat key=value text. '#' starts a comment, blank lines are skipped, the
 * last assignment to a key wins. Key validity is checked when the map is
 * applied to a TrainConfig.
 */
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" +
                              line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = val;
    }
    return kv;
}

/**
 * Apply file values onto cfg, skipping keys named in `overridden` (flags
 * given on the command line win). Every TrainConfig field is addressable;
 * an unknown key is a config error.
 */
inline void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv,
                         const std::set<std::string>& overridden = {}) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_u64;
    for (const auto& [k, v] : kv) {
        if (overridden.count(k)) continue;
        if (k == "seed") cfg.seed = to_u64(k, v);
        else if (k == "epochs") cfg.epochs = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "batch-size") cfg.batch_size = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "lr") cfg.lr = to_double(k, v);
        else if (k == "momentum") cfg.momentum = to_double(k, v);
        else if (k == "loss-mode") cfg.loss_mode = parse_loss_mode(v);
        else if (k == "check-every") cfg.check_every = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "mixer") cfg.mixer.kind = parse_mixer(v);
        else if (k == "sigma") cfg.mixer.sigma = to_double(k, v);
        else if (k == "beta") cfg.mixer.beta = to_double(k, v);
        else if (k == "random-beta") cfg.mixer.random_beta = to_bool(k, v);
        else if (k == "reduction") cfg.mixer.reduction = parse_reduction(v);
        else if (k == "bottom-up-only") cfg.mixer.bottom_up_only = to_bool(k, v);
        else if (k == "fixed-delta") cfg.mixer.fixed_delta = to_double(k, v);
        else if (k == "image-h") cfg.vit.image_h = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "image-w") cfg.vit.image_w = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "channels") cfg.vit.channels = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "patch") cfg.vit.patch = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "embed-dim") cfg.vit.embed_dim = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "heads") cfg.vit.heads = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "blocks") cfg.vit.blocks = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "classes") cfg.vit.classes = static_cast<std::size_t>(to_u64(k, v));
        else if (k == "model-seed") cfg.vit.seed = to_u64(k, v);
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

} // namespace tdmix
