#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdmix/autodiff.hpp"
#include "tdmix/common.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

/// Geometry and sizing of the toy vision transformer.
struct VitConfig {
    std::size_t image_h = 32;
    std::size_t image_w = 32;
    std::size_t channels = 3;
    std::size_t patch = 4;
    std::size_t embed_dim = 32;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t classes = 8;
    std::uint64_t seed = 1;

    std::size_t grid_rows() const { return image_h / patch; }
    std::size_t grid_cols() const { return image_w / patch; }
    std::size_t tokens() const { return grid_rows() * grid_cols(); }
    std::size_t token_dim_raw() const { return patch * patch * channels; }
    std::size_t mlp_hidden() const { return 2 * embed_dim; }

    void validate() const {
        if (image_h == 0 || image_w == 0 || channels == 0 || patch == 0 || embed_dim == 0 ||
            heads == 0 || blocks == 0 || classes == 0)
            throw ConfigError("vit config: all extents must be positive");
        if (image_h % patch != 0 || image_w % patch != 0)
            throw ConfigError("vit config: patch size " + std::to_string(patch) +
                              " must divide image " + std::to_string(image_h) + "x" +
                              std::to_string(image_w));
        if (embed_dim % heads != 0)
            throw ConfigError("vit config: embed_dim must be divisible by heads");
    }
};

/**
 * Split an H x W x C image into non-overlapping P x P patches, row-major over
 * the patch grid. Token k is the row-major (row, col, channel) flattening of
 * patch (k / (W/P), k % (W/P)).
 */
inline Tensor patchify(const Tensor& image, std::size_t P) {
    if (image.rank() != 3) throw ShapeError("patchify: expected H x W x C image");
    const std::size_t H = image.extent(0), W = image.extent(1), C = image.extent(2);
    if (P == 0 || H % P != 0 || W % P != 0)
        throw ConfigError("patchify: patch size must divide image dimensions");
    const std::size_t gr = H / P, gc = W / P;
    Tensor tokens({gr * gc, P * P * C});
    for (std::size_t pr = 0; pr < gr; ++pr)
        for (std::size_t pc = 0; pc < gc; ++pc) {
            const std::size_t k = pr * gc + pc;
            std::size_t o = 0;
            for (std::size_t r = 0; r < P; ++r)
                for (std::size_t c = 0; c < P; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        tokens.at(k, o++) = image.at(pr * P + r, pc * P + c, ch);
        }
    return tokens;
}

/// Exact inverse of patchify.
inline Tensor unpatchify(const Tensor& tokens, std::size_t H, std::size_t W, std::size_t C,
                         std::size_t P) {
    if (tokens.rank() != 2) throw ShapeError("unpatchify: expected token matrix");
    const std::size_t gr = H / P, gc = W / P;
    if (tokens.extent(0) != gr * gc || tokens.extent(1) != P * P * C)
        throw ShapeError("unpatchify: token matrix does not match geometry");
    Tensor image({H, W, C});
    for (std::size_t pr = 0; pr < gr; ++pr)
        for (std::size_t pc = 0; pc < gc; ++pc) {
            const std::size_t k = pr * gc + pc;
            std::size_t o = 0;
            for (std::size_t r = 0; r < P; ++r)
                for (std::size_t c = 0; c < P; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        image.at(pr * P + r, pc * P + c, ch) = tokens.at(k, o++);
        }
    return image;
}

struct VitBlockParams {
    Tensor w_q, w_k, w_v;   // d x d
    Tensor w_mlp1, w_mlp2;  // d x 2d, 2d x d
};

/**
 * Parameter store of the toy ViT. Classification is mean-pool over image
 * tokens followed by the d x n_cls classifier matrix; there is no class
 * token, so every attention row maps to an image patch.
 */
struct VitModel {
    VitConfig cfg;
    Tensor w_embed;  // (P^2 C) x d patch embedding
    std::vector<VitBlockParams> blocks;
    Tensor w_cls;  // d x n_cls

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, deterministic from cfg.seed.
    static VitModel init(const VitConfig& cfg) {
        cfg.validate();
        VitModel m;
        m.cfg = cfg;
        rng::Stream rs(rng::derive(cfg.seed, 0x76697431ULL));
        auto u = [&rs](std::size_t rows, std::size_t cols) {
            const double b = 1.0 / std::sqrt(static_cast<double>(rows));
            return Tensor::random_uniform({rows, cols}, rs, -b, b);
        };
        const std::size_t d = cfg.embed_dim;
        m.w_embed = u(cfg.token_dim_raw(), d);
        for (std::size_t l = 0; l < cfg.blocks; ++l) {
            VitBlockParams b;
            b.w_q = u(d, d);
            b.w_k = u(d, d);
            b.w_v = u(d, d);
            b.w_mlp1 = u(d, cfg.mlp_hidden());
            b.w_mlp2 = u(cfg.mlp_hidden(), d);
            m.blocks.push_back(std::move(b));
        }
        m.w_cls = u(d, cfg.classes);
        return m;
    }

    /// Parameter tensors in declaration order (checkpoint and optimizer order).
    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> p{&w_embed};
        for (VitBlockParams& b : blocks) {
            p.push_back(&b.w_q);
            p.push_back(&b.w_k);
            p.push_back(&b.w_v);
            p.push_back(&b.w_mlp1);
            p.push_back(&b.w_mlp2);
        }
        p.push_back(&w_cls);
        return p;
    }
    std::vector<const Tensor*> parameters() const {
        std::vector<const Tensor*> p{&w_embed};
        for (const VitBlockParams& b : blocks) {
            p.push_back(&b.w_q);
            p.push_back(&b.w_k);
            p.push_back(&b.w_v);
            p.push_back(&b.w_mlp1);
            p.push_back(&b.w_mlp2);
        }
        p.push_back(&w_cls);
        return p;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor* t : parameters()) n += t->numel();
        return n;
    }
};

/// Column y of the classifier matrix as a d x 1 tensor (copy, never a view
/// into the model).
inline Tensor classifier_column(const VitModel& m, std::size_t y) {
    if (y >= m.cfg.classes)
        throw std::out_of_range("classifier_column: class " + std::to_string(y) +
                                " out of range (n_cls=" + std::to_string(m.cfg.classes) + ")");
    const std::size_t d = m.cfg.embed_dim;
    Tensor col({d, 1});
    for (std::size_t i = 0; i < d; ++i) col.at(i, 0) = m.w_cls.at(i, y);
    return col;
}

/// Parameter leaves of one model on one tape, declaration order.
struct VitParamValues {
    ad::Value w_embed;
    struct Block {
        ad::Value w_q, w_k, w_v, w_mlp1, w_mlp2;
    };
    std::vector<Block> blocks;
    ad::Value w_cls;

    static VitParamValues leaves(ad::Tape& tape, const VitModel& m) {
        VitParamValues p;
        p.w_embed = tape.leaf(m.w_embed);
        for (const VitBlockParams& b : m.blocks)
            p.blocks.push_back({tape.leaf(b.w_q), tape.leaf(b.w_k), tape.leaf(b.w_v),
                                tape.leaf(b.w_mlp1), tape.leaf(b.w_mlp2)});
        p.w_cls = tape.leaf(m.w_cls);
        return p;
    }

    std::vector<ad::Value> all() const {
        std::vector<ad::Value> v{w_embed};
        for (const Block& b : blocks) {
            v.push_back(b.w_q);
            v.push_back(b.w_k);
            v.push_back(b.w_v);
            v.push_back(b.w_mlp1);
            v.push_back(b.w_mlp2);
        }
        v.push_back(w_cls);
        return v;
    }
};

struct VitBlockTrace {
    ad::Value q, k, v;  // full N x d projections of the block input
};

struct VitForwardRec {
    ad::Value logits;       // n_cls
    ad::Value tokens;       // N x d input tokens of the final block
    std::vector<VitBlockTrace> blocks;
};

namespace detail {
/// Standard multi-head self-attention over recorded values.
inline ad::Value multi_head_attention(ad::Value q, ad::Value k, ad::Value v, std::size_t heads) {
    const std::size_t d = q.tape->value(q).extent(1);
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Value> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        ad::Value qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        ad::Value kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        ad::Value vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        ad::Value a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
        outs.push_back(ad::matmul(a, vh));
    }
    return heads == 1 ? outs[0] : ad::concat_cols(outs);
}
} // namespace detail

/**
 * Recorded forward pass. The trace carries the final block's input tokens and
 * every block's full Q/K/V, which the mixing pipeline reads.
 */
inline VitForwardRec vit_forward(ad::Tape& tape, const VitConfig& cfg, const VitParamValues& p,
                                 const Tensor& image) {
    cfg.validate();
    if (image.rank() != 3 || image.extent(0) != cfg.image_h || image.extent(1) != cfg.image_w ||
        image.extent(2) != cfg.channels)
        throw ShapeError("vit_forward: image " + image.shape_str() + " does not match config");
    VitForwardRec out;
    ad::Value t = ad::matmul(tape.leaf(patchify(image, cfg.patch)), p.w_embed);
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
        if (l == cfg.blocks - 1) out.tokens = t;
        ad::Value q = ad::matmul(t, p.blocks[l].w_q);
        ad::Value k = ad::matmul(t, p.blocks[l].w_k);
        ad::Value v = ad::matmul(t, p.blocks[l].w_v);
        out.blocks.push_back({q, k, v});
        ad::Value t1 = ad::add(t, detail::multi_head_attention(q, k, v, cfg.heads));
        ad::Value m = ad::matmul(ad::relu(ad::matmul(t1, p.blocks[l].w_mlp1)), p.blocks[l].w_mlp2);
        t = ad::add(t1, m);
    }
    ad::Value pooled = ad::reshape(ad::mean_rows(t), {1, cfg.embed_dim});
    out.logits = ad::reshape(ad::matmul(pooled, p.w_cls), {cfg.classes});
    return out;
}

struct VitForwardPlain {
    Tensor logits;  // n_cls
    Tensor tokens;  // N x d input tokens of the final block
    struct Block {
        Tensor q, k, v;
    };
    std::vector<Block> blocks;
};

/// Forward pass without recording; same computation, plain tensors out.
inline VitForwardPlain vit_forward(const VitModel& m, const Tensor& image) {
    ad::Tape tape(false);
    VitParamValues p = VitParamValues::leaves(tape, m);
    VitForwardRec rec = vit_forward(tape, m.cfg, p, image);
    VitForwardPlain out;
    out.logits = tape.value(rec.logits);
    out.tokens = tape.value(rec.tokens);
    for (const VitBlockTrace& b : rec.blocks)
        out.blocks.push_back({tape.value(b.q), tape.value(b.k), tape.value(b.v)});
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "TDMIX-CKPT1", config as little-endian u32s + u64 seed,
// then parameter tensors in declaration order as little-endian f64.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}
inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    static_assert(sizeof v == sizeof d);
    std::memcpy(&v, &d, sizeof v);
    put_u64(os, v);
}

/// Reader that tracks its byte offset for parse errors.
class ByteReader {
public:
    explicit ByteReader(std::istream& is) : is_(is) {}
    std::uint64_t offset() const { return off_; }

    void raw(void* dst, std::size_t n, const char* what) {
        is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw ParseError(std::string("truncated file while reading ") + what, off_);
        off_ += n;
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        raw(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t lo = u32(what);
        std::uint64_t hi = u32(what);
        return lo | (hi << 32);
    }
    double f64(const char* what) {
        std::uint64_t v = u64(what);
        double d;
        std::memcpy(&d, &v, sizeof d);
        return d;
    }
    void expect_magic(const std::string& magic) {
        std::string got(magic.size(), '\0');
        raw(got.data(), got.size(), "magic");
        if (got != magic) throw ParseError("bad magic, expected \"" + magic + "\"", 0);
    }

private:
    std::istream& is_;
    std::uint64_t off_ = 0;
};

} // namespace detail

inline constexpr const char* kCheckpointMagic = "TDMIX-CKPT1";

inline void save_checkpoint(const VitModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 11);
    for (std::size_t v : {m.cfg.image_h, m.cfg.image_w, m.cfg.channels, m.cfg.patch,
                          m.cfg.embed_dim, m.cfg.heads, m.cfg.blocks, m.cfg.classes})
        detail::put_u32(os, static_cast<std::uint32_t>(v));
    detail::put_u64(os, m.cfg.seed);
    for (const Tensor* t : m.parameters())
        for (std::size_t i = 0; i < t->numel(); ++i) detail::put_f64(os, (*t)[i]);
    if (!os) throw IoError("write failed: " + path);
}

inline VitModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    detail::ByteReader r(is);
    r.expect_magic(kCheckpointMagic);
    VitConfig cfg;
    cfg.image_h = r.u32("image_h");
    cfg.image_w = r.u32("image_w");
    cfg.channels = r.u32("channels");
    cfg.patch = r.u32("patch");
    cfg.embed_dim = r.u32("embed_dim");
    cfg.heads = r.u32("heads");
    cfg.blocks = r.u32("blocks");
    cfg.classes = r.u32("classes");
    cfg.seed = r.u64("seed");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint config invalid: ") + e.what(), r.offset());
    }
    VitModel m = VitModel::init(cfg);
    for (Tensor* t : m.parameters()) {
        std::vector<double> data(t->numel());
        for (double& x : data) x = r.f64("parameter data");
        try {
            *t = Tensor(t->shape(), std::move(data));
        } catch (const NumericError& e) {
            throw ParseError(std::string("checkpoint parameters: ") + e.what(), r.offset());
        }
    }
    return m;
}

} // namespace tdmix
