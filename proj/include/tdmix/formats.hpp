#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/synthetic.hpp"
#include "tdmix/vit.hpp"

namespace tdmix {

inline constexpr char kDatasetMagic[] = "TDMIX-DS1";

/**
 * Dataset container format, little-endian throughout:
 *
 *   "TDMIX-DS1"                      9 bytes, no terminator
 *   u32 count, H, W, C, n_cls
 *   count records of:
 *     u32 label
 *     H*W*C f64 pixels, (row, col, channel) order
 *     ceil(H*W/8) bytes mask, row-major bits, LSB first
 *
 * The train/val split is not stored; it is a pure function of the record
 * order and is recomputed on load.
 */
inline void write_dataset(const SyntheticDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out.write(kDatasetMagic, 9);
    detail::put_u32(out, static_cast<std::uint32_t>(ds.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.H));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.W));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.C));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.n_cls));
    const std::size_t mask_bytes = (ds.H * ds.W + 7) / 8;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        detail::put_u32(out, static_cast<std::uint32_t>(ds.labels[i]));
        for (double v : ds.images[i].data()) detail::put_f64(out, v);
        std::vector<std::uint8_t> packed(mask_bytes, 0);
        for (std::size_t p = 0; p < ds.H * ds.W; ++p)
            if (ds.masks[i][p]) packed[p / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
        out.write(reinterpret_cast<const char*>(packed.data()),
                  static_cast<std::streamsize>(mask_bytes));
    }
    if (!out) throw IoError("short write: " + path);
}

inline SyntheticDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    detail::ByteReader r(in);
    r.expect_magic(kDatasetMagic);
    SyntheticDataset ds;
    const std::uint64_t count = r.u32("record count");
    ds.H = r.u32("height");
    ds.W = r.u32("width");
    ds.C = r.u32("channels");
    ds.n_cls = r.u32("class count");
    if (ds.H == 0 || ds.W == 0 || ds.C != 3 || ds.n_cls < 2 || ds.H > 1024 || ds.W > 1024 ||
        ds.n_cls > 1u << 16)
        throw ParseError("dataset header out of range", 9);
    const std::size_t mask_bytes = (ds.H * ds.W + 7) / 8;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t rec_off = r.offset();
        const std::uint32_t label = r.u32("record label");
        if (label >= ds.n_cls) throw ParseError("label out of range", rec_off);
        Tensor img({ds.H, ds.W, ds.C});
        for (double& v : img.data()) {
            const double x = r.f64("pixel");
            if (!std::isfinite(x)) throw ParseError("non-finite pixel", r.offset() - 8);
            v = x;
        }
        std::vector<std::uint8_t> packed(mask_bytes);
        r.raw(packed.data(), mask_bytes, "mask bits");
        std::vector<std::uint8_t> mask(ds.H * ds.W, 0);
        for (std::size_t p = 0; p < ds.H * ds.W; ++p)
            mask[p] = (packed[p / 8] >> (p % 8)) & 1u;
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
        ds.masks.push_back(std::move(mask));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw ParseError("trailing bytes after last record", r.offset());
    assign_split(ds);
    return ds;
}

/**
 * Text grid format: first line "rows cols", then rows lines of cols
 * non-negative reals. Values are normalized to sum 1 on load, so files may
 * store raw (for example count-valued) grids.
 */
inline void write_gaze_grid(const AttentionGrid& g, const std::string& path) {
    std::ostringstream os;
    os << g.rows() << " " << g.cols() << "\n";
    char buf[64];
    for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", g.at(r, c));
            os << (c ? " " : "") << buf;
        }
        os << "\n";
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    out << os.str();
    if (!out) throw IoError("short write: " + path);
}

inline AttentionGrid read_gaze_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for read: " + path);
    std::size_t rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows == 0 || cols == 0 || rows * cols > (1u << 20))
        throw ParseError("bad gaze grid header in " + path, 0);
    Tensor raw({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double v = 0;
            if (!(in >> v) || !std::isfinite(v) || v < 0)
                throw ParseError("bad gaze grid value in " + path, 0);
            raw.at(r, c) = v;
        }
    return AttentionGrid::normalized(rows, cols, raw);
}

/// Canonical per-record gaze file name inside a gaze directory.
inline std::string gaze_file_name(std::size_t record) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "gaze_%06zu.txt", record);
    return buf;
}

} // namespace tdmix
