#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "tdmix/attention.hpp"
#include "tdmix/common.hpp"
#include "tdmix/tensor.hpp"

namespace tdmix {

namespace detail {

inline unsigned char quantize(double v, bool& clipped) {
    if (v < 0.0 || v > 1.0) clipped = true;
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

} // namespace detail

/// Binary PPM (P6, maxval 255). Out-of-range samples clip with one warning.
inline void write_ppm(const Tensor& img, const std::string& path) {
    if (img.shape().size() != 3 || img.shape()[2] != 3)
        throw ShapeError("write_ppm: expected H x W x 3");
    const std::size_t H = img.shape()[0], W = img.shape()[1];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    bool clipped = false;
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const unsigned char b = detail::quantize(img.at(r, c, ch), clipped);
                out.write(reinterpret_cast<const char*>(&b), 1);
            }
    if (!out) throw IoError("short write: " + path);
    if (clipped) std::fprintf(stderr, "warning: %s: samples outside [0,1] were clipped\n",
                              path.c_str());
}

/// Reads back a P6 file written by write_ppm (maxval 255 only).
inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    std::string magic;
    std::size_t W = 0, H = 0, maxval = 0;
    in >> magic >> W >> H >> maxval;
    if (magic != "P6" || W == 0 || H == 0 || maxval != 255 || W > 65535 || H > 65535)
        throw ParseError("unsupported ppm header in " + path, 0);
    in.get();  // single whitespace after maxval
    Tensor img({H, W, 3});
    std::vector<char> row(W * 3);
    for (std::size_t r = 0; r < H; ++r) {
        in.read(row.data(), static_cast<std::streamsize>(row.size()));
        if (static_cast<std::size_t>(in.gcount()) != row.size())
            throw ParseError("truncated ppm payload in " + path, 0);
        for (std::size_t c = 0; c < W; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) =
                    static_cast<double>(static_cast<unsigned char>(row[c * 3 + ch])) / 255.0;
    }
    return img;
}

/// Binary PGM (P5) of a grid, linearly rescaled so its max maps to 255.
inline void write_grid_pgm(const AttentionGrid& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out << "P5\n" << g.cols() << " " << g.rows() << "\n255\n";
    double mx = 0.0;
    for (double v : g.tensor().data()) mx = std::max(mx, v);
    if (mx == 0.0) mx = 1.0;
    for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
            const unsigned char b =
                static_cast<unsigned char>(std::lround(g.at(r, c) / mx * 255.0));
            out.write(reinterpret_cast<const char*>(&b), 1);
        }
    if (!out) throw IoError("short write: " + path);
}

/**
 * Heat overlay: the grid is upsampled patch-wise to pixel resolution,
 * mapped through a crude thermal ramp, and alpha-blended (0.5) onto the
 * image. Intended for eyeballing which windows the mixer picked.
 */
inline Tensor render_overlay(const Tensor& img, const AttentionGrid& g, std::size_t patch) {
    if (img.shape().size() != 3 || img.shape()[2] != 3)
        throw ShapeError("render_overlay: expected H x W x 3");
    const std::size_t H = img.shape()[0], W = img.shape()[1];
    if (g.rows() * patch != H || g.cols() * patch != W)
        throw ShapeError("render_overlay: grid x patch does not tile the image");
    double mx = 0.0;
    for (double v : g.tensor().data()) mx = std::max(mx, v);
    if (mx == 0.0) mx = 1.0;
    Tensor out({H, W, 3});
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            const double v = g.at(r / patch, c / patch) / mx;
            const double heat[3] = {std::clamp(3.0 * v, 0.0, 1.0),
                                    std::clamp(3.0 * v - 1.0, 0.0, 1.0),
                                    std::clamp(3.0 * v - 2.0, 0.0, 1.0)};
            for (std::size_t ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = 0.5 * img.at(r, c, ch) + 0.5 * heat[ch];
        }
    return out;
}

} // namespace tdmix
