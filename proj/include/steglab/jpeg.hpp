#pragma once

// Blockwise 8x8 DCT codec: quantized coefficients for embedding, real-valued
// (non-rounded, non-clamped) decompression for network and feature input.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "steglab/bytes.hpp"
#include "steglab/error.hpp"
#include "steglab/parallel.hpp"

namespace steglab {

struct GrayImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    GrayImage() = default;
    GrayImage(int h_, int w_) : h(h_), w(w_), pixels(static_cast<std::size_t>(h_) * w_, 0) {
        require(h_ >= 1 && w_ >= 1, "GrayImage: dimensions must be positive");
    }
    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }
};

struct QuantTable {
    std::array<int, 64> q{};  // row-major 8x8, entries in [1,255]
};

struct CoefficientImage {
    int h = 0, w = 0;  // pixel dimensions, multiples of 8
    QuantTable qtable;
    std::vector<std::int16_t> coeffs;  // blocks in raster order, 64 row-major entries each

    CoefficientImage() = default;
    CoefficientImage(int h_, int w_)
        : h(h_), w(w_), coeffs(static_cast<std::size_t>(h_) * w_, 0) {
        require(h_ >= 8 && w_ >= 8 && h_ % 8 == 0 && w_ % 8 == 0,
                "CoefficientImage: dimensions must be positive multiples of 8");
    }
    int block_rows() const { return h / 8; }
    int block_cols() const { return w / 8; }
    std::int16_t* block(int bi, int bj) {
        return coeffs.data() + (static_cast<std::size_t>(bi) * block_cols() + bj) * 64;
    }
    const std::int16_t* block(int bi, int bj) const {
        return coeffs.data() + (static_cast<std::size_t>(bi) * block_cols() + bj) * 64;
    }
};

struct RealImage {
    int h = 0, w = 0;
    std::vector<double> values;  // row-major; may lie outside [0,255]

    RealImage() = default;
    RealImage(int h_, int w_) : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, 0.0) {
        require(h_ >= 1 && w_ >= 1, "RealImage: dimensions must be positive");
    }
    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
};

// Standard luminance base quantization table.
inline const std::array<int, 64>& luminance_base_table() {
    static const std::array<int, 64> base = {
        16, 11, 10, 16, 24,  40,  51,  61,   //
        12, 12, 14, 19, 26,  58,  60,  55,   //
        14, 13, 16, 24, 40,  57,  69,  56,   //
        14, 17, 22, 29, 51,  87,  80,  62,   //
        18, 22, 37, 56, 68,  109, 103, 77,   //
        24, 35, 55, 64, 81,  104, 113, 92,   //
        49, 64, 78, 87, 103, 121, 120, 101,  //
        72, 92, 95, 98, 112, 100, 103, 99};
    return base;
}

inline QuantTable quality_to_qtable(int qf) {
    require(qf >= 1 && qf <= 100, "quality_to_qtable: qf must be in [1,100], got " +
                                      std::to_string(qf));
    const int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
    QuantTable qt;
    const auto& base = luminance_base_table();
    for (int i = 0; i < 64; ++i) {
        int v = (base[i] * scale + 50) / 100;
        qt.q[i] = std::clamp(v, 1, 255);
    }
    return qt;
}

namespace detail {
// Orthonormal DCT-II basis matrix: dct8[u][x] = c(u)·cos((2x+1)uπ/16).
inline const std::array<std::array<double, 8>, 8>& dct8_matrix() {
    static const auto m = [] {
        std::array<std::array<double, 8>, 8> a{};
        const double pi = std::acos(-1.0);
        for (int u = 0; u < 8; ++u) {
            const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x) a[u][x] = c * std::cos((2 * x + 1) * u * pi / 16.0);
        }
        return a;
    }();
    return m;
}

inline void dct8x8_forward(const double in[64], double out[64]) {
    const auto& m = dct8_matrix();
    double tmp[64];
    for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int y = 0; y < 8; ++y) s += m[u][y] * in[x * 8 + y];
            tmp[x * 8 + u] = s;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int x = 0; x < 8; ++x) s += m[u][x] * tmp[x * 8 + v];
            out[u * 8 + v] = s;
        }
}

inline void dct8x8_inverse(const double in[64], double out[64]) {
    const auto& m = dct8_matrix();
    double tmp[64];
    for (int x = 0; x < 8; ++x)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int u = 0; u < 8; ++u) s += m[u][x] * in[u * 8 + v];
            tmp[x * 8 + v] = s;
        }
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y) {
            double s = 0.0;
            for (int v = 0; v < 8; ++v) s += m[v][y] * tmp[x * 8 + v];
            out[x * 8 + y] = s;
        }
}

inline double round_half_away(double v) { return std::round(v); }
}  // namespace detail

inline CoefficientImage compress(const GrayImage& img, const QuantTable& qt) {
    require(img.h % 8 == 0 && img.w % 8 == 0,
            "compress: image dimensions " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                " must be multiples of 8");
    CoefficientImage ci(img.h, img.w);
    ci.qtable = qt;
    const int br = ci.block_rows(), bc = ci.block_cols();
    parallel_for(0, static_cast<std::int64_t>(br) * bc, [&](std::int64_t t) {
        const int bi = static_cast<int>(t / bc), bj = static_cast<int>(t % bc);
        double blk[64], f[64];
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                blk[y * 8 + x] = static_cast<double>(img.at(bi * 8 + y, bj * 8 + x)) - 128.0;
        detail::dct8x8_forward(blk, f);
        std::int16_t* out = ci.block(bi, bj);
        for (int i = 0; i < 64; ++i)
            out[i] = static_cast<std::int16_t>(detail::round_half_away(f[i] / qt.q[i]));
    });
    return ci;
}

inline RealImage decompress_real(const CoefficientImage& ci) {
    RealImage img(ci.h, ci.w);
    const int br = ci.block_rows(), bc = ci.block_cols();
    parallel_for(0, static_cast<std::int64_t>(br) * bc, [&](std::int64_t t) {
        const int bi = static_cast<int>(t / bc), bj = static_cast<int>(t % bc);
        double f[64], blk[64];
        const std::int16_t* in = ci.block(bi, bj);
        for (int i = 0; i < 64; ++i) f[i] = static_cast<double>(in[i]) * ci.qtable.q[i];
        detail::dct8x8_inverse(f, blk);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) img.at(bi * 8 + y, bj * 8 + x) = blk[y * 8 + x] + 128.0;
    });
    return img;
}

// Rounds half away from zero and clamps to [0,255]; used when a pixel image is needed.
inline GrayImage quantize_to_gray(const RealImage& r) {
    GrayImage g(r.h, r.w);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        const double v = detail::round_half_away(r.values[i]);
        g.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return g;
}

inline std::int64_t nonzero_ac_count(const CoefficientImage& ci) {
    std::int64_t count = 0;
    const int br = ci.block_rows(), bc = ci.block_cols();
    for (int bi = 0; bi < br; ++bi)
        for (int bj = 0; bj < bc; ++bj) {
            const std::int16_t* b = ci.block(bi, bj);
            for (int i = 1; i < 64; ++i) count += b[i] != 0;
        }
    return count;
}

namespace detail {
// PGM header tokenizer: skips whitespace and '#' comments, byte offsets for errors.
inline std::string next_pgm_token(const std::vector<std::uint8_t>& d, std::size_t& pos) {
    while (pos < d.size()) {
        const char c = static_cast<char>(d[pos]);
        if (c == '#') {
            while (pos < d.size() && d[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= d.size()) throw ParseError("unexpected end of PGM header", pos);
    std::string tok;
    while (pos < d.size()) {
        const char c = static_cast<char>(d[pos]);
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') break;
        tok.push_back(c);
        ++pos;
    }
    return tok;
}

inline int parse_pgm_int(const std::vector<std::uint8_t>& d, std::size_t& pos,
                         const char* what) {
    const std::size_t start = pos;
    const std::string tok = next_pgm_token(d, pos);
    for (char c : tok)
        if (c < '0' || c > '9')
            throw ParseError(std::string("PGM ") + what + " is not a number: '" + tok + "'",
                             start);
    if (tok.empty() || tok.size() > 9)
        throw ParseError(std::string("bad PGM ") + what, start);
    return std::stoi(tok);
}
}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    std::size_t pos = 0;
    if (d.size() < 2 || d[0] != 'P' || d[1] != '5') {
        std::string magic;
        for (std::size_t i = 0; i < d.size() && i < 2; ++i)
            magic.push_back(static_cast<char>(d[i]));
        throw ParseError("not a binary PGM (P5), magic '" + magic + "'", 0);
    }
    pos = 2;
    const int w = detail::parse_pgm_int(d, pos, "width");
    const int h = detail::parse_pgm_int(d, pos, "height");
    const std::size_t maxval_at = pos;
    const int maxval = detail::parse_pgm_int(d, pos, "maxval");
    if (w < 1 || h < 1) throw ParseError("PGM dimensions must be positive", 2);
    if (maxval != 255) throw ParseError("PGM maxval must be 255, got " + std::to_string(maxval),
                                        maxval_at);
    if (pos >= d.size()) throw ParseError("missing PGM pixel data", pos);
    ++pos;  // single whitespace byte after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h;
    if (d.size() - pos < need)
        throw ParseError("PGM pixel data truncated: need " + std::to_string(need) + " bytes, have " +
                             std::to_string(d.size() - pos),
                         pos);
    GrayImage img(h, w);
    std::copy(d.begin() + pos, d.begin() + pos + need, img.pixels.begin());
    return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    ByteWriter bw;
    bw.str("P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n");
    bw.bytes(img.pixels.data(), img.pixels.size());
    write_file(path, bw.data());
}

inline constexpr char kStgcMagic[4] = {'S', 'T', 'G', 'C'};
inline constexpr std::uint16_t kStgcVersion = 1;

inline void write_stgc(const std::string& path, const CoefficientImage& ci) {
    ByteWriter bw;
    bw.bytes(kStgcMagic, 4);
    bw.u16(kStgcVersion);
    bw.u32(static_cast<std::uint32_t>(ci.h));
    bw.u32(static_cast<std::uint32_t>(ci.w));
    for (int i = 0; i < 64; ++i) bw.u8(static_cast<std::uint8_t>(ci.qtable.q[i]));
    for (std::int16_t c : ci.coeffs) bw.i16(c);
    write_file(path, bw.data());
}

inline CoefficientImage read_stgc(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    ByteReader br(d.data(), d.size());
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, kStgcMagic, 4) != 0)
        throw ParseError("bad coefficient container magic", 0);
    const std::uint16_t ver = br.u16();
    if (ver != kStgcVersion)
        throw ParseError("unsupported coefficient container version " + std::to_string(ver), 4);
    const std::uint32_t h = br.u32();
    const std::uint32_t w = br.u32();
    if (h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 || h > (1u << 20) || w > (1u << 20))
        throw ParseError("bad coefficient container dimensions " + std::to_string(h) + "x" +
                             std::to_string(w),
                         6);
    CoefficientImage ci(static_cast<int>(h), static_cast<int>(w));
    for (int i = 0; i < 64; ++i) {
        ci.qtable.q[i] = br.u8();
        if (ci.qtable.q[i] < 1)
            throw ParseError("quantization entry must be >= 1", 14 + static_cast<std::size_t>(i));
    }
    for (auto& c : ci.coeffs) c = br.i16();
    return ci;
}

// Separable bilinear resampling; output pixels rounded half away from zero.
inline GrayImage resize_bilinear(const GrayImage& src, int oh, int ow) {
    require(oh >= 1 && ow >= 1, "resize_bilinear: output dimensions must be positive");
    GrayImage dst(oh, ow);
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                             wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
            dst.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
        }
    }
    return dst;
}

// Top-left crop to the largest block-aligned size.
inline GrayImage crop_to_block_multiple(const GrayImage& src) {
    const int h = src.h - src.h % 8, w = src.w - src.w % 8;
    require(h >= 8 && w >= 8, "crop_to_block_multiple: image smaller than one 8x8 block");
    if (h == src.h && w == src.w) return src;
    GrayImage dst(h, w);
    for (int y = 0; y < h; ++y)
        std::copy(src.pixels.begin() + static_cast<std::size_t>(y) * src.w,
                  src.pixels.begin() + static_cast<std::size_t>(y) * src.w + w,
                  dst.pixels.begin() + static_cast<std::size_t>(y) * w);
    return dst;
}

}  // namespace steglab
