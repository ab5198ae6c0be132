#pragma once

// Gabor filter residual features: even-symmetric 8x8 Gabor bank, residual
// quantize/truncate, per-phase histograms folded to 25 symmetry classes.
// The selection-channel-aware variant weighs each residual sample by the
// average change probability of the coefficients that influence it.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "steglab/bytes.hpp"
#include "steglab/error.hpp"
#include "steglab/jpeg.hpp"
#include "steglab/parallel.hpp"

namespace steglab {

// ---------------------------------------------------------------------------
// Filter bank.
// ---------------------------------------------------------------------------

struct GaborBank {
    std::vector<std::array<double, 64>> kernels;  // scale-major, then orientation
    std::vector<double> scales;
    int n_orient = 0;
};

// Even-symmetric real Gabor on an 8x8 grid (offsets -3.5..3.5), wavelength
// lambda = sigma/0.56, aspect 0.5; L2-normalized, then mean-subtracted so
// every kernel has exactly zero DC response.
inline std::array<double, 64> gabor_kernel(double sigma, double theta) {
    require(sigma > 0.0, "gabor_kernel: sigma must be positive");
    const double lambda = sigma / 0.56;
    const double gamma = 0.5;
    const double ct = std::cos(theta), st = std::sin(theta);
    std::array<double, 64> g{};
    for (int ky = 0; ky < 8; ++ky)
        for (int kx = 0; kx < 8; ++kx) {
            const double y = ky - 3.5, x = kx - 3.5;
            const double xr = x * ct + y * st;
            const double yr = -x * st + y * ct;
            g[ky * 8 + kx] = std::exp(-(xr * xr + gamma * gamma * yr * yr) / (2 * sigma * sigma)) *
                             std::cos(2.0 * std::acos(-1.0) * xr / lambda);
        }
    double norm = 0.0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : g) v /= norm;
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= 64.0;
    for (double& v : g) v -= mean;
    return g;
}

inline GaborBank build_gabor_bank(std::vector<double> scales = {0.5, 0.75, 1.0, 1.25},
                                  int n_orient = 16) {
    require(n_orient >= 1, "build_gabor_bank: need at least one orientation");
    require(!scales.empty(), "build_gabor_bank: need at least one scale");
    GaborBank bank;
    bank.scales = std::move(scales);
    bank.n_orient = n_orient;
    const double pi = std::acos(-1.0);
    for (double sigma : bank.scales)
        for (int o = 0; o < n_orient; ++o)
            bank.kernels.push_back(gabor_kernel(sigma, o * pi / n_orient));
    return bank;
}

// ---------------------------------------------------------------------------
// Residual histogram features.
// ---------------------------------------------------------------------------

// Phase fold a -> min(a, (8-a) mod 8), giving 5 values per axis, 25 classes.
inline int fold_phase(int a) {
    const int m = (8 - a) % 8;
    return a < m ? a : m;
}

inline std::size_t gfr_dim(const GaborBank& bank, int t_f) {
    return bank.kernels.size() * 25 * (2 * static_cast<std::size_t>(t_f) + 1);
}

// Lower median of the quantization table; the default residual quantizer is
// 2*median/8.
inline double default_gfr_quantizer(const QuantTable& qt) {
    std::array<int, 64> s = {};
    std::copy(qt.q.begin(), qt.q.end(), s.begin());
    std::sort(s.begin(), s.end());
    return 2.0 * s[31] / 8.0;
}

// Per-coefficient embedding-change probabilities plus the quantization table
// needed to propagate them into the pixel domain. Layout matches
// CoefficientImage::coeffs (block raster, 64 row-major entries per block).
struct ChangeProbMap {
    int h = 0, w = 0;
    QuantTable qtable;
    std::vector<double> p;
};

// Ground truth for the rate-matched ±1 simulator: probability beta on every
// nonzero AC, 0 on DC and zero ACs.
inline ChangeProbMap simulator_change_probs(const CoefficientImage& cover, double beta) {
    require(beta >= 0.0 && beta <= 1.0, "simulator_change_probs: beta must be in [0,1]");
    ChangeProbMap m;
    m.h = cover.h;
    m.w = cover.w;
    m.qtable = cover.qtable;
    m.p.assign(cover.coeffs.size(), 0.0);
    for (std::size_t b = 0; b < cover.coeffs.size() / 64; ++b)
        for (int i = 1; i < 64; ++i)
            if (cover.coeffs[b * 64 + i] != 0) m.p[b * 64 + i] = beta;
    return m;
}

namespace detail {

// Average change probability seen by each pixel: weights are the absolute
// pixel-domain magnitudes qtable * |idct basis| of the block's coefficients.
inline std::vector<double> pixel_change_weights(const ChangeProbMap& m) {
    const auto& basis = dct8_matrix();
    // mag[coeff u*8+v][pixel y*8+x]
    static thread_local std::vector<double> mag;
    std::vector<double> denom(64, 0.0);
    mag.assign(64 * 64, 0.0);
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const double w = m.qtable.q[u * 8 + v] * std::abs(basis[u][y] * basis[v][x]);
                    mag[(u * 8 + v) * 64 + y * 8 + x] = w;
                    denom[y * 8 + x] += w;
                }
    const int bc = m.w / 8;
    std::vector<double> delta(static_cast<std::size_t>(m.h) * m.w, 0.0);
    for (int bi = 0; bi < m.h / 8; ++bi)
        for (int bj = 0; bj < bc; ++bj) {
            const double* p = m.p.data() + (static_cast<std::size_t>(bi) * bc + bj) * 64;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    double num = 0.0;
                    for (int c = 0; c < 64; ++c) num += p[c] * mag[c * 64 + y * 8 + x];
                    delta[static_cast<std::size_t>(bi * 8 + y) * m.w + bj * 8 + x] =
                        num / denom[y * 8 + x];
                }
        }
    return delta;
}

inline std::vector<float> gfr_extract_impl(const RealImage& img, const GaborBank& bank, double q,
                                           int t_f, const std::vector<double>* delta) {
    require(img.h % 8 == 0 && img.w % 8 == 0,
            "gfr extract: image dimensions must be multiples of 8");
    require(img.h >= 16 && img.w >= 16, "gfr extract: image too small for 8x8 residuals");
    require(q > 0.0, "gfr extract: quantizer must be positive");
    require(t_f >= 1, "gfr extract: truncation must be >= 1");

    const int bins = 2 * t_f + 1;
    const int rh = img.h - 7, rw = img.w - 7;
    const std::size_t per_kernel = static_cast<std::size_t>(25) * bins;
    std::vector<float> feature(bank.kernels.size() * per_kernel, 0.0f);

    // Residual samples per folded class, for normalization (same for all
    // kernels; depends only on the grid).
    std::array<double, 25> class_count{};
    for (int i = 0; i < rh; ++i)
        for (int j = 0; j < rw; ++j) class_count[fold_phase(i % 8) * 5 + fold_phase(j % 8)] += 1.0;

    parallel_for(0, static_cast<std::int64_t>(bank.kernels.size()), [&](std::int64_t ki) {
        const std::array<double, 64>& g = bank.kernels[ki];
        double abs_sum = 0.0;
        if (delta)
            for (double v : g) abs_sum += std::abs(v);
        std::vector<double> hist(per_kernel, 0.0);
        for (int i = 0; i < rh; ++i) {
            const int pa = fold_phase(i % 8);
            for (int j = 0; j < rw; ++j) {
                double r = 0.0, wsum = 0.0;
                for (int ky = 0; ky < 8; ++ky) {
                    const double* row = img.values.data() + static_cast<std::size_t>(i + ky) * img.w + j;
                    const double* drow =
                        delta ? delta->data() + static_cast<std::size_t>(i + ky) * img.w + j : nullptr;
                    for (int kx = 0; kx < 8; ++kx) {
                        const double gv = g[ky * 8 + kx];
                        r += gv * row[kx];
                        if (delta) wsum += std::abs(gv) * drow[kx];
                    }
                }
                int t = static_cast<int>(std::lround(r / q));
                t = std::clamp(t, -t_f, t_f);
                const int cls = pa * 5 + fold_phase(j % 8);
                const double wgt = delta ? wsum / abs_sum : 1.0;
                hist[static_cast<std::size_t>(cls) * bins + (t + t_f)] += wgt;
            }
        }
        // L1 normalization by class sample count (weighted histograms share
        // the unweighted denominator so uniform weights scale linearly).
        float* out = feature.data() + static_cast<std::size_t>(ki) * per_kernel;
        for (int cls = 0; cls < 25; ++cls)
            for (int b = 0; b < bins; ++b)
                out[cls * bins + b] =
                    static_cast<float>(hist[static_cast<std::size_t>(cls) * bins + b] /
                                       class_count[cls]);
    });
    return feature;
}

}  // namespace detail

inline std::vector<float> extract(const RealImage& img, const GaborBank& bank, double q,
                                  int t_f = 4) {
    return detail::gfr_extract_impl(img, bank, q, t_f, nullptr);
}

inline std::vector<float> extract_sca(const RealImage& img, const GaborBank& bank, double q,
                                      int t_f, const ChangeProbMap& change_probs) {
    require(change_probs.h == img.h && change_probs.w == img.w,
            "extract_sca: change map " + std::to_string(change_probs.h) + "x" +
                std::to_string(change_probs.w) + " does not match image " +
                std::to_string(img.h) + "x" + std::to_string(img.w));
    require(change_probs.p.size() == static_cast<std::size_t>(img.h) * img.w,
            "extract_sca: change map has wrong coefficient count");
    for (double v : change_probs.p)
        require(v >= 0.0 && v <= 1.0, "extract_sca: change probabilities must be in [0,1]");
    const std::vector<double> delta = detail::pixel_change_weights(change_probs);
    return detail::gfr_extract_impl(img, bank, q, t_f, &delta);
}

// ---------------------------------------------------------------------------
// Feature container and labels.
// ---------------------------------------------------------------------------

inline constexpr char kStgfMagic[4] = {'S', 'T', 'G', 'F'};
inline constexpr std::uint16_t kStgfVersion = 1;

struct FeatureFile {
    std::uint32_t dim = 0;
    std::uint64_t config_hash = 0;
    std::vector<std::vector<float>> rows;
};

inline void write_features(const std::string& path, const std::vector<std::vector<float>>& rows,
                           std::uint64_t config_hash) {
    require(!rows.empty(), "write_features: no rows");
    const std::size_t dim = rows[0].size();
    for (const auto& r : rows)
        require(r.size() == dim, "write_features: inconsistent row length");
    ByteWriter bw;
    bw.bytes(kStgfMagic, 4);
    bw.u16(kStgfVersion);
    bw.u32(static_cast<std::uint32_t>(dim));
    bw.u32(static_cast<std::uint32_t>(rows.size()));
    bw.u64(config_hash);
    for (const auto& r : rows)
        for (float v : r) bw.f32(v);
    write_file(path, bw.data());
}

inline FeatureFile read_features(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    ByteReader br(d.data(), d.size());
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, kStgfMagic, 4) != 0) throw ParseError("bad feature file magic", 0);
    const std::uint16_t ver = br.u16();
    if (ver != kStgfVersion)
        throw ParseError("unsupported feature file version " + std::to_string(ver), 4);
    FeatureFile f;
    f.dim = br.u32();
    const std::uint32_t count = br.u32();
    f.config_hash = br.u64();
    if (f.dim == 0) throw ParseError("feature file has zero dimension", 6);
    f.rows.assign(count, std::vector<float>(f.dim));
    for (auto& r : f.rows)
        for (auto& v : r) v = br.f32();
    return f;
}

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
    std::string text;
    for (int l : labels) {
        require(l == 0 || l == 1, "write_labels: labels must be 0/1");
        text += l ? "1\n" : "0\n";
    }
    write_text_file(path, text);
}

inline std::vector<int> read_labels(const std::string& path) {
    const std::vector<std::uint8_t> raw = read_file(path);
    std::vector<int> labels;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = static_cast<char>(raw[i]);
        if (c == '\n' || c == '\r') continue;
        if (c != '0' && c != '1') throw ParseError("label file must contain 0/1 lines", i);
        labels.push_back(c - '0');
    }
    return labels;
}

}  // namespace steglab
