#pragma once

// Random-subspace Fisher linear discriminant ensemble: each base learner
// draws a feature subset, solves (S_w + lambda I) w = mu1 - mu0, and votes
// through an error-minimizing threshold. The ensemble probability is the
// stego vote fraction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "steglab/bytes.hpp"
#include "steglab/error.hpp"
#include "steglab/parallel.hpp"
#include "steglab/rng.hpp"

namespace steglab {

struct FldLearner {
    std::vector<std::uint32_t> idx;  // feature subset, size d_sub
    std::vector<double> w;           // discriminant, size d_sub
    double threshold = 0.0;          // vote stego iff w.x > threshold
    double lambda = 0.0;             // effective regularizer used
};

struct EnsembleModel {
    std::uint32_t dim = 0;
    std::uint32_t L = 0;
    std::uint32_t d_sub = 0;
    double lambda_config = -1.0;  // <0 means auto: 1e-6 * trace(S_w)/d_sub per learner
    std::vector<FldLearner> learners;
};

namespace detail {

// Cholesky solve of A x = b for symmetric positive definite A (row-major,
// lower triangle used). Returns false on a non-positive pivot.
inline bool cholesky_solve(std::vector<double>& a, int n, std::vector<double>& b) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
    for (int i = 0; i < n; ++i) {  // L y = b
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= a[static_cast<std::size_t>(i) * n + k] * b[k];
        b[i] = s / a[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {  // L^T x = y
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= a[static_cast<std::size_t>(k) * n + i] * b[k];
        b[i] = s / a[static_cast<std::size_t>(i) * n + i];
    }
    return true;
}

// Threshold minimizing training error for the rule "stego iff s > t",
// candidates are midpoints between adjacent distinct projections plus the
// two outer extremes; first minimum wins.
inline double best_threshold(std::vector<std::pair<double, int>>& proj) {
    std::sort(proj.begin(), proj.end());
    const std::size_t n = proj.size();
    std::int64_t n1 = 0;
    for (const auto& [s, l] : proj) n1 += l;
    // Start with threshold below everything: all judged stego.
    std::int64_t wrong = static_cast<std::int64_t>(n) - n1;
    std::int64_t best_wrong = wrong;
    double best_t = proj.front().first - 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        // Raise the threshold past sample i: it flips to a cover verdict.
        wrong += proj[i].second == 1 ? 1 : -1;
        const double t = i + 1 < n ? 0.5 * (proj[i].first + proj[i + 1].first)
                                   : proj.back().first + 1.0;
        if (i + 1 < n && proj[i + 1].first == proj[i].first) continue;
        if (wrong < best_wrong) {
            best_wrong = wrong;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace detail

inline EnsembleModel train_fld(const std::vector<std::vector<float>>& features,
                               const std::vector<int>& labels, int d_sub = 0, int L = 51,
                               double lambda = -1.0, std::uint64_t seed = 0) {
    require(!features.empty(), "train_fld: empty feature set");
    require(features.size() == labels.size(), "train_fld: feature/label count mismatch");
    const int dim = static_cast<int>(features[0].size());
    for (const auto& f : features)
        require(static_cast<int>(f.size()) == dim, "train_fld: inconsistent feature dimension");
    std::int64_t n1 = 0;
    for (int l : labels) {
        require(l == 0 || l == 1, "train_fld: labels must be 0/1");
        n1 += l;
    }
    require(n1 > 0 && n1 < static_cast<std::int64_t>(labels.size()),
            "train_fld: both classes must be present");
    if (d_sub <= 0) d_sub = std::min(dim, 300);
    require(d_sub <= dim, "train_fld: d_sub " + std::to_string(d_sub) + " exceeds dimension " +
                              std::to_string(dim));
    require(L >= 1, "train_fld: L must be >= 1");

    EnsembleModel m;
    m.dim = static_cast<std::uint32_t>(dim);
    m.L = static_cast<std::uint32_t>(L);
    m.d_sub = static_cast<std::uint32_t>(d_sub);
    m.lambda_config = lambda;
    m.learners.resize(L);

    const std::size_t n = features.size();
    const Rng root(seed);
    std::vector<std::string> failures(L);

    parallel_for(0, L, [&](std::int64_t li) {
        FldLearner& ln = m.learners[li];
        Rng rng = root.split(static_cast<std::uint64_t>(li));
        ln.idx = rng.sample_without_replacement(static_cast<std::uint32_t>(dim),
                                                static_cast<std::uint32_t>(d_sub));
        const int d = d_sub;

        // Class means on the subspace.
        std::vector<double> mu0(d, 0.0), mu1(d, 0.0);
        std::size_t c0 = 0, c1 = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const float* f = features[s].data();
            std::vector<double>& mu = labels[s] ? mu1 : mu0;
            for (int j = 0; j < d; ++j) mu[j] += f[ln.idx[j]];
            (labels[s] ? c1 : c0)++;
        }
        for (int j = 0; j < d; ++j) {
            mu0[j] /= static_cast<double>(c0);
            mu1[j] /= static_cast<double>(c1);
        }

        // Within-class scatter (lower triangle, symmetrized after).
        std::vector<double> sw(static_cast<std::size_t>(d) * d, 0.0);
        std::vector<double> x(d);
        for (std::size_t s = 0; s < n; ++s) {
            const float* f = features[s].data();
            const std::vector<double>& mu = labels[s] ? mu1 : mu0;
            for (int j = 0; j < d; ++j) x[j] = f[ln.idx[j]] - mu[j];
            for (int i = 0; i < d; ++i) {
                const double xi = x[i];
                double* row = sw.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j <= i; ++j) row[j] += xi * x[j];
            }
        }
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j)
                sw[static_cast<std::size_t>(i) * d + j] = sw[static_cast<std::size_t>(j) * d + i];

        double trace = 0.0;
        for (int i = 0; i < d; ++i) trace += sw[static_cast<std::size_t>(i) * d + i];
        ln.lambda = lambda >= 0.0 ? lambda : 1e-6 * trace / d;
        for (int i = 0; i < d; ++i) sw[static_cast<std::size_t>(i) * d + i] += ln.lambda;

        ln.w.resize(d);
        for (int j = 0; j < d; ++j) ln.w[j] = mu1[j] - mu0[j];
        if (!detail::cholesky_solve(sw, d, ln.w)) {
            failures[li] = "within-class scatter not positive definite in learner " +
                           std::to_string(li) + " (lambda " + std::to_string(ln.lambda) + ")";
            return;
        }

        std::vector<std::pair<double, int>> proj(n);
        for (std::size_t s = 0; s < n; ++s) {
            const float* f = features[s].data();
            double v = 0.0;
            for (int j = 0; j < d; ++j) v += ln.w[j] * f[ln.idx[j]];
            proj[s] = {v, labels[s]};
        }
        ln.threshold = detail::best_threshold(proj);
    });

    for (const auto& f : failures)
        if (!f.empty()) throw NumericError(f);
    return m;
}

inline bool learner_votes_stego(const FldLearner& ln, const float* feature) {
    double v = 0.0;
    for (std::size_t j = 0; j < ln.idx.size(); ++j) v += ln.w[j] * feature[ln.idx[j]];
    return v > ln.threshold;
}

// Vote fraction in [0,1].
inline double predict_proba(const EnsembleModel& m, const std::vector<float>& feature) {
    require(feature.size() == m.dim, "predict_proba: feature dimension " +
                                         std::to_string(feature.size()) + " != model dimension " +
                                         std::to_string(m.dim));
    int votes = 0;
    for (const auto& ln : m.learners) votes += learner_votes_stego(ln, feature.data());
    return static_cast<double>(votes) / static_cast<double>(m.learners.size());
}

// ---------------------------------------------------------------------------
// Model container.
// ---------------------------------------------------------------------------

inline constexpr char kStgeMagic[4] = {'S', 'T', 'G', 'E'};
inline constexpr std::uint16_t kStgeVersion = 1;

inline void write_ensemble_bytes(ByteWriter& bw, const EnsembleModel& m) {
    ByteWriter inner;
    inner.bytes(kStgeMagic, 4);
    inner.u16(kStgeVersion);
    inner.u32(m.dim);
    inner.u32(m.L);
    inner.u32(m.d_sub);
    inner.f64(m.lambda_config);
    for (const auto& ln : m.learners) {
        for (std::uint32_t i : ln.idx) inner.u32(i);
        for (double w : ln.w) inner.f64(w);
        inner.f64(ln.threshold);
        inner.f64(ln.lambda);
    }
    inner.crc_trailer();
    bw.bytes(inner.data().data(), inner.data().size());
}

inline EnsembleModel read_ensemble_bytes(ByteReader& br) {
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, kStgeMagic, 4) != 0) throw ParseError("bad ensemble model magic", 0);
    const std::uint16_t ver = br.u16();
    if (ver != kStgeVersion)
        throw ParseError("unsupported ensemble model version " + std::to_string(ver), 4);
    EnsembleModel m;
    m.dim = br.u32();
    m.L = br.u32();
    m.d_sub = br.u32();
    m.lambda_config = br.f64();
    if (m.L == 0 || m.d_sub == 0 || m.d_sub > m.dim)
        throw ParseError("bad ensemble model header", 6);
    m.learners.resize(m.L);
    for (auto& ln : m.learners) {
        ln.idx.resize(m.d_sub);
        for (auto& i : ln.idx) {
            i = br.u32();
            if (i >= m.dim) throw ParseError("ensemble feature index out of range", br.offset());
        }
        ln.w.resize(m.d_sub);
        for (auto& w : ln.w) w = br.f64();
        ln.threshold = br.f64();
        ln.lambda = br.f64();
    }
    return m;
}

inline void write_ensemble(const std::string& path, const EnsembleModel& m) {
    ByteWriter bw;
    write_ensemble_bytes(bw, m);
    write_file(path, bw.data());
}

inline EnsembleModel read_ensemble(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    ByteReader br(d.data(), d.size());
    br.check_crc_trailer("ensemble model");
    return read_ensemble_bytes(br);
}

}  // namespace steglab
