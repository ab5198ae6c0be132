#pragma once

// Rate-matched random ±1 embedding over nonzero AC coefficients. Stands in
// for a cost-based embedder; the rate/change-probability link is the optimal
// ternary-entropy bound.

#include <cmath>
#include <cstdint>

#include "steglab/error.hpp"
#include "steglab/jpeg.hpp"
#include "steglab/rng.hpp"

namespace steglab {

struct EmbedConfig {
    double alpha = 0.0;  // payload, bits per nonzero AC coefficient
    std::uint64_t seed = 0;
};

inline double max_ternary_payload() { return std::log2(3.0); }

// alpha(beta) = -beta*log2(beta/2) - (1-beta)*log2(1-beta), the ternary
// embedding entropy; beta is the per-coefficient change probability.
inline double ternary_entropy(double beta) {
    if (beta <= 0.0) return 0.0;
    double a = -beta * std::log2(beta / 2.0);
    if (beta < 1.0) a -= (1.0 - beta) * std::log2(1.0 - beta);
    return a;
}

// Inverts ternary_entropy on [0, 2/3] by bisection to |alpha(beta)-alpha| < 1e-10.
inline double payload_to_change_rate(double alpha) {
    require(alpha >= 0.0 && alpha <= max_ternary_payload() + 1e-12,
            "payload_to_change_rate: alpha must be in [0, log2(3)], got " + std::to_string(alpha));
    if (alpha <= 0.0) return 0.0;
    if (alpha >= max_ternary_payload()) return 2.0 / 3.0;
    double lo = 0.0, hi = 2.0 / 3.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double a = ternary_entropy(mid);
        if (std::abs(a - alpha) < 1e-10) return mid;
        if (a < alpha)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Independently flips each nonzero AC by ±1 with probability beta; a change
// that would land on 0 has its sign flipped instead. DC and zero ACs are
// never touched. Deterministic in cfg.seed.
[[nodiscard]] inline CoefficientImage embed(const CoefficientImage& ci, const EmbedConfig& cfg) {
    const double beta = payload_to_change_rate(cfg.alpha);
    CoefficientImage out = ci;
    if (beta <= 0.0) return out;
    Rng rng(cfg.seed);
    const int br = ci.block_rows(), bc = ci.block_cols();
    for (int bi = 0; bi < br; ++bi)
        for (int bj = 0; bj < bc; ++bj) {
            std::int16_t* b = out.block(bi, bj);
            for (int i = 1; i < 64; ++i) {
                if (b[i] == 0) continue;
                if (rng.next_double() >= beta) continue;
                int delta = rng.next_double() < 0.5 ? 1 : -1;
                if (b[i] + delta == 0) delta = -delta;
                b[i] = static_cast<std::int16_t>(b[i] + delta);
            }
        }
    return out;
}

}  // namespace steglab
