// Rate-matched ±1 embedding simulator: entropy inversion, change statistics,
// and the untouchability rules for DC / zero AC coefficients.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "steglab/stego.hpp"
#include "steglab/rng.hpp"

using namespace steglab;

namespace {

CoefficientImage random_coeffs(int h, int w, Rng& rng, int spread = 6) {
    CoefficientImage ci(h, w);
    ci.qtable = quality_to_qtable(75);
    for (auto& c : ci.coeffs)
        c = static_cast<std::int16_t>(static_cast<int>(rng.next_below(2 * spread + 1)) - spread);
    return ci;
}

// ---------------------------------------------------------------------------
// Ternary entropy inversion
// ---------------------------------------------------------------------------

TEST(ChangeRateTest, ZeroPayloadGivesZeroRate) {
    EXPECT_DOUBLE_EQ(payload_to_change_rate(0.0), 0.0);
}

TEST(ChangeRateTest, MaximumPayloadGivesTwoThirds) {
    EXPECT_DOUBLE_EQ(payload_to_change_rate(std::log2(3.0)), 2.0 / 3.0);
}

TEST(ChangeRateTest, InvertsTheEntropyFunction) {
    for (double alpha : {0.05, 0.1, 0.2, 0.4, 0.8, 1.2, 1.5}) {
        const double beta = payload_to_change_rate(alpha);
        EXPECT_NEAR(ternary_entropy(beta), alpha, 1e-9) << "alpha " << alpha;
    }
}

TEST(ChangeRateTest, KnownValues) {
    // Exact bisection roots of the ternary entropy; the 0.4 root is commonly
    // quoted rounded as ~0.0635, which the coarser bound below covers.
    EXPECT_NEAR(payload_to_change_rate(0.4), 0.0625428, 1e-6);
    EXPECT_NEAR(payload_to_change_rate(0.4), 0.0635, 1.5e-3);
    EXPECT_NEAR(payload_to_change_rate(0.8), 0.1616819, 1e-6);
}

TEST(ChangeRateTest, MonotoneInAlpha) {
    double prev = -1.0;
    for (double alpha = 0.0; alpha <= 1.58; alpha += 0.02) {
        const double beta = payload_to_change_rate(alpha);
        EXPECT_GT(beta, prev) << "alpha " << alpha;
        prev = beta;
    }
}

TEST(ChangeRateTest, RejectsOutOfRangePayload) {
    EXPECT_THROW(payload_to_change_rate(-0.1), ContractError);
    EXPECT_THROW(payload_to_change_rate(std::log2(3.0) + 0.01), ContractError);
}

TEST(EntropyTest, EndpointsAndShape) {
    EXPECT_DOUBLE_EQ(ternary_entropy(0.0), 0.0);
    EXPECT_NEAR(ternary_entropy(2.0 / 3.0), std::log2(3.0), 1e-12);
    // strictly increasing on [0, 2/3]
    EXPECT_LT(ternary_entropy(0.1), ternary_entropy(0.2));
    EXPECT_LT(ternary_entropy(0.3), ternary_entropy(0.5));
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

TEST(EmbedTest, ZeroPayloadIsIdentity) {
    Rng rng(1);
    const CoefficientImage ci = random_coeffs(16, 16, rng);
    const CoefficientImage out = embed(ci, {0.0, 99});
    EXPECT_EQ(out.coeffs, ci.coeffs);
}

TEST(EmbedTest, NeverTouchesDcOrZeroAc) {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const CoefficientImage ci = random_coeffs(24, 24, rng, 2);
        const CoefficientImage out = embed(ci, {1.2, static_cast<std::uint64_t>(trial)});
        for (int bi = 0; bi < ci.block_rows(); ++bi)
            for (int bj = 0; bj < ci.block_cols(); ++bj) {
                const std::int16_t* a = ci.block(bi, bj);
                const std::int16_t* b = out.block(bi, bj);
                EXPECT_EQ(b[0], a[0]) << "DC changed";
                for (int i = 1; i < 64; ++i)
                    if (a[i] == 0) EXPECT_EQ(b[i], 0) << "zero AC changed";
            }
    }
}

TEST(EmbedTest, NeverCreatesZeroFromNonzero) {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        // spread 1 makes every nonzero coefficient ±1: maximal zero-avoidance
        // pressure
        const CoefficientImage ci = random_coeffs(24, 24, rng, 1);
        const CoefficientImage out = embed(ci, {1.2, 77u + trial});
        for (std::size_t i = 0; i < ci.coeffs.size(); ++i)
            if (ci.coeffs[i] != 0) EXPECT_NE(out.coeffs[i], 0) << "coefficient zeroed";
    }
}

TEST(EmbedTest, ChangesAreAlwaysUnitSteps) {
    // Zero-avoidance flips the sign of the step, so every change is still
    // exactly ±1 — never a 2-step jump, never a no-op counted as a change.
    Rng rng(4);
    const CoefficientImage ci = random_coeffs(32, 32, rng);
    const CoefficientImage out = embed(ci, {0.8, 5});
    for (std::size_t i = 0; i < ci.coeffs.size(); ++i) {
        const int d = std::abs(out.coeffs[i] - ci.coeffs[i]);
        EXPECT_LE(d, 1) << "index " << i;
    }
}

TEST(EmbedTest, ZeroAvoidanceFlipsSign) {
    // A +1 coefficient drawn for change with a −1 step becomes +2, never 0.
    // Force the situation statistically: all coefficients +1, full change
    // rate. Then every changed coefficient must be +2.
    CoefficientImage ci(8, 8);
    ci.qtable = quality_to_qtable(75);
    for (int i = 1; i < 64; ++i) ci.coeffs[i] = 1;
    const CoefficientImage out = embed(ci, {std::log2(3.0), 9});  // beta = 2/3
    int changed = 0;
    for (int i = 1; i < 64; ++i) {
        EXPECT_TRUE(out.coeffs[i] == 1 || out.coeffs[i] == 2) << "index " << i;
        changed += out.coeffs[i] == 2;
    }
    EXPECT_GT(changed, 0);
}

TEST(EmbedTest, DeterministicInSeedAndSensitiveToIt) {
    Rng rng(6);
    const CoefficientImage ci = random_coeffs(32, 32, rng);
    const CoefficientImage a = embed(ci, {0.4, 1234});
    const CoefficientImage b = embed(ci, {0.4, 1234});
    EXPECT_EQ(a.coeffs, b.coeffs);
    const CoefficientImage c = embed(ci, {0.4, 1235});
    EXPECT_NE(a.coeffs, c.coeffs);
}

TEST(EmbedTest, ChangeCountIsBinomial) {
    // ≥ 10,000 nonzero ACs at alpha=0.4: changed count within 4 sigma.
    Rng rng(7);
    const CoefficientImage ci = random_coeffs(128, 128, rng);  // 256 blocks
    std::int64_t nnz = nonzero_ac_count(ci);
    ASSERT_GE(nnz, 10000);
    const double beta = payload_to_change_rate(0.4);
    const CoefficientImage out = embed(ci, {0.4, 11});
    std::int64_t changed = 0;
    for (std::size_t i = 0; i < ci.coeffs.size(); ++i) changed += out.coeffs[i] != ci.coeffs[i];
    const double mean = beta * static_cast<double>(nnz);
    const double sigma = std::sqrt(static_cast<double>(nnz) * beta * (1.0 - beta));
    EXPECT_NEAR(static_cast<double>(changed), mean, 4.0 * sigma);
}

TEST(EmbedTest, ChangeRateConvergesToBeta) {
    // Law of large numbers over ≥ 10^6 nonzero ACs, 1% relative tolerance.
    Rng rng(8);
    const double beta = payload_to_change_rate(0.8);
    std::int64_t nnz = 0, changed = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const CoefficientImage ci = random_coeffs(240, 240, rng);  // 900 blocks
        const CoefficientImage out = embed(ci, {0.8, 1000u + rep});
        nnz += nonzero_ac_count(ci);
        for (std::size_t i = 0; i < ci.coeffs.size(); ++i)
            changed += out.coeffs[i] != ci.coeffs[i];
    }
    ASSERT_GE(nnz, 1000000);
    const double rate = static_cast<double>(changed) / static_cast<double>(nnz);
    EXPECT_NEAR(rate, beta, 0.01 * beta);
}

TEST(EmbedTest, PlusAndMinusChangesAreBalanced) {
    Rng rng(9);
    const CoefficientImage ci = random_coeffs(128, 128, rng);
    const CoefficientImage out = embed(ci, {0.8, 21});
    std::int64_t up = 0, down = 0;
    for (std::size_t i = 0; i < ci.coeffs.size(); ++i) {
        // Skip ±1 sources: zero-avoidance folds their downward draws upward.
        if (std::abs(ci.coeffs[i]) <= 1) continue;
        up += out.coeffs[i] == ci.coeffs[i] + 1;
        down += out.coeffs[i] == ci.coeffs[i] - 1;
    }
    const double total = static_cast<double>(up + down);
    ASSERT_GT(total, 1000.0);
    const double sigma = 0.5 * std::sqrt(total);
    EXPECT_NEAR(static_cast<double>(up), total / 2.0, 4.0 * sigma);
}

}  // namespace
