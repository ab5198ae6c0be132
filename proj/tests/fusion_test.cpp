// Branch fusion: feature concatenation, the 6+1 classifier layout, averaged
// vote probabilities with the cover tie rule, and the bundled model file.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "steglab/fusion.hpp"

using namespace steglab;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

struct Branches {
    std::vector<std::vector<float>> cnn;
    std::vector<std::vector<float>> classical;
    std::vector<int> labels;
};

// Index-aligned two-branch dataset; offset controls class separation in
// both branches.
Branches two_branch_gaussians(int n_per_class, int cnn_dim, int classical_dim, double offset,
                              std::uint64_t seed) {
    Rng rng(seed);
    Branches b;
    for (int cls = 0; cls < 2; ++cls)
        for (int s = 0; s < n_per_class; ++s) {
            std::vector<float> c(cnn_dim), g(classical_dim);
            for (auto& v : c) v = static_cast<float>(rng.next_gaussian() + (cls ? offset : -offset));
            for (auto& v : g) v = static_cast<float>(rng.next_gaussian() + (cls ? offset : -offset));
            b.cnn.push_back(std::move(c));
            b.classical.push_back(std::move(g));
            b.labels.push_back(cls);
        }
    return b;
}

// Single-learner ensemble on a 1-dim feature that always votes the same way.
EnsembleModel constant_voter(std::uint32_t dim, bool stego) {
    EnsembleModel m;
    m.dim = dim;
    m.L = 1;
    m.d_sub = 1;
    FldLearner ln;
    ln.idx = {0};
    ln.w = {1.0};
    ln.threshold = stego ? -1e18 : 1e18;
    m.learners.push_back(ln);
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Concatenation
// ---------------------------------------------------------------------------

TEST(ConcatTest, NineModelsOf160GiveOneVectorOf1440) {
    std::vector<std::vector<float>> per_model(9, std::vector<float>(160));
    for (int m = 0; m < 9; ++m)
        for (int j = 0; j < 160; ++j) per_model[m][j] = static_cast<float>(m * 1000 + j);
    const std::vector<float> out = concat_cnn_features(per_model);
    ASSERT_EQ(out.size(), 1440u);
    for (int m = 0; m < 9; ++m)
        for (int j = 0; j < 160; ++j)
            ASSERT_EQ(out[static_cast<std::size_t>(160) * m + j], per_model[m][j])
                << "model " << m << " index " << j;
}

TEST(ConcatTest, PermutingModelsPermutesSlices) {
    std::vector<std::vector<float>> per_model(9, std::vector<float>(160));
    for (int m = 0; m < 9; ++m) per_model[m].assign(160, static_cast<float>(m));
    std::vector<std::vector<float>> swapped = per_model;
    std::swap(swapped[2], swapped[7]);
    const std::vector<float> a = concat_cnn_features(per_model);
    const std::vector<float> b = concat_cnn_features(swapped);
    EXPECT_EQ(std::vector<float>(b.begin() + 2 * 160, b.begin() + 3 * 160),
              std::vector<float>(a.begin() + 7 * 160, a.begin() + 8 * 160));
    EXPECT_EQ(std::vector<float>(b.begin() + 7 * 160, b.begin() + 8 * 160),
              std::vector<float>(a.begin() + 2 * 160, a.begin() + 3 * 160));
}

TEST(ConcatTest, RespectsConfiguredModelCount) {
    FusionConfig cfg;
    cfg.n_cnn_models = 3;
    const std::vector<std::vector<float>> per_model(3, std::vector<float>(4, 1.0f));
    EXPECT_EQ(concat_cnn_features(per_model, cfg).size(), 12u);
}

TEST(ConcatTest, RejectsWrongCountOrRaggedLengths) {
    std::vector<std::vector<float>> eight(8, std::vector<float>(160, 0.0f));
    EXPECT_THROW(concat_cnn_features(eight), ContractError);
    std::vector<std::vector<float>> ragged(9, std::vector<float>(160, 0.0f));
    ragged[4].pop_back();
    EXPECT_THROW(concat_cnn_features(ragged), ContractError);
}

// ---------------------------------------------------------------------------
// Training and prediction
// ---------------------------------------------------------------------------

TEST(TrainFusionTest, EmitsExactlySevenProbabilities) {
    const Branches b = two_branch_gaussians(30, 12, 8, 0.8, 113);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 5, 4, 7);
    ASSERT_EQ(fm.cnn_classifiers.size(), 6u);
    const FusionPrediction p = fusion_predict(fm, b.cnn[0], b.classical[0]);
    ASSERT_EQ(p.probs.size(), 7u);
    for (double v : p.probs) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(p.fused, 0.0);
    EXPECT_LE(p.fused, 1.0);
}

TEST(TrainFusionTest, FusedIsTheMeanOfTheSeven) {
    const Branches b = two_branch_gaussians(25, 10, 6, 0.6, 127);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 9, 3, 5);
    for (int s = 0; s < 8; ++s) {
        const FusionPrediction p = fusion_predict(fm, b.cnn[s], b.classical[s]);
        double mean = 0.0;
        for (double v : p.probs) mean += v;
        mean /= 7.0;
        EXPECT_DOUBLE_EQ(p.fused, mean) << "sample " << s;
        EXPECT_EQ(p.label, p.fused > 0.5 ? 1 : 0) << "sample " << s;
    }
}

TEST(TrainFusionTest, SeparableBranchesFuseToZeroError) {
    const Branches b = two_branch_gaussians(80, 6, 5, 3.0, 131);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 1, 3, 11);
    int wrong = 0;
    for (std::size_t s = 0; s < b.labels.size(); ++s)
        wrong += fusion_predict(fm, b.cnn[s], b.classical[s]).label != b.labels[s];
    EXPECT_EQ(wrong, 0);
}

TEST(TrainFusionTest, CnnBranchIsIndependentOfClassicalData) {
    // The six concatenated-feature classifiers depend only on the CNN rows
    // and the seed, so re-averaging their probabilities reproduces a
    // CNN-only fusion regardless of the classical branch.
    const Branches b = two_branch_gaussians(40, 8, 6, 0.7, 137);
    Branches other = b;
    Rng noise(139);
    for (auto& f : other.classical)
        for (auto& v : f) v = static_cast<float>(noise.next_gaussian());
    const FusionModel fm1 = train_fusion(b.cnn, b.classical, b.labels, {}, 21, 4, 9);
    const FusionModel fm2 = train_fusion(other.cnn, other.classical, other.labels, {}, 21, 4, 9);
    for (int s = 0; s < 10; ++s) {
        const FusionPrediction p1 = fusion_predict(fm1, b.cnn[s], b.classical[s]);
        const FusionPrediction p2 = fusion_predict(fm2, other.cnn[s], other.classical[s]);
        for (int k = 0; k < 6; ++k) EXPECT_EQ(p1.probs[k], p2.probs[k]) << "classifier " << k;
    }
}

TEST(TrainFusionTest, DeterministicInSeed) {
    const Branches b = two_branch_gaussians(30, 8, 5, 0.8, 149);
    const FusionModel a = train_fusion(b.cnn, b.classical, b.labels, {}, 77, 4, 5);
    const FusionModel c = train_fusion(b.cnn, b.classical, b.labels, {}, 77, 4, 5);
    const FusionModel d = train_fusion(b.cnn, b.classical, b.labels, {}, 78, 4, 5);
    bool differs = false;
    for (std::size_t s = 0; s < b.labels.size(); ++s) {
        const FusionPrediction pa = fusion_predict(a, b.cnn[s], b.classical[s]);
        const FusionPrediction pc = fusion_predict(c, b.cnn[s], b.classical[s]);
        EXPECT_EQ(pa.probs, pc.probs) << "sample " << s;
        differs |= pa.probs != fusion_predict(d, b.cnn[s], b.classical[s]).probs;
    }
    EXPECT_TRUE(differs);
}

TEST(TrainFusionTest, SeedsTheSixClassifiersDistinctly) {
    const Branches b = two_branch_gaussians(30, 10, 5, 0.5, 151);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 55, 3, 7);
    bool any_differ = false;
    for (std::size_t k = 1; k < fm.cnn_classifiers.size(); ++k)
        any_differ |= fm.cnn_classifiers[k].learners[0].idx != fm.cnn_classifiers[0].learners[0].idx;
    EXPECT_TRUE(any_differ);
}

TEST(TrainFusionTest, RejectsMisalignedInputs) {
    const Branches b = two_branch_gaussians(10, 6, 4, 1.0, 157);
    auto short_cnn = b.cnn;
    short_cnn.pop_back();
    EXPECT_THROW(train_fusion(short_cnn, b.classical, b.labels, {}, 0, 3, 3), ContractError);
    auto short_classical = b.classical;
    short_classical.pop_back();
    EXPECT_THROW(train_fusion(b.cnn, short_classical, b.labels, {}, 0, 3, 3), ContractError);
    auto short_labels = b.labels;
    short_labels.pop_back();
    EXPECT_THROW(train_fusion(b.cnn, b.classical, short_labels, {}, 0, 3, 3), ContractError);
    FusionConfig none;
    none.n_cnn_classifiers = 0;
    EXPECT_THROW(train_fusion(b.cnn, b.classical, b.labels, none, 0, 3, 3), ContractError);
}

TEST(PredictTest, TieAtExactlyHalfIsCover) {
    FusionModel fm;
    fm.cfg.n_cnn_classifiers = 1;
    EnsembleModel split;  // one yes vote, one no vote -> P = 0.5
    split.dim = 1;
    split.L = 2;
    split.d_sub = 1;
    split.learners.push_back(constant_voter(1, true).learners[0]);
    split.learners.push_back(constant_voter(1, false).learners[0]);
    fm.cnn_classifiers = {split};
    fm.classical = split;
    const FusionPrediction p = fusion_predict(fm, {0.0f}, {0.0f});
    EXPECT_DOUBLE_EQ(p.fused, 0.5);
    EXPECT_EQ(p.label, 0);
}

TEST(PredictTest, SixOfSevenStegoVotesMeanStego) {
    FusionModel fm;
    for (int k = 0; k < 6; ++k) fm.cnn_classifiers.push_back(constant_voter(1, true));
    fm.classical = constant_voter(1, false);
    const FusionPrediction p = fusion_predict(fm, {0.0f}, {0.0f});
    ASSERT_EQ(p.probs.size(), 7u);
    EXPECT_DOUBLE_EQ(p.fused, 6.0 / 7.0);
    EXPECT_EQ(p.label, 1);
}

TEST(PredictTest, RejectsDimensionMismatch) {
    const Branches b = two_branch_gaussians(10, 6, 4, 1.0, 163);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 0, 3, 3);
    EXPECT_THROW(fusion_predict(fm, {1.0f, 2.0f}, b.classical[0]), ContractError);
    EXPECT_THROW(fusion_predict(fm, b.cnn[0], {1.0f}), ContractError);
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

TEST(FusionFileTest, RoundTripsBitExactly) {
    const std::string path = temp_path("fusion_roundtrip.stgu");
    const Branches b = two_branch_gaussians(25, 8, 5, 0.9, 167);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 13, 4, 5);
    write_fusion_model(path, fm);
    const FusionModel r = read_fusion_model(path);
    EXPECT_EQ(r.cfg.n_cnn_models, fm.cfg.n_cnn_models);
    EXPECT_EQ(r.cfg.n_cnn_classifiers, fm.cfg.n_cnn_classifiers);
    EXPECT_EQ(r.cfg.threshold, fm.cfg.threshold);
    ASSERT_EQ(r.cnn_classifiers.size(), fm.cnn_classifiers.size());
    for (std::size_t s = 0; s < b.labels.size(); ++s) {
        const FusionPrediction a = fusion_predict(fm, b.cnn[s], b.classical[s]);
        const FusionPrediction c = fusion_predict(r, b.cnn[s], b.classical[s]);
        EXPECT_EQ(a.probs, c.probs) << "sample " << s;
        EXPECT_EQ(a.label, c.label) << "sample " << s;
    }
    for (std::size_t k = 0; k < fm.cnn_classifiers.size(); ++k) {
        ASSERT_EQ(r.cnn_classifiers[k].learners.size(), fm.cnn_classifiers[k].learners.size());
        for (std::size_t l = 0; l < fm.cnn_classifiers[k].learners.size(); ++l) {
            EXPECT_EQ(r.cnn_classifiers[k].learners[l].idx, fm.cnn_classifiers[k].learners[l].idx);
            EXPECT_EQ(r.cnn_classifiers[k].learners[l].w, fm.cnn_classifiers[k].learners[l].w);
        }
    }
    std::filesystem::remove(path);
}

TEST(FusionFileTest, RejectsCorruptionAnywhere) {
    const std::string path = temp_path("fusion_corrupt.stgu");
    const Branches b = two_branch_gaussians(10, 5, 4, 1.0, 173);
    const FusionModel fm = train_fusion(b.cnn, b.classical, b.labels, {}, 3, 2, 3);
    write_fusion_model(path, fm);

    auto bytes = read_file(path);
    bytes[0] = 'Y';
    write_file(path, bytes);
    EXPECT_THROW(read_fusion_model(path), ParseError);

    write_fusion_model(path, fm);
    bytes = read_file(path);
    bytes[4] = 0x44;  // version
    write_file(path, bytes);
    EXPECT_THROW(read_fusion_model(path), ParseError);

    write_fusion_model(path, fm);
    bytes = read_file(path);
    bytes[40] ^= 0x10;  // inside the first embedded model
    write_file(path, bytes);
    EXPECT_THROW(read_fusion_model(path), ParseError);

    write_fusion_model(path, fm);
    bytes = read_file(path);
    bytes.resize(bytes.size() - 5);  // truncate the classical model
    write_file(path, bytes);
    EXPECT_THROW(read_fusion_model(path), ParseError);
    std::filesystem::remove(path);
}
