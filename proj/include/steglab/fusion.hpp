#pragma once

// Late fusion of detector branches: six independently seeded ensemble
// classifiers over the concatenated multi-model CNN features plus one over
// the classical features; the decision averages all seven vote fractions.

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "steglab/bytes.hpp"
#include "steglab/error.hpp"
#include "steglab/fld.hpp"

namespace steglab {

struct FusionConfig {
    int n_cnn_models = 9;       // feature-producing network checkpoints
    int n_cnn_classifiers = 6;  // ensemble classifiers on the concatenated features
    double threshold = 0.5;     // fused probability above this means stego
};

// 9 x 160 -> 1440, in declared model order.
inline std::vector<float> concat_cnn_features(const std::vector<std::vector<float>>& per_model,
                                              const FusionConfig& cfg = {}) {
    require(static_cast<int>(per_model.size()) == cfg.n_cnn_models,
            "concat_cnn_features: expected " + std::to_string(cfg.n_cnn_models) +
                " model feature vectors, got " + std::to_string(per_model.size()));
    std::vector<float> out;
    for (const auto& f : per_model) {
        require(f.size() == per_model[0].size(),
                "concat_cnn_features: model feature lengths differ");
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

struct FusionModel {
    FusionConfig cfg;
    std::vector<EnsembleModel> cnn_classifiers;  // size n_cnn_classifiers
    EnsembleModel classical;
};

// cnn_features rows are the concatenated per-sample vectors (e.g. 1440-dim);
// classical_features rows are index-aligned with them.
inline FusionModel train_fusion(const std::vector<std::vector<float>>& cnn_features,
                                const std::vector<std::vector<float>>& classical_features,
                                const std::vector<int>& labels, const FusionConfig& cfg = {},
                                std::uint64_t seed = 0, int d_sub = 0, int L = 51) {
    require(cnn_features.size() == classical_features.size() &&
                cnn_features.size() == labels.size(),
            "train_fusion: misaligned feature/label counts (" +
                std::to_string(cnn_features.size()) + " cnn, " +
                std::to_string(classical_features.size()) + " classical, " +
                std::to_string(labels.size()) + " labels)");
    require(cfg.n_cnn_classifiers >= 1, "train_fusion: need at least one classifier");
    FusionModel fm;
    fm.cfg = cfg;
    const Rng root(seed);
    for (int k = 0; k < cfg.n_cnn_classifiers; ++k)
        fm.cnn_classifiers.push_back(train_fld(cnn_features, labels, d_sub, L, -1.0,
                                               root.split(static_cast<std::uint64_t>(k)).key()));
    fm.classical = train_fld(classical_features, labels, d_sub, L, -1.0,
                             root.split(0x636c617373u).key());
    return fm;
}

struct FusionPrediction {
    std::vector<double> probs;  // P0..P(k-1) from CNN classifiers, then the classical P
    double fused = 0.0;
    int label = 0;  // 1 = stego
};

inline FusionPrediction fusion_predict(const FusionModel& fm, const std::vector<float>& cnn_feature,
                                       const std::vector<float>& classical_feature) {
    FusionPrediction out;
    for (const auto& m : fm.cnn_classifiers) out.probs.push_back(predict_proba(m, cnn_feature));
    out.probs.push_back(predict_proba(fm.classical, classical_feature));
    double sum = 0.0;
    for (double p : out.probs) sum += p;
    out.fused = sum / static_cast<double>(out.probs.size());
    out.label = out.fused > fm.cfg.threshold ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Container: fusion config plus the embedded ensemble models.
// ---------------------------------------------------------------------------

inline constexpr char kStguMagic[4] = {'S', 'T', 'G', 'U'};
inline constexpr std::uint16_t kStguVersion = 1;

inline void write_fusion_model(const std::string& path, const FusionModel& fm) {
    ByteWriter bw;
    bw.bytes(kStguMagic, 4);
    bw.u16(kStguVersion);
    bw.u32(static_cast<std::uint32_t>(fm.cfg.n_cnn_models));
    bw.u32(static_cast<std::uint32_t>(fm.cfg.n_cnn_classifiers));
    bw.f64(fm.cfg.threshold);
    const auto embed = [&bw](const EnsembleModel& m) {
        ByteWriter inner;
        write_ensemble_bytes(inner, m);
        bw.u64(inner.data().size());
        bw.bytes(inner.data().data(), inner.data().size());
    };
    for (const auto& m : fm.cnn_classifiers) embed(m);
    embed(fm.classical);
    write_file(path, bw.data());
}

inline FusionModel read_fusion_model(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    ByteReader br(d.data(), d.size());
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, kStguMagic, 4) != 0) throw ParseError("bad fusion model magic", 0);
    const std::uint16_t ver = br.u16();
    if (ver != kStguVersion)
        throw ParseError("unsupported fusion model version " + std::to_string(ver), 4);
    FusionModel fm;
    fm.cfg.n_cnn_models = static_cast<int>(br.u32());
    fm.cfg.n_cnn_classifiers = static_cast<int>(br.u32());
    fm.cfg.threshold = br.f64();
    if (fm.cfg.n_cnn_classifiers < 1 || fm.cfg.n_cnn_classifiers > 1024)
        throw ParseError("bad fusion model classifier count", 6);
    const auto extract_one = [&br, &d]() {
        const std::uint64_t size = br.u64();
        if (size > br.remaining())
            throw ParseError("embedded ensemble model truncated", br.offset());
        std::vector<std::uint8_t> blob(size);
        br.bytes(blob.data(), size);
        ByteReader inner(blob.data(), blob.size());
        inner.check_crc_trailer("embedded ensemble model");
        return read_ensemble_bytes(inner);
    };
    for (int k = 0; k < fm.cfg.n_cnn_classifiers; ++k) fm.cnn_classifiers.push_back(extract_one());
    fm.classical = extract_one();
    return fm;
}

}  // namespace steglab
