#pragma once

// SGD training loop with paired cover/stego batches, dihedral augmentation,
// step learning-rate schedule, periodic checkpoints and CSV logging, plus
// multi-model probability-averaged evaluation and dataset plumbing.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "steglab/dctnet.hpp"
#include "steglab/error.hpp"
#include "steglab/jpeg.hpp"
#include "steglab/rng.hpp"

namespace steglab {

// ---------------------------------------------------------------------------
// Dataset plumbing.
// ---------------------------------------------------------------------------

struct PairedSample {
    std::string cover_path, stego_path, split;  // split: train / val / test
};
using PairedDataset = std::vector<PairedSample>;

inline PairedDataset read_pair_manifest(const std::string& path) {
    const std::vector<std::uint8_t> raw = read_file(path);
    const std::string text(raw.begin(), raw.end());
    PairedDataset ds;
    std::size_t line_start = 0;
    while (line_start < text.size()) {
        std::size_t eol = text.find('\n', line_start);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(line_start, eol - line_start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] != '#') {
            const std::size_t c1 = line.find(',');
            const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                           : line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos ||
                line.find(',', c2 + 1) != std::string::npos)
                throw ParseError("pair manifest line needs 'cover_path,stego_path,split'",
                                 line_start);
            ds.push_back({line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1),
                          line.substr(c2 + 1)});
        }
        line_start = eol + 1;
    }
    return ds;
}

inline void write_pair_manifest(const std::string& path, const PairedDataset& ds) {
    std::string out;
    for (const auto& s : ds) out += s.cover_path + "," + s.stego_path + "," + s.split + "\n";
    write_text_file(path, out);
}

struct LoadedPairs {
    std::vector<RealImage> covers, stegos;  // index-aligned

    std::size_t size() const { return covers.size(); }
    bool empty() const { return covers.empty(); }
};

// Decompresses the STGC pairs of one split into memory.
inline LoadedPairs load_split(const PairedDataset& ds, const std::string& split) {
    LoadedPairs lp;
    for (const auto& s : ds) {
        if (s.split != split) continue;
        lp.covers.push_back(decompress_real(read_stgc(s.cover_path)));
        lp.stegos.push_back(decompress_real(read_stgc(s.stego_path)));
    }
    return lp;
}

// Smoothed random texture: Gaussian noise field blurred with a separable
// Gaussian, then mapped to a target mean/spread and clamped to [0,255].
inline GrayImage synthesize_texture(int h, int w, Rng& rng, double blur_sigma = 2.0,
                                    double contrast = 38.0) {
    require(h >= 1 && w >= 1, "synthesize_texture: dimensions must be positive");
    std::vector<double> a(static_cast<std::size_t>(h) * w);
    for (auto& x : a) x = rng.next_gaussian();

    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * blur_sigma)));
    std::vector<double> kern(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kern[i + radius] = std::exp(-0.5 * i * i / (blur_sigma * blur_sigma));
        ksum += kern[i + radius];
    }
    for (auto& k : kern) k /= ksum;

    const auto reflect = [](int i, int n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
        return i;
    };
    std::vector<double> b(a.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kern[i + radius] * a[static_cast<std::size_t>(y) * w + reflect(x + i, w)];
            b[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kern[i + radius] * b[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
            a[static_cast<std::size_t>(y) * w + x] = s;
        }

    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    var /= static_cast<double>(a.size());
    const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;

    GrayImage img(h, w);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = std::round(128.0 + contrast * (a[i] - mean) * inv_std);
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Augmentation: the 8 dihedral transforms of a square image.
// draw = mirror*4 + quarter_turns; rotation applied first, clockwise.
// ---------------------------------------------------------------------------

inline RealImage augment(const RealImage& img, int draw) {
    require(img.h == img.w, "augment: image must be square, got " + std::to_string(img.h) + "x" +
                                std::to_string(img.w));
    require(draw >= 0 && draw < 8, "augment: draw must be in [0,8), got " + std::to_string(draw));
    const int n = img.h;
    const int rot = draw & 3;
    const bool mirror = (draw & 4) != 0;
    RealImage out(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int sy = y, sx = x;
            switch (rot) {  // inverse rotation of the output coordinate
                case 0: break;
                case 1: sy = n - 1 - x; sx = y; break;
                case 2: sy = n - 1 - y; sx = n - 1 - x; break;
                case 3: sy = x; sx = n - 1 - y; break;
            }
            const int ox = mirror ? n - 1 - x : x;
            out.at(y, ox) = img.at(sy, sx);
        }
    return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum and a step learning-rate schedule.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr0 = 0.001;
    double lr_divisor = 5.0;
    std::int64_t lr_step = 30000;
    double momentum = 0.9;
    int batch_pairs = 16;
    std::int64_t max_iters = 120000;
    std::int64_t checkpoint_every = 5000;
    std::uint64_t seed = 0;
    // Weight init (applied at graph build time): conv kernels zero-mean
    // Gaussian sigma 0.01; dense layer uniform +-sqrt(3/fan_in); biases 0.2
    // on 3x3 convs, none on 1x1, 0 on the first layer and the dense layer.
};

// Scales the full-size schedule (lr_step 30000, checkpoints every 5000 of
// 120000 iterations) proportionally to a smaller run length.
inline TrainConfig scaled_config(std::int64_t max_iters, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.max_iters = max_iters;
    cfg.seed = seed;
    const double scale = static_cast<double>(max_iters) / 120000.0;
    cfg.lr_step = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(30000 * scale)));
    cfg.checkpoint_every =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(5000 * scale)));
    return cfg;
}

inline double lr_at(const TrainConfig& cfg, std::int64_t iter) {
    const std::int64_t k = iter / cfg.lr_step;
    return cfg.lr0 / std::pow(cfg.lr_divisor, static_cast<double>(k));
}

struct SgdState {
    std::map<std::string, std::vector<float>> velocity;
    std::int64_t iter = 0;
};

// v <- momentum*v - lr*grad; p <- p + v. Uses lr_at(cfg, state.iter).
inline void apply_sgd_update(NetGraph& g, SgdState& state, const TrainConfig& cfg) {
    const float lr = static_cast<float>(lr_at(cfg, state.iter));
    const float mom = static_cast<float>(cfg.momentum);
    for (auto& [name, p] : g.params) {
        if (!p.trainable) continue;
        auto& vel = state.velocity[name];
        if (vel.size() != p.v.size()) vel.assign(p.v.size(), 0.0f);
        for (std::size_t i = 0; i < p.v.size(); ++i) {
            vel[i] = mom * vel[i] - lr * p.g[i];
            p.v[i] += vel[i];
        }
    }
    ++state.iter;
}

// ---------------------------------------------------------------------------
// Evaluation: average the stego probability across models, threshold at 0.5
// (tie predicts cover).
// ---------------------------------------------------------------------------

inline std::vector<double> ensemble_stego_probs(std::vector<NetGraph*> models,
                                                const std::vector<const RealImage*>& imgs,
                                                int batch_size = 16) {
    require(!models.empty(), "ensemble_stego_probs: need at least one model");
    std::vector<double> mean(imgs.size(), 0.0);
    for (NetGraph* m : models) {
        const std::vector<double> p = predict_stego_probs(*m, imgs, batch_size);
        for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
    }
    for (auto& x : mean) x /= static_cast<double>(models.size());
    return mean;
}

inline double evaluate(std::vector<NetGraph*> models, const LoadedPairs& data,
                       int batch_size = 16) {
    require(!data.empty(), "evaluate: empty dataset");
    std::vector<const RealImage*> imgs;
    imgs.reserve(2 * data.size());
    for (const auto& im : data.covers) imgs.push_back(&im);
    for (const auto& im : data.stegos) imgs.push_back(&im);
    const std::vector<double> probs = ensemble_stego_probs(models, imgs, batch_size);
    std::int64_t wrong = 0;
    const std::size_t nc = data.covers.size();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool said_stego = probs[i] > 0.5;
        const bool is_stego = i >= nc;
        wrong += said_stego != is_stego;
    }
    return static_cast<double>(wrong) / static_cast<double>(probs.size());
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<std::string> checkpoint_paths;
    std::string log_csv;
    double final_val_error = 1.0;
    double final_loss = 0.0;
    std::int64_t iterations = 0;
};

// Trains in place. Batches hold batch_pairs cover/stego pairs (cover at even
// slots, its stego right after, same augmentation draw). Pair order is
// reshuffled every epoch. Checkpoints and the CSV log go to out_dir unless it
// is empty. Deterministic in cfg.seed.
inline TrainResult train(NetGraph& g, const LoadedPairs& train_pairs,
                         const LoadedPairs& val_pairs, const TrainConfig& cfg,
                         const std::string& out_dir = "") {
    require(!train_pairs.empty(), "train: empty training set");
    require(train_pairs.covers.size() == train_pairs.stegos.size(),
            "train: cover/stego counts differ");
    require(cfg.batch_pairs >= 1, "train: batch_pairs must be >= 1");
    require(cfg.max_iters >= 1, "train: max_iters must be >= 1");
    require(cfg.lr_step >= 1, "train: lr_step must be >= 1");
    const int hh = train_pairs.covers[0].h, ww = train_pairs.covers[0].w;
    for (std::size_t i = 0; i < train_pairs.size(); ++i)
        require(train_pairs.covers[i].h == hh && train_pairs.covers[i].w == ww &&
                    train_pairs.stegos[i].h == hh && train_pairs.stegos[i].w == ww,
                "train: all images must share one size");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    Rng rng(cfg.seed);
    SgdState state;
    TrainResult result;

    std::ostringstream log;
    const double scale = static_cast<double>(cfg.max_iters) / 120000.0;
    log << "# schedule_scale=" << scale << " lr_step=" << cfg.lr_step
        << " checkpoint_every=" << cfg.checkpoint_every << " batch_pairs=" << cfg.batch_pairs
        << " seed=" << cfg.seed << " rng=" << Rng::algorithm_name() << "\n";
    log << "iter,lr,loss,val_error\n";

    const std::size_t npairs = train_pairs.size();
    std::vector<std::uint32_t> order(npairs);
    for (std::uint32_t i = 0; i < npairs; ++i) order[i] = i;
    std::size_t cursor = npairs;  // forces a shuffle on first use

    const int bp = cfg.batch_pairs;
    Tensor4f batch(2 * bp, 1, hh, ww);
    std::vector<int> labels(2 * bp);
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;

    while (state.iter < cfg.max_iters) {
        for (int j = 0; j < bp; ++j) {
            if (cursor >= npairs) {
                rng.shuffle(order);
                cursor = 0;
            }
            const std::uint32_t pi = order[cursor++];
            const int draw = static_cast<int>(rng.next_below(8));
            const RealImage ca = augment(train_pairs.covers[pi], draw);
            const RealImage sa = augment(train_pairs.stegos[pi], draw);
            float* cdst = batch.plane(2 * j, 0);
            float* sdst = batch.plane(2 * j + 1, 0);
            for (std::size_t q = 0; q < ca.values.size(); ++q) {
                cdst[q] = static_cast<float>(ca.values[q]) - kInputCenter;
                sdst[q] = static_cast<float>(sa.values[q]) - kInputCenter;
            }
            labels[2 * j] = 0;
            labels[2 * j + 1] = 1;
        }

        zero_grads(g);
        ForwardCache cache;
        net_forward(g, batch, true, &cache);
        const double loss = net_backward(g, cache, labels);
        if (!std::isfinite(loss))
            throw TrainingDiverged("training loss became non-finite", state.iter);
        loss_sum += loss;
        ++loss_count;
        apply_sgd_update(g, state, cfg);  // advances state.iter

        if (state.iter % cfg.checkpoint_every == 0 || state.iter == cfg.max_iters) {
            double val_error = std::nan("");
            if (!val_pairs.empty()) {
                NetGraph* self[] = {&g};
                val_error = evaluate({self[0]}, val_pairs, 2 * bp);
            }
            const double mean_loss = loss_sum / static_cast<double>(loss_count);
            log << state.iter << "," << lr_at(cfg, state.iter - 1) << "," << mean_loss << ","
                << val_error << "\n";
            loss_sum = 0.0;
            loss_count = 0;
            result.final_val_error = val_error;
            result.final_loss = mean_loss;
            if (!out_dir.empty()) {
                CheckpointMeta meta;
                meta.iteration = state.iter;
                meta.rng_key = rng.key();
                meta.rng_counter = rng.counter();
                const std::string path =
                    out_dir + "/checkpoint_" + std::to_string(state.iter) + ".stgn";
                save_checkpoint(g, path, meta);
                result.checkpoint_paths.push_back(path);
            }
        }
    }
    result.iterations = state.iter;
    result.log_csv = log.str();
    if (!out_dir.empty()) write_text_file(out_dir + "/train_log.csv", result.log_csv);
    return result;
}

}  // namespace steglab
