// steglab: command-line driver for the steganalysis pipeline. Subcommands
// cover the whole experiment: synthesizing covers, JPEG preparation, +/-1
// embedding, network training, checkpoint evaluation, feature extraction,
// and probability fusion. Every command writes exactly one manifest into its
// output directory and exits 0 only if all declared outputs were written and
// re-read successfully.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steglab/dctnet.hpp"
#include "steglab/fld.hpp"
#include "steglab/fusion.hpp"
#include "steglab/gfr.hpp"
#include "steglab/jpeg.hpp"
#include "steglab/parallel.hpp"
#include "steglab/stego.hpp"
#include "steglab/trainer.hpp"

namespace fs = std::filesystem;
using namespace steglab;

namespace {

constexpr const char* kToolVersion = "steglab 1.0.0";

// Stated in every report this tool emits: stego data comes from the
// rate-matched random +/-1 simulator, not from a cost-based embedder.
constexpr const char* kEmbeddingNote =
    "stego data is rate-matched random +/-1 embedding, not a cost-based embedder";
constexpr const char* kEnsembleNote =
    "classifier subspace size and learner count are fixed defaults, not searched out-of-bag";

std::string iso_timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

// Canonical-ordered key/value run record: one "key=value" line per entry,
// keys unique and sorted. Exactly one manifest per output directory.
struct Manifest {
    std::map<std::string, std::string> kv;

    void set(const std::string& k, const std::string& v) { kv[k] = v; }
    void set(const std::string& k, double v) { kv[k] = fmt_double(v); }
    void set(const std::string& k, std::int64_t v) { kv[k] = std::to_string(v); }
    void set_hash(const std::string& k, std::uint64_t v) { kv[k] = hex64(v); }

    void write(const std::string& dir) const {
        std::ostringstream os;
        for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
        write_text_file(dir + "/manifest.txt", os.str());
    }
};

Manifest base_manifest(const std::string& command, std::uint64_t seed) {
    Manifest m;
    m.set("command", command);
    m.set("note.embedding", kEmbeddingNote);
    m.set("rng.algorithm", Rng::algorithm_name());
    m.set("seed", static_cast<std::int64_t>(seed));
    m.set("timestamp.start", iso_timestamp());
    m.set("version", kToolVersion);
    return m;
}

std::uint64_t file_hash(const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    return fnv1a64(d.data(), d.size());
}

std::vector<std::string> list_files(const std::string& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void ensure_dir(const std::string& dir) {
    fs::create_directories(dir);
    if (!fs::is_directory(dir)) throw IoError("cannot create output directory: " + dir);
}

// ---------------------------------------------------------------------------
// synth: smoothed random textures as PGM covers (the pipeline's data source;
// fetching external datasets is out of scope).
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out_dir;
    int count = 10;
    int size = 64;
    std::uint64_t seed = 0;
    double blur_sigma = 2.0;
    double contrast = 38.0;
};

int cmd_synth(const SynthArgs& a) {
    ensure_dir(a.out_dir);
    Manifest m = base_manifest("synth", a.seed);
    m.set("config.blur_sigma", a.blur_sigma);
    m.set("config.contrast", a.contrast);
    m.set("config.count", static_cast<std::int64_t>(a.count));
    m.set("config.size", static_cast<std::int64_t>(a.size));

    const Rng root(a.seed);
    std::vector<std::string> paths(a.count);
    parallel_for(0, a.count, [&](std::int64_t i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        const GrayImage img = synthesize_texture(a.size, a.size, rng, a.blur_sigma, a.contrast);
        char name[32];
        std::snprintf(name, sizeof name, "%05lld.pgm", static_cast<long long>(i));
        paths[i] = a.out_dir + "/" + name;
        write_pgm(paths[i], img);
    });

    for (const auto& p : paths) {  // verify: every output re-reads to the right shape
        const GrayImage img = read_pgm(p);
        require(img.h == a.size && img.w == a.size, "synth: verification failed for " + p);
    }
    m.set("output.count", static_cast<std::int64_t>(a.count));
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "synth: wrote " << a.count << " covers to " << a.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// prepare: PGM covers -> quantized coefficient containers.
// ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string src_dir, out_dir;
    int size = 256;
    int quality_factor = 75;
};

int cmd_prepare(const PrepareArgs& a) {
    ensure_dir(a.out_dir);
    const std::vector<std::string> files = list_files(a.src_dir, ".pgm");
    if (files.empty()) {
        std::cerr << "error: no .pgm files in " << a.src_dir << "\n";
        return 1;
    }
    const QuantTable qt = quality_to_qtable(a.quality_factor);

    Manifest m = base_manifest("prepare", 0);
    m.set("config.quality_factor", static_cast<std::int64_t>(a.quality_factor));
    m.set("config.size", static_cast<std::int64_t>(a.size));

    std::vector<std::string> outs(files.size()), errors(files.size());
    std::vector<std::uint64_t> hashes(files.size(), 0);
    parallel_for(0, static_cast<std::int64_t>(files.size()), [&](std::int64_t i) {
        try {
            hashes[i] = file_hash(files[i]);
            GrayImage img = read_pgm(files[i]);
            if (a.size > 0)
                img = resize_bilinear(img, a.size, a.size);
            else
                img = crop_to_block_multiple(img);
            const CoefficientImage ci = compress(img, qt);
            const std::string out = a.out_dir + "/" + stem_of(files[i]) + ".stgc";
            write_stgc(out, ci);
            outs[i] = out;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    std::int64_t ok = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (!errors[i].empty()) {
            std::cerr << "warning: skipping " << files[i] << ": " << errors[i] << "\n";
            continue;
        }
        read_stgc(outs[i]);  // verify structure of what was written
        m.set_hash("input." + fs::path(files[i]).filename().string(), hashes[i]);
        ++ok;
    }
    m.set("output.count", ok);
    m.set("output.skipped", static_cast<std::int64_t>(files.size()) - ok);
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "prepare: wrote " << ok << "/" << files.size() << " coefficient files to "
              << a.out_dir << "\n";
    return ok > 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// embed: covers -> rate-matched +/-1 stegos plus the cover/stego pairing list.
// ---------------------------------------------------------------------------

struct EmbedArgs {
    std::string cover_dir, out_dir;
    double alpha = 0.4;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;
};

int cmd_embed(const EmbedArgs& a) {
    ensure_dir(a.out_dir);
    if (fs::weakly_canonical(a.cover_dir) == fs::weakly_canonical(a.out_dir))
        throw ContractError("embed: output directory must differ from the cover directory");
    const std::vector<std::string> covers = list_files(a.cover_dir, ".stgc");
    require(!covers.empty(), "embed: no .stgc covers in " + a.cover_dir);
    require(a.val_fraction >= 0.0 && a.val_fraction <= 1.0,
            "embed: val fraction must be in [0,1]");

    const double beta = payload_to_change_rate(a.alpha);
    const Rng root(a.seed);
    const std::int64_t n = static_cast<std::int64_t>(covers.size());
    std::vector<std::string> outs(n);
    std::vector<std::int64_t> changes(n, 0);
    std::vector<std::uint64_t> hashes(n, 0);
    parallel_for(0, n, [&](std::int64_t i) {
        hashes[i] = file_hash(covers[i]);
        const CoefficientImage ci = read_stgc(covers[i]);
        EmbedConfig ec;
        ec.alpha = a.alpha;
        ec.seed = root.split(static_cast<std::uint64_t>(i)).key();
        const CoefficientImage so = embed(ci, ec);
        for (std::size_t k = 0; k < ci.coeffs.size(); ++k)
            changes[i] += so.coeffs[k] != ci.coeffs[k];
        outs[i] = a.out_dir + "/" + stem_of(covers[i]) + ".stgc";
        write_stgc(outs[i], so);
    });

    // Pairing list: the last val_fraction of the (sorted) covers become the
    // validation split.
    const std::int64_t n_val = static_cast<std::int64_t>(std::llround(a.val_fraction * n));
    PairedDataset ds;
    for (std::int64_t i = 0; i < n; ++i)
        ds.push_back({covers[i], outs[i], i < n - n_val ? "train" : "val"});
    const std::string pairs_path = a.out_dir + "/pairs.csv";
    write_pair_manifest(pairs_path, ds);

    Manifest m = base_manifest("embed", a.seed);
    m.set("config.alpha", a.alpha);
    m.set("config.beta", beta);
    m.set("config.val_fraction", a.val_fraction);
    std::int64_t total_changes = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        read_stgc(outs[i]);  // verify
        m.set_hash("input." + fs::path(covers[i]).filename().string(), hashes[i]);
        m.set("changes." + stem_of(covers[i]), changes[i]);
        total_changes += changes[i];
    }
    read_pair_manifest(pairs_path);  // verify
    m.set("output.count", n);
    m.set("output.pairs", pairs_path);
    m.set("output.total_changes", total_changes);
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "embed: alpha=" << a.alpha << " beta=" << fmt_double(beta) << ", wrote " << n
              << " stego files and " << pairs_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train: fit one network on the train split of a pairing list.
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string pairs, out_dir;
    std::int64_t max_iters = 120000;
    int batch_pairs = 16;
    int variant = 0;
    double tlu_threshold = 8.0;
    std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
    ensure_dir(a.out_dir);
    const PairedDataset ds = read_pair_manifest(a.pairs);
    const LoadedPairs train_set = load_split(ds, "train");
    const LoadedPairs val_set = load_split(ds, "val");
    require(!train_set.empty(), "train: pairing list has no train split");
    const int h = train_set.covers[0].h, w = train_set.covers[0].w;

    NetGraph g = build_network(a.variant, h, w, a.seed, a.tlu_threshold);
    TrainConfig cfg = scaled_config(a.max_iters, a.seed);
    cfg.batch_pairs = a.batch_pairs;

    Manifest m = base_manifest("train", a.seed);
    m.set("config.batch_pairs", static_cast<std::int64_t>(cfg.batch_pairs));
    m.set("config.checkpoint_every", cfg.checkpoint_every);
    m.set("config.input_size", std::to_string(h) + "x" + std::to_string(w));
    m.set("config.lr0", cfg.lr0);
    m.set("config.lr_divisor", cfg.lr_divisor);
    m.set("config.lr_step", cfg.lr_step);
    m.set("config.max_iters", cfg.max_iters);
    m.set("config.momentum", cfg.momentum);
    m.set("config.tlu_threshold", a.tlu_threshold);
    m.set("config.variant", static_cast<std::int64_t>(a.variant));
    m.set_hash("input.pairs", file_hash(a.pairs));
    m.set_hash("network.graph", g.graph_hash());

    const TrainResult r = train(g, train_set, val_set, cfg, a.out_dir);

    // Verify: the last checkpoint must load back into a fresh graph (CRC and
    // graph-hash checked by the reader).
    require(!r.checkpoint_paths.empty(), "train: no checkpoints written");
    NetGraph probe = build_network(a.variant, h, w, a.seed, a.tlu_threshold);
    const CheckpointMeta meta = load_checkpoint(probe, r.checkpoint_paths.back());
    require(meta.iteration == r.iterations, "train: final checkpoint iteration mismatch");

    m.set("result.checkpoints", static_cast<std::int64_t>(r.checkpoint_paths.size()));
    m.set("result.final_loss", r.final_loss);
    m.set("result.final_val_error", r.final_val_error);
    m.set("result.iterations", r.iterations);
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "train: " << r.iterations << " iterations, final loss " << fmt_double(r.final_loss)
              << ", val error " << fmt_double(r.final_val_error) << ", "
              << r.checkpoint_paths.size() << " checkpoints in " << a.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval: per-checkpoint and averaged-probability detection error.
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pairs, checkpoint_dir, out_dir;
    std::vector<std::string> checkpoints;
    std::string split = "val";
    int variant = 0;
    double tlu_threshold = 8.0;
    int batch_size = 16;
};

int cmd_eval(const EvalArgs& a) {
    ensure_dir(a.out_dir);
    std::vector<std::string> paths = a.checkpoints;
    if (!a.checkpoint_dir.empty()) {
        const std::vector<std::string> extra = list_files(a.checkpoint_dir, ".stgn");
        paths.insert(paths.end(), extra.begin(), extra.end());
    }
    require(!paths.empty(), "eval: no checkpoints given");

    const PairedDataset ds = read_pair_manifest(a.pairs);
    const LoadedPairs data = load_split(ds, a.split);
    require(!data.empty(), "eval: pairing list has no '" + a.split + "' split");
    const int h = data.covers[0].h, w = data.covers[0].w;

    struct Loaded {
        NetGraph g;
        CheckpointMeta meta;
        std::string path;
    };
    std::vector<Loaded> models;
    for (const auto& p : paths) {
        Loaded l{build_network(a.variant, h, w, 0, a.tlu_threshold), {}, p};
        l.meta = load_checkpoint(l.g, p);
        models.push_back(std::move(l));
    }
    std::sort(models.begin(), models.end(),
              [](const Loaded& x, const Loaded& y) { return x.meta.iteration < y.meta.iteration; });

    std::ostringstream table, curve;
    table << "# " << kEmbeddingNote << "\n";
    table << "model,iteration,error\n";
    curve << "# " << kEmbeddingNote << "\n";
    curve << "iteration,val_error\n";
    std::vector<NetGraph*> all;
    for (auto& l : models) {
        NetGraph* self[] = {&l.g};
        const double err = evaluate({self[0]}, data, a.batch_size);
        table << fs::path(l.path).filename().string() << "," << l.meta.iteration << ","
              << fmt_double(err) << "\n";
        curve << l.meta.iteration << "," << fmt_double(err) << "\n";
        all.push_back(&l.g);
    }
    const double ens_err = evaluate(all, data, a.batch_size);
    table << "ensemble," << models.back().meta.iteration << "," << fmt_double(ens_err) << "\n";

    const std::string table_path = a.out_dir + "/error_table.csv";
    const std::string curve_path = a.out_dir + "/error_curve.csv";
    write_text_file(table_path, table.str());
    write_text_file(curve_path, curve.str());

    Manifest m = base_manifest("eval", 0);
    m.set("config.batch_size", static_cast<std::int64_t>(a.batch_size));
    m.set("config.split", a.split);
    m.set("config.tlu_threshold", a.tlu_threshold);
    m.set("config.variant", static_cast<std::int64_t>(a.variant));
    m.set_hash("input.pairs", file_hash(a.pairs));
    for (const auto& l : models)
        m.set_hash("input." + fs::path(l.path).filename().string(), file_hash(l.path));
    m.set("result.ensemble_error", ens_err);
    m.set("result.models", static_cast<std::int64_t>(models.size()));
    m.set("output.curve", curve_path);
    m.set("output.table", table_path);
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "eval: " << models.size() << " models on " << 2 * data.size() << " images ("
              << a.split << "), ensemble error " << fmt_double(ens_err) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// features: pooled network features or Gabor residual features for a split.
// ---------------------------------------------------------------------------

struct FeaturesArgs {
    std::string pairs, checkpoint_dir, out;
    std::vector<std::string> checkpoints;
    std::string split = "train";
    std::string mode = "cnn";  // cnn | gfr
    int variant = 0;
    double tlu_threshold = 8.0;
    bool sca = false;
    double alpha = 0.4;  // selection-channel payload for --sca
};

int cmd_features(const FeaturesArgs& a) {
    require(a.mode == "cnn" || a.mode == "gfr", "features: mode must be cnn or gfr");
    if (const std::string dir = fs::path(a.out).parent_path().string(); !dir.empty())
        ensure_dir(dir);
    const PairedDataset ds = read_pair_manifest(a.pairs);

    std::vector<const PairedSample*> samples;
    for (const auto& s : ds)
        if (s.split == a.split) samples.push_back(&s);
    require(!samples.empty(), "features: pairing list has no '" + a.split + "' split");
    const std::int64_t n = static_cast<std::int64_t>(samples.size());

    // Rows interleave cover,stego per pair so labels are 0,1,0,1,...
    std::vector<std::vector<float>> rows(2 * n);
    std::vector<int> labels(2 * n);
    for (std::int64_t i = 0; i < n; ++i) {
        labels[2 * i] = 0;
        labels[2 * i + 1] = 1;
    }

    Manifest m = base_manifest("features", 0);
    m.set("config.mode", a.mode);
    m.set("config.split", a.split);
    m.set_hash("input.pairs", file_hash(a.pairs));
    std::string config_desc = "mode=" + a.mode + ";split=" + a.split;

    if (a.mode == "cnn") {
        std::vector<std::string> paths = a.checkpoints;
        if (!a.checkpoint_dir.empty()) {
            const std::vector<std::string> extra = list_files(a.checkpoint_dir, ".stgn");
            paths.insert(paths.end(), extra.begin(), extra.end());
        }
        require(!paths.empty(), "features: cnn mode needs checkpoints");

        const RealImage first = decompress_real(read_stgc(samples[0]->cover_path));
        std::vector<NetGraph> models;
        std::vector<std::pair<std::int64_t, std::size_t>> order;
        for (std::size_t k = 0; k < paths.size(); ++k) {
            NetGraph g = build_network(a.variant, first.h, first.w, 0, a.tlu_threshold);
            const CheckpointMeta meta = load_checkpoint(g, paths[k]);
            models.push_back(std::move(g));
            order.emplace_back(meta.iteration, k);
        }
        std::sort(order.begin(), order.end());  // concatenate in iteration order

        for (std::int64_t i = 0; i < n; ++i) {
            const RealImage cov = decompress_real(read_stgc(samples[i]->cover_path));
            const RealImage stg = decompress_real(read_stgc(samples[i]->stego_path));
            for (const auto& [iter, k] : order) {
                const std::vector<float> fc = extract_features(models[k], cov);
                const std::vector<float> fsx = extract_features(models[k], stg);
                rows[2 * i].insert(rows[2 * i].end(), fc.begin(), fc.end());
                rows[2 * i + 1].insert(rows[2 * i + 1].end(), fsx.begin(), fsx.end());
            }
        }
        for (const auto& [iter, k] : order) {
            config_desc += ";ckpt=" + hex64(file_hash(paths[k]));
            m.set_hash("input." + fs::path(paths[k]).filename().string(), file_hash(paths[k]));
        }
        m.set("config.models", static_cast<std::int64_t>(models.size()));
        m.set("config.tlu_threshold", a.tlu_threshold);
        m.set("config.variant", static_cast<std::int64_t>(a.variant));
    } else {
        const GaborBank bank = build_gabor_bank();
        const CoefficientImage first = read_stgc(samples[0]->cover_path);
        const double q = default_gfr_quantizer(first.qtable);
        const double beta = a.sca ? payload_to_change_rate(a.alpha) : 0.0;
        parallel_for(0, n, [&](std::int64_t i) {
            const CoefficientImage cci = read_stgc(samples[i]->cover_path);
            const CoefficientImage sci = read_stgc(samples[i]->stego_path);
            const RealImage cov = decompress_real(cci);
            const RealImage stg = decompress_real(sci);
            if (a.sca) {
                rows[2 * i] = extract_sca(cov, bank, q, 4, simulator_change_probs(cci, beta));
                rows[2 * i + 1] = extract_sca(stg, bank, q, 4, simulator_change_probs(sci, beta));
            } else {
                rows[2 * i] = extract(cov, bank, q);
                rows[2 * i + 1] = extract(stg, bank, q);
            }
        });
        config_desc += ";q=" + fmt_double(q) + ";sca=" + (a.sca ? "1" : "0");
        if (a.sca) config_desc += ";alpha=" + fmt_double(a.alpha);
        m.set("config.quantizer", q);
        m.set("config.sca", a.sca ? "1" : "0");
        if (a.sca) m.set("config.alpha", a.alpha);
    }

    const std::uint64_t config_hash = fnv1a64(config_desc);
    write_features(a.out, rows, config_hash);
    write_labels(a.out + ".labels", labels);

    const FeatureFile check = read_features(a.out);  // verify
    require(check.rows.size() == rows.size() && check.config_hash == config_hash,
            "features: verification failed for " + a.out);
    read_labels(a.out + ".labels");

    if (const std::string dir = fs::path(a.out).parent_path().string(); !dir.empty()) {
        m.set_hash("config.hash", config_hash);
        m.set("output.dim", static_cast<std::int64_t>(check.dim));
        m.set("output.features", a.out);
        m.set("output.rows", static_cast<std::int64_t>(rows.size()));
        m.set("timestamp.end", iso_timestamp());
        m.write(dir);
    }
    std::cout << "features: " << rows.size() << " rows of dim " << check.dim << " -> " << a.out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fuse: train the fused predictor and emit its probability report.
// ---------------------------------------------------------------------------

struct FuseArgs {
    std::string cnn_features, classical_features, out_dir;
    std::string cnn_test, classical_test;  // default: predict on the training rows
    std::uint64_t seed = 0;
    int d_sub = 0;  // 0 = min(dim, 300)
    int learners = 51;
    int n_cnn_classifiers = 6;
};

int cmd_fuse(const FuseArgs& a) {
    ensure_dir(a.out_dir);
    const FeatureFile cnn = read_features(a.cnn_features);
    const FeatureFile cls = read_features(a.classical_features);
    const std::vector<int> labels = read_labels(a.cnn_features + ".labels");
    require(cnn.rows.size() == cls.rows.size() && cnn.rows.size() == labels.size(),
            "fuse: training feature/label counts differ");

    FusionConfig fc;
    fc.n_cnn_classifiers = a.n_cnn_classifiers;
    if (cnn.dim % 160 == 0) fc.n_cnn_models = static_cast<int>(cnn.dim / 160);
    const FusionModel fm = train_fusion(cnn.rows, cls.rows, labels, fc, a.seed, a.d_sub,
                                        a.learners);
    const std::string model_path = a.out_dir + "/fusion.stgu";
    write_fusion_model(model_path, fm);
    read_fusion_model(model_path);  // verify

    const bool have_test = !a.cnn_test.empty();
    require(!have_test || !a.classical_test.empty(),
            "fuse: --cnn-test and --classical-test must be given together");
    const FeatureFile tc = have_test ? read_features(a.cnn_test) : cnn;
    const FeatureFile tk = have_test ? read_features(a.classical_test) : cls;
    require(tc.rows.size() == tk.rows.size(), "fuse: test feature counts differ");
    std::vector<int> truth;
    const std::string truth_path = (have_test ? a.cnn_test : a.cnn_features) + ".labels";
    if (fs::exists(truth_path)) truth = read_labels(truth_path);

    std::ostringstream csv;
    csv << "# " << kEmbeddingNote << "\n";
    csv << "# " << kEnsembleNote << "\n";
    csv << "sample";
    for (std::size_t k = 0; k < fm.cnn_classifiers.size() + 1; ++k) csv << ",P" << k;
    csv << ",fused,label\n";
    std::int64_t wrong = 0;
    for (std::size_t i = 0; i < tc.rows.size(); ++i) {
        const FusionPrediction p = fusion_predict(fm, tc.rows[i], tk.rows[i]);
        csv << i;
        for (double v : p.probs) csv << "," << fmt_double(v);
        csv << "," << fmt_double(p.fused) << "," << p.label << "\n";
        if (i < truth.size()) wrong += p.label != truth[i];
    }
    const std::string csv_path = a.out_dir + "/predictions.csv";
    write_text_file(csv_path, csv.str());

    Manifest m = base_manifest("fuse", a.seed);
    m.set("config.d_sub", static_cast<std::int64_t>(a.d_sub));
    m.set("config.learners", static_cast<std::int64_t>(a.learners));
    m.set("config.n_cnn_classifiers", static_cast<std::int64_t>(fc.n_cnn_classifiers));
    m.set("config.n_cnn_models", static_cast<std::int64_t>(fc.n_cnn_models));
    m.set("note.ensemble", kEnsembleNote);
    m.set_hash("input.classical", file_hash(a.classical_features));
    m.set_hash("input.cnn", file_hash(a.cnn_features));
    if (have_test) {
        m.set_hash("input.classical_test", file_hash(a.classical_test));
        m.set_hash("input.cnn_test", file_hash(a.cnn_test));
    }
    if (!truth.empty())
        m.set("result.error",
              static_cast<double>(wrong) / static_cast<double>(tc.rows.size()));
    m.set("output.model", model_path);
    m.set("output.predictions", csv_path);
    m.set("timestamp.end", iso_timestamp());
    m.write(a.out_dir);
    std::cout << "fuse: " << fm.cnn_classifiers.size() + 1 << " probabilities per sample, report "
              << csv_path << "\n";
    if (!truth.empty())
        std::cout << "fuse: detection error "
                  << fmt_double(static_cast<double>(wrong) / static_cast<double>(tc.rows.size()))
                  << " on " << tc.rows.size() << " samples\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steglab: JPEG steganalysis experiments (synthesis, embedding, training, fusion)"};
    app.require_subcommand(1);

    SynthArgs sy;
    CLI::App* synth = app.add_subcommand("synth", "Generate smoothed random texture covers (PGM)");
    synth->add_option("--out-dir", sy.out_dir, "Output directory")->required();
    synth->add_option("--count", sy.count, "Number of images");
    synth->add_option("--size", sy.size, "Square image size in pixels");
    synth->add_option("--seed", sy.seed, "Root seed");
    synth->add_option("--blur-sigma", sy.blur_sigma, "Gaussian blur sigma");
    synth->add_option("--contrast", sy.contrast, "Texture contrast");

    PrepareArgs pr;
    CLI::App* prepare = app.add_subcommand("prepare", "Compress PGM covers to coefficient files");
    prepare->add_option("--src-dir", pr.src_dir, "Directory of .pgm inputs")->required();
    prepare->add_option("--out-dir", pr.out_dir, "Output directory")->required();
    prepare->add_option("--size", pr.size, "Resize target (0 = crop to block multiple)");
    prepare->add_option("--quality-factor", pr.quality_factor, "JPEG quality factor");

    EmbedArgs em;
    CLI::App* embed_cmd = app.add_subcommand("embed", "Rate-matched +/-1 embedding into covers");
    embed_cmd->add_option("--cover-dir", em.cover_dir, "Directory of cover .stgc files")
        ->required();
    embed_cmd->add_option("--out-dir", em.out_dir, "Output directory")->required();
    embed_cmd->add_option("--payload-bpnzac", em.alpha, "Payload in bits per nonzero AC");
    embed_cmd->add_option("--seed", em.seed, "Root seed");
    embed_cmd->add_option("--val-fraction", em.val_fraction,
                          "Fraction of pairs assigned to the val split");

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a detector on a pairing list");
    train_cmd->add_option("--pairs", tr.pairs, "pairs.csv from embed")->required();
    train_cmd->add_option("--out-dir", tr.out_dir, "Checkpoint/log directory")->required();
    train_cmd->add_option("--max-iters", tr.max_iters, "Training iterations");
    train_cmd->add_option("--batch-pairs", tr.batch_pairs, "Cover/stego pairs per batch");
    train_cmd->add_option("--variant", tr.variant, "Network variant (0 = proposed, 1-5)");
    train_cmd->add_option("--tlu-threshold", tr.tlu_threshold, "Truncation threshold T");
    train_cmd->add_option("--seed", tr.seed, "Root seed");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Detection error of saved checkpoints");
    eval_cmd->add_option("--pairs", ev.pairs, "pairs.csv from embed")->required();
    eval_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint file (repeatable)");
    eval_cmd->add_option("--checkpoint-dir", ev.checkpoint_dir, "Directory of .stgn checkpoints");
    eval_cmd->add_option("--out-dir", ev.out_dir, "Report directory")->required();
    eval_cmd->add_option("--split", ev.split, "Pairing-list split to evaluate");
    eval_cmd->add_option("--variant", ev.variant, "Network variant the checkpoints were built as");
    eval_cmd->add_option("--tlu-threshold", ev.tlu_threshold, "Truncation threshold T");
    eval_cmd->add_option("--batch-size", ev.batch_size, "Inference batch size");

    FeaturesArgs fe;
    CLI::App* feat_cmd = app.add_subcommand("features", "Extract detector or Gabor features");
    feat_cmd->add_option("--pairs", fe.pairs, "pairs.csv from embed")->required();
    feat_cmd->add_option("--out", fe.out, "Output feature file (.stgf)")->required();
    feat_cmd->add_option("--split", fe.split, "Pairing-list split to extract");
    feat_cmd->add_option("--mode", fe.mode, "cnn (pooled network features) or gfr");
    feat_cmd->add_option("--checkpoint", fe.checkpoints, "Checkpoint file (repeatable, cnn mode)");
    feat_cmd->add_option("--checkpoint-dir", fe.checkpoint_dir, "Directory of .stgn checkpoints");
    feat_cmd->add_option("--variant", fe.variant, "Network variant (cnn mode)");
    feat_cmd->add_option("--tlu-threshold", fe.tlu_threshold, "Truncation threshold T (cnn mode)");
    feat_cmd->add_flag("--sca", fe.sca, "Selection-channel-aware Gabor features");
    feat_cmd->add_option("--payload-bpnzac", fe.alpha, "Payload assumed by --sca");

    FuseArgs fu;
    CLI::App* fuse_cmd = app.add_subcommand("fuse", "Train the fused predictor and report");
    fuse_cmd->add_option("--cnn-features", fu.cnn_features, "Concatenated detector features")
        ->required();
    fuse_cmd->add_option("--classical-features", fu.classical_features, "Gabor features")
        ->required();
    fuse_cmd->add_option("--cnn-test", fu.cnn_test, "Held-out detector features");
    fuse_cmd->add_option("--classical-test", fu.classical_test, "Held-out Gabor features");
    fuse_cmd->add_option("--out-dir", fu.out_dir, "Model/report directory")->required();
    fuse_cmd->add_option("--seed", fu.seed, "Root seed");
    fuse_cmd->add_option("--d-sub", fu.d_sub, "Subspace dimension (0 = min(dim, 300))");
    fuse_cmd->add_option("--learners", fu.learners, "Learners per ensemble");
    fuse_cmd->add_option("--cnn-classifiers", fu.n_cnn_classifiers,
                         "Ensembles on the concatenated detector features");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(synth)) return cmd_synth(sy);
        if (app.got_subcommand(prepare)) return cmd_prepare(pr);
        if (app.got_subcommand(embed_cmd)) return cmd_embed(em);
        if (app.got_subcommand(train_cmd)) return cmd_train(tr);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(ev);
        if (app.got_subcommand(feat_cmd)) return cmd_features(fe);
        if (app.got_subcommand(fuse_cmd)) return cmd_fuse(fu);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
