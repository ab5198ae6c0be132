#pragma once

// The 9-group densely connected detector network: DCT-basis first layer,
// truncation activation, dense blocks with 1x1 bottlenecks and strided
// transitions, global average pooling, 2-way dense classifier. Also the five
// ablation variants, parameter audit, checkpoints, and feature extraction.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "steglab/bytes.hpp"
#include "steglab/error.hpp"
#include "steglab/jpeg.hpp"
#include "steglab/ops.hpp"
#include "steglab/rng.hpp"
#include "steglab/tensor.hpp"

namespace steglab {

// ---------------------------------------------------------------------------
// First-layer kernel bank: 4x4 DCT-II basis patterns.
// ---------------------------------------------------------------------------

struct DctKernelBank {
    Tensor4<double> kernels;  // (16, 1, 4, 4); kernel index = 4*k + l
    bool trainable = true;

    DctKernelBank() : kernels(16, 1, 4, 4) {}
};

// B[k][l][m][n] = (w_k * w_l / 4) * cos(k*pi*(2m+1)/8) * cos(l*pi*(2n+1)/8)
// with w_0 = 1, w_x = 1/sqrt(2) for x > 0 and k,l,m,n in {0..3}. The
// one-based indexing variant (indices {1..4}) is kept for comparison; it
// leaves every kernel with k=4 or l=4 identically zero.
inline DctKernelBank init_dct_kernels(bool one_based_indices = false) {
    DctKernelBank bank;
    const double pi = std::acos(-1.0);
    const int base = one_based_indices ? 1 : 0;
    for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
            const int kk = k + base, ll = l + base;
            const double wk = kk == 0 ? 1.0 : 1.0 / std::sqrt(2.0);
            const double wl = ll == 0 ? 1.0 : 1.0 / std::sqrt(2.0);
            for (int m = 0; m < 4; ++m)
                for (int n = 0; n < 4; ++n) {
                    const int mm = m + base, nn = n + base;
                    bank.kernels.at(4 * k + l, 0, m, n) =
                        (wk * wl / 4.0) * std::cos(kk * pi * (2 * mm + 1) / 8.0) *
                        std::cos(ll * pi * (2 * nn + 1) / 8.0);
                }
        }
    return bank;
}

struct TluConfig {
    double t = 8.0;
};

// ---------------------------------------------------------------------------
// Graph representation.
// ---------------------------------------------------------------------------

enum class NodeKind : std::uint8_t {
    Input,
    Conv,
    BatchNorm,
    Relu,
    Tlu,
    Abs,
    Concat,
    AddInto,  // out = inputs[0]; out[:, :c1] += inputs[1]
    Gap,
    Dense,  // 2-way classifier; activation holds softmax probabilities
};

struct NetNode {
    NodeKind kind{};
    std::string name;  // parameter base name; empty for stateless nodes
    std::vector<int> inputs;
    int group = 0;  // 1..9 per the architecture table
    int out_c = 0, in_c = 0, kh = 0, kw = 0, stride = 1;
    Padding pad{};
    bool has_bias = false;
};

struct Param {
    std::vector<float> v;          // values
    std::vector<float> g;          // gradient accumulator
    std::array<int, 4> shape{};    // conv kernels (oc,ic,kh,kw); vectors (len,1,1,1)
    bool trainable = true;
};

struct NetGraph {
    std::vector<NetNode> nodes;
    std::map<std::string, Param> params;  // ordered: deterministic walk
    int input_h = 0, input_w = 0;
    int variant = 0;  // 0 = proposed, 1..5 = ablations
    double tlu_threshold = 8.0;
    bool one_based_dct = false;
    int feature_node = -1;  // global-average-pool node
    int dense_node = -1;
    int feature_dim = 0;

    Param& param(const std::string& name) {
        auto it = params.find(name);
        require(it != params.end(), "unknown parameter '" + name + "'");
        return it->second;
    }
    const Param& param(const std::string& name) const {
        auto it = params.find(name);
        require(it != params.end(), "unknown parameter '" + name + "'");
        return it->second;
    }

    std::int64_t parameter_count(bool trainable_only = true) const {
        std::int64_t total = 0;
        for (const auto& [name, p] : params)
            if (!trainable_only || p.trainable) total += static_cast<std::int64_t>(p.v.size());
        return total;
    }

    std::uint64_t graph_hash() const {
        ByteWriter bw;
        bw.str("steglab-netgraph-v1");
        bw.u32(static_cast<std::uint32_t>(variant));
        bw.u64(std::bit_cast<std::uint64_t>(tlu_threshold));
        bw.u8(one_based_dct ? 1 : 0);
        for (const auto& n : nodes) {
            bw.u8(static_cast<std::uint8_t>(n.kind));
            bw.str(n.name);
            bw.u8(0);
            for (int in : n.inputs) bw.u32(static_cast<std::uint32_t>(in));
            bw.u32(0xffffffffu);
            bw.u32(static_cast<std::uint32_t>(n.group));
            bw.u32(static_cast<std::uint32_t>(n.out_c));
            bw.u32(static_cast<std::uint32_t>(n.in_c));
            bw.u32(static_cast<std::uint32_t>(n.kh));
            bw.u32(static_cast<std::uint32_t>(n.kw));
            bw.u32(static_cast<std::uint32_t>(n.stride));
            bw.u32(static_cast<std::uint32_t>(n.pad.top));
            bw.u32(static_cast<std::uint32_t>(n.pad.left));
            bw.u32(static_cast<std::uint32_t>(n.pad.bottom));
            bw.u32(static_cast<std::uint32_t>(n.pad.right));
            bw.u8(n.has_bias ? 1 : 0);
        }
        for (const auto& [name, p] : params) {
            bw.str(name);
            bw.u8(0);
            for (int d : p.shape) bw.u32(static_cast<std::uint32_t>(d));
            bw.u8(p.trainable ? 1 : 0);
        }
        return fnv1a64(bw.data().data(), bw.data().size());
    }
};

// ---------------------------------------------------------------------------
// Builders.
// ---------------------------------------------------------------------------

namespace detail {

struct GraphBuilder {
    NetGraph g;
    Rng rng;
    int variant;

    GraphBuilder(int variant_, std::uint64_t seed) : rng(seed), variant(variant_) {
        g.variant = variant_;
    }

    int add(NetNode n) {
        g.nodes.push_back(std::move(n));
        return static_cast<int>(g.nodes.size()) - 1;
    }

    void add_param(const std::string& name, std::array<int, 4> shape, std::vector<float> v,
                   bool trainable) {
        Param p;
        p.shape = shape;
        p.v = std::move(v);
        p.g.assign(p.v.size(), 0.0f);
        p.trainable = trainable;
        g.params.emplace(name, std::move(p));
    }

    std::vector<float> gaussian(std::size_t n, double sigma) {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.next_gaussian() * sigma);
        return v;
    }

    // bias_init < 0 means the layer has no bias term.
    int conv(const std::string& name, int in_node, int in_c, int oc, int k, int stride,
             Padding pad, double bias_init, int group, bool trainable = true,
             const std::vector<float>* fixed_kernels = nullptr) {
        std::vector<float> kv = fixed_kernels
                                    ? *fixed_kernels
                                    : gaussian(static_cast<std::size_t>(oc) * in_c * k * k, 0.01);
        add_param(name + ".kernels", {oc, in_c, k, k}, std::move(kv), trainable);
        const bool has_bias = bias_init >= 0.0;
        if (has_bias)
            add_param(name + ".bias", {oc, 1, 1, 1},
                      std::vector<float>(oc, static_cast<float>(bias_init)), trainable);
        NetNode n;
        n.kind = NodeKind::Conv;
        n.name = name;
        n.inputs = {in_node};
        n.group = group;
        n.out_c = oc;
        n.in_c = in_c;
        n.kh = n.kw = k;
        n.stride = stride;
        n.pad = pad;
        n.has_bias = has_bias;
        return add(n);
    }

    int batch_norm(const std::string& name, int in_node, int c, int group) {
        add_param(name + ".gamma", {c, 1, 1, 1}, std::vector<float>(c, 1.0f), true);
        add_param(name + ".beta", {c, 1, 1, 1}, std::vector<float>(c, 0.0f), true);
        add_param(name + ".running_mean", {c, 1, 1, 1}, std::vector<float>(c, 0.0f), false);
        add_param(name + ".running_var", {c, 1, 1, 1}, std::vector<float>(c, 1.0f), false);
        NetNode n;
        n.kind = NodeKind::BatchNorm;
        n.name = name;
        n.inputs = {in_node};
        n.group = group;
        n.out_c = n.in_c = c;
        return add(n);
    }

    int elementwise(NodeKind kind, int in_node, int c, int group) {
        NetNode n;
        n.kind = kind;
        n.inputs = {in_node};
        n.group = group;
        n.out_c = n.in_c = c;
        return add(n);
    }

    // Conv-BN-ReLU sequence; returns the ReLU node id.
    int cbr(const std::string& name, int in_node, int in_c, int oc, int k, int stride,
            Padding pad, double bias_init, int group) {
        const int c = conv(name, in_node, in_c, oc, k, stride, pad, bias_init, group);
        const int b = batch_norm(name + "_bn", c, oc, group);
        return elementwise(NodeKind::Relu, b, oc, group);
    }

    int concat(const std::vector<int>& in_nodes, const std::vector<int>& in_ch, int group) {
        NetNode n;
        n.kind = NodeKind::Concat;
        n.inputs = in_nodes;
        n.group = group;
        n.in_c = in_ch[0];
        n.out_c = 0;
        for (int c : in_ch) n.out_c += c;
        return add(n);
    }

    // Dense block of two bottleneck+3x3 units, optionally followed by the
    // strided transition. Returns {node, channels}.
    std::pair<int, int> block(int gi, int in_node, int in_c, bool with_transition) {
        const std::string base = "g" + std::to_string(gi);
        std::vector<int> cat_nodes = {in_node};
        std::vector<int> cat_ch = {in_c};
        int state = in_node, state_c = in_c;  // variant 1 running sum
        for (int u = 1; u <= 2; ++u) {
            int src_node, src_c;
            if (variant == 1) {
                src_node = state;
                src_c = state_c;
            } else if (cat_nodes.size() == 1) {
                src_node = cat_nodes[0];
                src_c = cat_ch[0];
            } else {
                src_node = concat(cat_nodes, cat_ch, gi);
                src_c = 0;
                for (int c : cat_ch) src_c += c;
            }
            int y;
            const std::string cu = base + "_conv" + std::to_string(u);
            if (variant == 2) {
                y = cbr(cu, src_node, src_c, 32, 3, 1, Padding::same(1), 0.2, gi);
            } else {
                const std::string bu = base + "_bottleneck" + std::to_string(u);
                int b;
                if (variant == 3)
                    b = cbr(bu, src_node, src_c, 96, 3, 1, Padding::same(1), 0.2, gi);
                else
                    b = cbr(bu, src_node, src_c, 96, 1, 1, Padding::same(0), -1.0, gi);
                y = cbr(cu, b, 96, 32, 3, 1, Padding::same(1), 0.2, gi);
            }
            if (variant == 1) {
                NetNode n;
                n.kind = NodeKind::AddInto;
                n.inputs = {state, y};
                n.group = gi;
                n.in_c = state_c;
                n.out_c = state_c;
                state = add(n);
            } else {
                cat_nodes.push_back(y);
                cat_ch.push_back(32);
            }
        }
        int out_node, out_c;
        if (variant == 1) {
            out_node = state;
            out_c = state_c;
        } else {
            out_node = concat(cat_nodes, cat_ch, gi);
            out_c = 0;
            for (int c : cat_ch) out_c += c;
        }
        if (with_transition) {
            if (variant == 2) {
                out_node = cbr(base + "_trans3", out_node, out_c, 96, 3, 2, Padding::same(1),
                               0.2, gi);
            } else {
                int t1;
                if (variant == 3)
                    t1 = cbr(base + "_trans1", out_node, out_c, 128, 3, 1, Padding::same(1),
                             0.2, gi);
                else
                    t1 = cbr(base + "_trans1", out_node, out_c, 128, 1, 1, Padding::same(0),
                             -1.0, gi);
                out_node =
                    cbr(base + "_trans3", t1, 128, 96, 3, 2, Padding::same(1), 0.2, gi);
            }
            out_c = 96;
        }
        return {out_node, out_c};
    }
};

}  // namespace detail

// variant 0 = proposed network; 1..5 = the ablation variants:
//   1: concatenation replaced by addition into the first 32 channels
//   2: all 1x1 (bottleneck and transition) layers deleted
//   3: all 1x1 layers replaced by 3x3 layers
//   4: first-layer kernel bank frozen at its DCT initialization
//   5: absolute-value layer inserted between the first layer and truncation
inline NetGraph build_network(int variant, int h, int w, std::uint64_t seed = 0,
                              double tlu_threshold = 8.0, bool one_based_dct = false) {
    require(variant >= 0 && variant <= 5,
            "build_network: variant must be in [0,5], got " + std::to_string(variant));
    require(h >= 32 && w >= 32 && h % 32 == 0 && w % 32 == 0,
            "build_network: input size " + std::to_string(h) + "x" + std::to_string(w) +
                " must be a positive multiple of 32");
    require(tlu_threshold > 0.0, "build_network: truncation threshold must be positive");

    detail::GraphBuilder b(variant, seed);
    b.g.input_h = h;
    b.g.input_w = w;
    b.g.tlu_threshold = tlu_threshold;
    b.g.one_based_dct = one_based_dct;

    NetNode input;
    input.kind = NodeKind::Input;
    input.group = 0;
    input.out_c = input.in_c = 1;
    int cur = b.add(input);

    // Group 1: 16 4x4 kernels, stride 1, output size preserved via asymmetric
    // padding (top/left 1, bottom/right 2).
    const DctKernelBank bank = init_dct_kernels(one_based_dct);
    std::vector<float> g1(bank.kernels.v.size());
    for (std::size_t i = 0; i < g1.size(); ++i) g1[i] = static_cast<float>(bank.kernels.v[i]);
    const bool g1_trainable = variant != 4;
    cur = b.conv("g1_conv", cur, 1, 16, 4, 1, Padding{1, 1, 2, 2}, 0.0, 1, g1_trainable, &g1);
    if (variant == 5) cur = b.elementwise(NodeKind::Abs, cur, 16, 1);

    // Group 2: truncation.
    cur = b.elementwise(NodeKind::Tlu, cur, 16, 2);

    // Group 3: two plain conv units, the second strided.
    cur = b.cbr("g3_conv1", cur, 16, 32, 3, 1, Padding::same(1), 0.2, 3);
    cur = b.cbr("g3_conv2", cur, 32, 64, 3, 2, Padding::same(1), 0.2, 3);

    // Groups 4-7: dense block + transition. Group 8: dense block + pooling.
    int ch = 64;
    for (int gi = 4; gi <= 7; ++gi) {
        auto [n, c] = b.block(gi, cur, ch, true);
        cur = n;
        ch = c;
    }
    auto [g8, g8c] = b.block(8, cur, ch, false);

    NetNode gap;
    gap.kind = NodeKind::Gap;
    gap.inputs = {g8};
    gap.group = 8;
    gap.in_c = gap.out_c = g8c;
    cur = b.add(gap);
    b.g.feature_node = cur;
    b.g.feature_dim = g8c;

    // Group 9: dense classifier, uniform fan-in init.
    {
        const int f = g8c;
        const double limit = std::sqrt(3.0 / f);
        std::vector<float> wv(static_cast<std::size_t>(2) * f);
        for (auto& x : wv) x = static_cast<float>((b.rng.next_double() * 2.0 - 1.0) * limit);
        b.add_param("g9_dense.weights", {2, f, 1, 1}, std::move(wv), true);
        b.add_param("g9_dense.bias", {2, 1, 1, 1}, std::vector<float>(2, 0.0f), true);
        NetNode n;
        n.kind = NodeKind::Dense;
        n.name = "g9_dense";
        n.inputs = {cur};
        n.group = 9;
        n.in_c = f;
        n.out_c = 2;
        cur = b.add(n);
        b.g.dense_node = cur;
    }
    return b.g;
}

inline NetGraph build_proposed(int h, int w, std::uint64_t seed = 0, double tlu_threshold = 8.0,
                               bool one_based_dct = false) {
    return build_network(0, h, w, seed, tlu_threshold, one_based_dct);
}

inline NetGraph build_variant(int id, int h, int w, std::uint64_t seed = 0,
                              double tlu_threshold = 8.0) {
    require(id >= 1 && id <= 5, "build_variant: id must be in [1,5], got " + std::to_string(id));
    return build_network(id, h, w, seed, tlu_threshold, false);
}

// ---------------------------------------------------------------------------
// Static shape audit.
// ---------------------------------------------------------------------------

struct NodeShape {
    int c = 0, h = 0, w = 0;
};

inline std::vector<NodeShape> infer_shapes(const NetGraph& g, int h, int w) {
    std::vector<NodeShape> s(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const NetNode& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::Input:
                s[i] = {1, h, w};
                break;
            case NodeKind::Conv: {
                const NodeShape& in = s[n.inputs[0]];
                s[i] = {n.out_c, conv_out_dim(in.h, n.kh, n.pad.top + n.pad.bottom, n.stride),
                        conv_out_dim(in.w, n.kw, n.pad.left + n.pad.right, n.stride)};
                break;
            }
            case NodeKind::Concat: {
                NodeShape sh = s[n.inputs[0]];
                sh.c = n.out_c;
                s[i] = sh;
                break;
            }
            case NodeKind::Gap:
                s[i] = {s[n.inputs[0]].c, 1, 1};
                break;
            case NodeKind::Dense:
                s[i] = {2, 1, 1};
                break;
            default:
                s[i] = s[n.inputs[0]];
                break;
        }
    }
    return s;
}

// Spatial output size (height) of each group 1..9 for a square input.
inline std::array<int, 9> group_output_sizes(const NetGraph& g, int h, int w) {
    const std::vector<NodeShape> shapes = infer_shapes(g, h, w);
    std::array<int, 9> out{};
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const int gi = g.nodes[i].group;
        if (gi >= 1 && gi <= 9) out[gi - 1] = shapes[i].h;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------------

struct ForwardCache {
    std::vector<Tensor4f> acts;
    std::vector<BnCache> bns;
};

namespace detail {

inline ConvParams<float> conv_params_of(NetGraph& g, const NetNode& n) {
    ConvParams<float> cp;
    const Param& kp = g.param(n.name + ".kernels");
    cp.kernels = Tensor4f(n.out_c, n.in_c, n.kh, n.kw, kp.v);
    if (n.has_bias) cp.bias = g.param(n.name + ".bias").v;
    cp.stride = n.stride;
    cp.pad = n.pad;
    return cp;
}

inline BatchNormParams<float> bn_params_of(NetGraph& g, const NetNode& n) {
    BatchNormParams<float> bp;
    bp.gamma = g.param(n.name + ".gamma").v;
    bp.beta = g.param(n.name + ".beta").v;
    bp.running_mean = g.param(n.name + ".running_mean").v;
    bp.running_var = g.param(n.name + ".running_var").v;
    bp.epsilon = 1e-5f;
    bp.momentum = 0.9f;
    return bp;
}

}  // namespace detail

// Runs the graph on a batch; returns per-sample class probabilities (n x 2,
// row-major, [cover, stego]). In training mode running BN statistics are
// updated and, with a cache, activations are retained for net_backward.
inline std::vector<double> net_forward(NetGraph& g, const Tensor4f& batch, bool training,
                                       ForwardCache* cache = nullptr) {
    require(batch.c == 1, "net_forward: input must have 1 channel, got " + std::to_string(batch.c));
    require(batch.h % 32 == 0 && batch.w % 32 == 0,
            "net_forward: input size " + std::to_string(batch.h) + "x" + std::to_string(batch.w) +
                " must be a multiple of 32");
    ForwardCache local;
    ForwardCache& C = cache ? *cache : local;
    C.acts.assign(g.nodes.size(), Tensor4f());
    C.bns.assign(g.nodes.size(), BnCache());

    std::vector<double> probs;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const NetNode& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::Input:
                C.acts[i] = batch;
                break;
            case NodeKind::Conv:
                C.acts[i] = conv2d(C.acts[n.inputs[0]], detail::conv_params_of(g, n));
                break;
            case NodeKind::BatchNorm: {
                BatchNormParams<float> bp = detail::bn_params_of(g, n);
                C.acts[i] = batch_norm(C.acts[n.inputs[0]], bp, training, &C.bns[i]);
                if (training) {
                    g.param(n.name + ".running_mean").v = bp.running_mean;
                    g.param(n.name + ".running_var").v = bp.running_var;
                }
                break;
            }
            case NodeKind::Relu:
                C.acts[i] = relu(C.acts[n.inputs[0]]);
                break;
            case NodeKind::Tlu:
                C.acts[i] = tlu(C.acts[n.inputs[0]], static_cast<float>(g.tlu_threshold));
                break;
            case NodeKind::Abs:
                C.acts[i] = abs_val(C.acts[n.inputs[0]]);
                break;
            case NodeKind::Concat: {
                std::vector<const Tensor4f*> xs;
                xs.reserve(n.inputs.size());
                for (int in : n.inputs) xs.push_back(&C.acts[in]);
                C.acts[i] = concat_channels(xs);
                break;
            }
            case NodeKind::AddInto: {
                Tensor4f out = C.acts[n.inputs[0]];
                const Tensor4f& add = C.acts[n.inputs[1]];
                require(add.c <= out.c && add.h == out.h && add.w == out.w && add.n == out.n,
                        "add layer: shape " + add.shape_str() + " does not fit into " +
                            out.shape_str());
                for (int ni = 0; ni < out.n; ++ni)
                    for (int ci = 0; ci < add.c; ++ci) {
                        float* dst = out.plane(ni, ci);
                        const float* src = add.plane(ni, ci);
                        for (std::size_t j = 0; j < out.plane_size(); ++j) dst[j] += src[j];
                    }
                C.acts[i] = std::move(out);
                break;
            }
            case NodeKind::Gap:
                C.acts[i] = global_avg_pool(C.acts[n.inputs[0]]);
                break;
            case NodeKind::Dense: {
                const Tensor4f& f = C.acts[n.inputs[0]];
                const std::vector<double> logits =
                    dense_logits(f, g.param(n.name + ".weights").v, g.param(n.name + ".bias").v, 2);
                probs = softmax_rows(logits, f.n, 2);
                Tensor4f out(f.n, 2, 1, 1);
                for (std::size_t j = 0; j < probs.size(); ++j)
                    out.v[j] = static_cast<float>(probs[j]);
                C.acts[i] = std::move(out);
                break;
            }
        }
    }
    return probs;
}

namespace detail {
template <typename T>
inline void add_grad(std::vector<Tensor4<T>>& grads, int idx, Tensor4<T>&& t) {
    if (grads[idx].size() == 0) {
        grads[idx] = std::move(t);
        return;
    }
    require(grads[idx].same_shape(t), "gradient accumulation shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) grads[idx].v[i] += t.v[i];
}
}  // namespace detail

inline void zero_grads(NetGraph& g) {
    for (auto& [name, p] : g.params) std::fill(p.g.begin(), p.g.end(), 0.0f);
}

// Backpropagates mean cross-entropy for the cached forward pass, accumulating
// into Param::g. Returns the loss.
inline double net_backward(NetGraph& g, const ForwardCache& C, const std::vector<int>& labels) {
    require(g.dense_node >= 0 && !C.acts.empty(), "net_backward: missing forward cache");
    const NetNode& dn = g.nodes[g.dense_node];
    Param& W = g.param(dn.name + ".weights");
    Param& B = g.param(dn.name + ".bias");
    auto r = dense_softmax_xent(C.acts[dn.inputs[0]], W.v, B.v, labels, 2);
    for (std::size_t i = 0; i < W.g.size(); ++i) W.g[i] += r.grad_weights[i];
    for (std::size_t i = 0; i < B.g.size(); ++i) B.g[i] += r.grad_bias[i];

    std::vector<Tensor4f> grads(g.nodes.size());
    grads[dn.inputs[0]] = std::move(r.grad_input);

    for (int i = g.dense_node - 1; i >= 0; --i) {
        if (grads[i].size() == 0) continue;
        const NetNode& n = g.nodes[i];
        const Tensor4f& gy = grads[i];
        switch (n.kind) {
            case NodeKind::Input:
            case NodeKind::Dense:
                break;
            case NodeKind::Conv: {
                auto cg = conv2d_grad(C.acts[n.inputs[0]], detail::conv_params_of(g, n), gy);
                Param& kp = g.param(n.name + ".kernels");
                if (kp.trainable)
                    for (std::size_t j = 0; j < kp.g.size(); ++j) kp.g[j] += cg.kernels.v[j];
                if (n.has_bias) {
                    Param& bp = g.param(n.name + ".bias");
                    if (bp.trainable)
                        for (std::size_t j = 0; j < bp.g.size(); ++j) bp.g[j] += cg.bias[j];
                }
                detail::add_grad(grads, n.inputs[0], std::move(cg.input));
                break;
            }
            case NodeKind::BatchNorm: {
                const BatchNormParams<float> bp = detail::bn_params_of(g, n);
                auto bg = batch_norm_grad(C.acts[n.inputs[0]], bp, C.bns[i], gy);
                Param& gp = g.param(n.name + ".gamma");
                Param& be = g.param(n.name + ".beta");
                for (std::size_t j = 0; j < gp.g.size(); ++j) gp.g[j] += bg.gamma[j];
                for (std::size_t j = 0; j < be.g.size(); ++j) be.g[j] += bg.beta[j];
                detail::add_grad(grads, n.inputs[0], std::move(bg.input));
                break;
            }
            case NodeKind::Relu:
                detail::add_grad(grads, n.inputs[0], relu_grad(C.acts[n.inputs[0]], gy));
                break;
            case NodeKind::Tlu:
                detail::add_grad(grads, n.inputs[0],
                                 tlu_grad(C.acts[n.inputs[0]],
                                          static_cast<float>(g.tlu_threshold), gy));
                break;
            case NodeKind::Abs:
                detail::add_grad(grads, n.inputs[0], abs_grad(C.acts[n.inputs[0]], gy));
                break;
            case NodeKind::Concat: {
                int off = 0;
                for (int in : n.inputs) {
                    const int c = C.acts[in].c;
                    detail::add_grad(grads, in, slice_channels(gy, off, c));
                    off += c;
                }
                break;
            }
            case NodeKind::AddInto: {
                const int c1 = C.acts[n.inputs[1]].c;
                Tensor4f full = gy;
                detail::add_grad(grads, n.inputs[0], std::move(full));
                detail::add_grad(grads, n.inputs[1], slice_channels(gy, 0, c1));
                break;
            }
            case NodeKind::Gap:
                detail::add_grad(grads, n.inputs[0], global_avg_pool_grad(C.acts[n.inputs[0]], gy));
                break;
        }
        grads[i] = Tensor4f();  // release as soon as consumed
    }
    return r.loss;
}

// ---------------------------------------------------------------------------
// Feature extraction.
// ---------------------------------------------------------------------------

// Net input centering. The front end's clamp threshold is sized for
// high-pass residuals, so the ~128 baseline of raw pixel data must be
// removed before the first convolution: left in, it saturates the
// DC-pattern channel from birth, and the common-mode kernel gradient
// (input mean × upstream gradient) drags every other channel into the
// clamp within a few hundred SGD steps.
inline constexpr float kInputCenter = 128.0f;

inline Tensor4f image_to_input(const RealImage& img) {
    Tensor4f x(1, 1, img.h, img.w);
    for (std::size_t i = 0; i < img.values.size(); ++i)
        x.v[i] = static_cast<float>(img.values[i]) - kInputCenter;
    return x;
}

// Pooled-layer feature vector (length = feature_dim) in inference mode.
inline std::vector<float> extract_features(NetGraph& g, const RealImage& img) {
    ForwardCache C;
    net_forward(g, image_to_input(img), false, &C);
    const Tensor4f& f = C.acts[g.feature_node];
    return std::vector<float>(f.v.begin(), f.v.end());
}

// Batched inference: per-sample stego probability for many images.
inline std::vector<double> predict_stego_probs(NetGraph& g, const std::vector<const RealImage*>& imgs,
                                               int batch_size = 16) {
    require(batch_size >= 1, "predict_stego_probs: batch size must be positive");
    std::vector<double> out;
    out.reserve(imgs.size());
    for (std::size_t at = 0; at < imgs.size(); at += batch_size) {
        const int bn = static_cast<int>(std::min<std::size_t>(batch_size, imgs.size() - at));
        Tensor4f x(bn, 1, imgs[at]->h, imgs[at]->w);
        for (int j = 0; j < bn; ++j) {
            const RealImage& im = *imgs[at + j];
            require(im.h == imgs[at]->h && im.w == imgs[at]->w,
                    "predict_stego_probs: images in a batch must share size");
            float* dst = x.plane(j, 0);
            for (std::size_t q = 0; q < im.values.size(); ++q)
                dst[q] = static_cast<float>(im.values[q]) - kInputCenter;
        }
        const std::vector<double> probs = net_forward(g, x, false, nullptr);
        for (int j = 0; j < bn; ++j) out.push_back(probs[2 * j + 1]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

inline constexpr char kStgnMagic[4] = {'S', 'T', 'G', 'N'};
inline constexpr std::uint16_t kStgnVersion = 1;

struct CheckpointMeta {
    std::int64_t iteration = 0;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
};

namespace detail {
inline void push_u64_as_f32(std::vector<float>& v, std::uint64_t x) {
    v.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(x & 0xffffffffull)));
    v.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(x >> 32)));
}
inline std::uint64_t pop_u64_from_f32(const std::vector<float>& v) {
    const auto lo = std::bit_cast<std::uint32_t>(v.at(0));
    const auto hi = std::bit_cast<std::uint32_t>(v.at(1));
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
}
}  // namespace detail

inline void save_checkpoint(const NetGraph& g, const std::string& path,
                            const CheckpointMeta& meta = {}) {
    std::map<std::string, std::vector<float>> arrays;
    {
        std::vector<float> it, rk, rc;
        detail::push_u64_as_f32(it, static_cast<std::uint64_t>(meta.iteration));
        detail::push_u64_as_f32(rk, meta.rng_key);
        detail::push_u64_as_f32(rc, meta.rng_counter);
        arrays["__iteration"] = std::move(it);
        arrays["__rng_key"] = std::move(rk);
        arrays["__rng_counter"] = std::move(rc);
    }
    for (const auto& [name, p] : g.params) arrays[name] = p.v;

    ByteWriter bw;
    bw.bytes(kStgnMagic, 4);
    bw.u16(kStgnVersion);
    bw.u64(g.graph_hash());
    bw.u32(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, v] : arrays) {
        bw.u16(static_cast<std::uint16_t>(name.size()));
        bw.str(name);
        bw.u32(static_cast<std::uint32_t>(v.size()));
        for (float f : v) bw.f32(f);
    }
    bw.crc_trailer();
    write_file(path, bw.data());
}

inline CheckpointMeta load_checkpoint(NetGraph& g, const std::string& path) {
    const std::vector<std::uint8_t> d = read_file(path);
    ByteReader br(d.data(), d.size());
    br.check_crc_trailer("checkpoint");
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, kStgnMagic, 4) != 0) throw ParseError("bad checkpoint magic", 0);
    const std::uint16_t ver = br.u16();
    if (ver != kStgnVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(ver), 4);
    const std::uint64_t file_hash = br.u64();
    const std::uint32_t count = br.u32();

    std::map<std::string, std::vector<float>> arrays;
    for (std::uint32_t a = 0; a < count; ++a) {
        const std::uint16_t nlen = br.u16();
        std::string name(nlen, '\0');
        br.bytes(name.data(), nlen);
        const std::uint32_t n = br.u32();
        std::vector<float> v(n);
        for (auto& f : v) f = br.f32();
        arrays.emplace(std::move(name), std::move(v));
    }

    for (auto& [name, p] : g.params) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw ParseError("checkpoint missing parameter '" + name + "'", 0);
        if (it->second.size() != p.v.size())
            throw ParseError("checkpoint parameter '" + name + "' has " +
                                 std::to_string(it->second.size()) + " values, graph expects " +
                                 std::to_string(p.v.size()),
                             0);
    }
    for (const auto& [name, v] : arrays) {
        if (name.rfind("__", 0) == 0) continue;
        if (g.params.find(name) == g.params.end())
            throw ParseError("checkpoint contains unknown parameter '" + name + "'", 0);
    }
    if (file_hash != g.graph_hash())
        throw ParseError("checkpoint graph hash mismatch: file " + std::to_string(file_hash) +
                             ", graph " + std::to_string(g.graph_hash()),
                         6);
    for (auto& [name, p] : g.params) p.v = arrays[name];

    CheckpointMeta meta;
    meta.iteration = static_cast<std::int64_t>(detail::pop_u64_from_f32(arrays["__iteration"]));
    meta.rng_key = detail::pop_u64_from_f32(arrays["__rng_key"]);
    meta.rng_counter = detail::pop_u64_from_f32(arrays["__rng_counter"]);
    return meta;
}

}  // namespace steglab
