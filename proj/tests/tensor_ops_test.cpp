// Finite-difference verification of every tensor op's analytic gradient,
// plus shape and exactness checks. Everything runs in double.

#include <gtest/gtest.h>

#include <cmath>
#include <initializer_list>
#include <vector>

#include "steglab/ops.hpp"
#include "steglab/rng.hpp"

using namespace steglab;

namespace {

constexpr double kStep = 1e-3;  // central-difference step
constexpr double kTol = 1e-4;   // max relative error

Tensor4d random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
    Tensor4d t(n, c, h, w);
    for (auto& v : t.v) v = rng.next_gaussian() * scale;
    return t;
}

// Push elements away from kink points so central differences stay on one
// smooth piece.
void displace_from(Tensor4d& t, std::initializer_list<double> kinks, double margin = 0.05) {
    for (auto& v : t.v)
        for (double k : kinks)
            if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double weighted_sum(const Tensor4d& y, const Tensor4d& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.v[i] * w.v[i];
    return s;
}

// Central difference of func() at v, stepping one scalar in place.
template <typename F>
double central_diff(double& v, F&& func) {
    const double save = v;
    v = save + kStep;
    const double up = func();
    v = save - kStep;
    const double dn = func();
    v = save;
    return (up - dn) / (2.0 * kStep);
}

template <typename F>
double max_grad_err(std::vector<double>& params, const std::vector<double>& analytic, F&& func) {
    EXPECT_EQ(params.size(), analytic.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        worst = std::max(worst, rel_err(analytic[i], central_diff(params[i], func)));
    return worst;
}

// -------------------------------------------------------------------------
// Convolution
// -------------------------------------------------------------------------

struct ConvCase {
    int n, ic, oc, k, s, h, w;
    Padding pad;
    bool bias;
};

ConvCase random_conv_case(Rng& rng) {
    ConvCase c;
    c.n = 1 + static_cast<int>(rng.next_below(2));
    c.ic = 1 + static_cast<int>(rng.next_below(3));
    c.oc = 1 + static_cast<int>(rng.next_below(3));
    c.k = 1 + static_cast<int>(rng.next_below(4));
    c.s = 1 + static_cast<int>(rng.next_below(2));
    c.pad = {static_cast<int>(rng.next_below(3)), static_cast<int>(rng.next_below(3)),
             static_cast<int>(rng.next_below(3)), static_cast<int>(rng.next_below(3))};
    // keep the padded extent at least one kernel wide
    c.h = c.k + static_cast<int>(rng.next_below(5));
    c.w = c.k + static_cast<int>(rng.next_below(5));
    c.bias = rng.next_below(2) == 0;
    return c;
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Rng rng(101);
    for (int trial = 0; trial < 24; ++trial) {
        const ConvCase cc = random_conv_case(rng);
        Tensor4d x = random_tensor(cc.n, cc.ic, cc.h, cc.w, rng);
        ConvParams<double> p;
        p.kernels = random_tensor(cc.oc, cc.ic, cc.k, cc.k, rng, 0.5);
        if (cc.bias) {
            p.bias.resize(cc.oc);
            for (auto& b : p.bias) b = rng.next_gaussian() * 0.2;
        }
        p.stride = cc.s;
        p.pad = cc.pad;

        const Tensor4d y0 = conv2d(x, p);
        Tensor4d w = random_tensor(y0.n, y0.c, y0.h, y0.w, rng);
        const auto loss = [&] { return weighted_sum(conv2d(x, p), w); };

        const ConvGrad<double> g = conv2d_grad(x, p, w);
        EXPECT_LT(max_grad_err(x.v, g.input.v, loss), kTol) << "input, trial " << trial;
        EXPECT_LT(max_grad_err(p.kernels.v, g.kernels.v, loss), kTol)
            << "kernels, trial " << trial;
        if (cc.bias) {
            std::vector<double> ga(g.bias.begin(), g.bias.end());
            EXPECT_LT(max_grad_err(p.bias, ga, loss), kTol) << "bias, trial " << trial;
        }
    }
}

TEST(Conv2d, OutputShapeFollowsStrideAndPadding) {
    EXPECT_EQ(conv_out_dim(64, 3, 2, 1), 64);
    EXPECT_EQ(conv_out_dim(64, 3, 2, 2), 32);
    EXPECT_EQ(conv_out_dim(64, 4, 3, 1), 64);  // asymmetric 'same' for even kernels
    EXPECT_EQ(conv_out_dim(8, 1, 0, 1), 8);

    Rng rng(7);
    Tensor4d x = random_tensor(2, 3, 10, 12, rng);
    ConvParams<double> p;
    p.kernels = random_tensor(5, 3, 4, 4, rng);
    p.stride = 2;
    p.pad = {1, 1, 2, 2};
    const Tensor4d y = conv2d(x, p);
    EXPECT_EQ(y.n, 2);
    EXPECT_EQ(y.c, 5);
    EXPECT_EQ(y.h, conv_out_dim(10, 4, 3, 2));
    EXPECT_EQ(y.w, conv_out_dim(12, 4, 3, 2));
}

TEST(Conv2d, HandComputedExample) {
    // 1x1x3x3 input, 2x2 kernel, stride 1, no padding.
    Tensor4d x(1, 1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    ConvParams<double> p;
    p.kernels = Tensor4d(1, 1, 2, 2, {1, 0, 0, -1});
    p.bias = {0.5};
    const Tensor4d y = conv2d(x, p);
    ASSERT_EQ(y.h, 2);
    ASSERT_EQ(y.w, 2);
    // y[i][j] = x[i][j] - x[i+1][j+1] + 0.5 = -4 + 0.5 everywhere
    for (double v : y.v) EXPECT_DOUBLE_EQ(v, -3.5);
}

TEST(Conv2d, RejectsShapeMismatch) {
    Rng rng(9);
    Tensor4d x = random_tensor(1, 2, 6, 6, rng);
    ConvParams<double> p;
    p.kernels = random_tensor(4, 3, 3, 3, rng);  // in_c 3 != x.c 2
    EXPECT_THROW(conv2d(x, p), ContractError);
}

// -------------------------------------------------------------------------
// Batch normalization
// -------------------------------------------------------------------------

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
    Rng rng(202);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(2));
        const int c = 1 + static_cast<int>(rng.next_below(3));
        const int h = 2 + static_cast<int>(rng.next_below(4));
        const int wdim = 2 + static_cast<int>(rng.next_below(4));
        Tensor4d x = random_tensor(n, c, h, wdim, rng);
        BatchNormParams<double> p;
        p.gamma.resize(c);
        p.beta.resize(c);
        p.running_mean.assign(c, 0.0);
        p.running_var.assign(c, 1.0);
        for (auto& g : p.gamma) g = 0.5 + rng.next_double();
        for (auto& b : p.beta) b = rng.next_gaussian() * 0.3;

        Tensor4d w = random_tensor(n, c, h, wdim, rng);
        const auto loss = [&] {
            BatchNormParams<double> copy = p;  // forward mutates running stats
            return weighted_sum(batch_norm(x, copy, true), w);
        };

        BatchNormParams<double> run = p;
        BnCache cache;
        batch_norm(x, run, true, &cache);
        const BatchNormGrad<double> g = batch_norm_grad(x, p, cache, w);
        EXPECT_LT(max_grad_err(x.v, g.input.v, loss), kTol) << "input, trial " << trial;
        EXPECT_LT(max_grad_err(p.gamma, g.gamma, loss), kTol) << "gamma, trial " << trial;
        EXPECT_LT(max_grad_err(p.beta, g.beta, loss), kTol) << "beta, trial " << trial;
    }
}

TEST(BatchNorm, TrainingModeNormalizesBatch) {
    Rng rng(5);
    Tensor4d x = random_tensor(4, 2, 5, 5, rng, 3.0);
    BatchNormParams<double> p;
    p.gamma.assign(2, 1.0);
    p.beta.assign(2, 0.0);
    p.running_mean.assign(2, 0.0);
    p.running_var.assign(2, 1.0);
    const Tensor4d y = batch_norm(x, p, true);
    for (int c = 0; c < 2; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int ni = 0; ni < 4; ++ni) {
            const double* yp = y.plane(ni, c);
            for (std::size_t i = 0; i < y.plane_size(); ++i) {
                sum += yp[i];
                sq += yp[i] * yp[i];
            }
        }
        const double m = sum / (4 * 25), var = sq / (4 * 25) - m * m;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-3);  // eps shrinks variance slightly
    }
}

TEST(BatchNorm, RunningStatsUpdateWithMomentum) {
    Tensor4d x(1, 1, 1, 2, {1.0, 3.0});  // mean 2, biased var 1
    BatchNormParams<double> p;
    p.gamma = {1.0};
    p.beta = {0.0};
    p.running_mean = {10.0};
    p.running_var = {4.0};
    batch_norm(x, p, true);
    EXPECT_NEAR(p.running_mean[0], 0.9 * 10.0 + 0.1 * 2.0, 1e-12);
    EXPECT_NEAR(p.running_var[0], 0.9 * 4.0 + 0.1 * 1.0, 1e-12);
}

TEST(BatchNorm, InferenceUsesRunningStats) {
    Tensor4d x(1, 1, 1, 2, {1.0, 3.0});
    BatchNormParams<double> p;
    p.gamma = {2.0};
    p.beta = {1.0};
    p.running_mean = {1.0};
    p.running_var = {4.0};
    const Tensor4d y = batch_norm(x, p, false);
    const double inv = 1.0 / std::sqrt(4.0 + 1e-5);
    EXPECT_NEAR(y.v[0], 1.0 + 2.0 * (1.0 - 1.0) * inv, 1e-12);
    EXPECT_NEAR(y.v[1], 1.0 + 2.0 * (3.0 - 1.0) * inv, 1e-12);
}

// -------------------------------------------------------------------------
// Activations
// -------------------------------------------------------------------------

TEST(Relu, GradientMatchesFiniteDifferences) {
    Rng rng(303);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor4d x = random_tensor(2, 2, 3, 4, rng);
        displace_from(x, {0.0});
        Tensor4d w = random_tensor(2, 2, 3, 4, rng);
        const auto loss = [&] { return weighted_sum(relu(x), w); };
        const Tensor4d g = relu_grad(x, w);
        EXPECT_LT(max_grad_err(x.v, g.v, loss), kTol) << "trial " << trial;
    }
}

TEST(Tlu, GradientMatchesFiniteDifferences) {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor4d x = random_tensor(2, 2, 3, 4, rng, 6.0);
        displace_from(x, {-8.0, 8.0});
        Tensor4d w = random_tensor(2, 2, 3, 4, rng);
        const auto loss = [&] { return weighted_sum(tlu(x, 8.0), w); };
        const Tensor4d g = tlu_grad(x, 8.0, w);
        EXPECT_LT(max_grad_err(x.v, g.v, loss), kTol) << "trial " << trial;
    }
}

TEST(Tlu, ClampsAndKeepsBoundaryGradient) {
    Tensor4d x(1, 1, 1, 3, {10.0, -3.0, -12.0});
    const Tensor4d y = tlu(x, 8.0);
    EXPECT_DOUBLE_EQ(y.v[0], 8.0);
    EXPECT_DOUBLE_EQ(y.v[1], -3.0);
    EXPECT_DOUBLE_EQ(y.v[2], -8.0);

    Tensor4d edge(1, 1, 1, 4, {8.0, -8.0, 8.0001, -8.0001});
    Tensor4d ones(1, 1, 1, 4, {1.0, 1.0, 1.0, 1.0});
    const Tensor4d g = tlu_grad(edge, 8.0, ones);
    EXPECT_DOUBLE_EQ(g.v[0], 1.0);  // boundary inclusive
    EXPECT_DOUBLE_EQ(g.v[1], 1.0);
    EXPECT_DOUBLE_EQ(g.v[2], 0.0);
    EXPECT_DOUBLE_EQ(g.v[3], 0.0);
}

TEST(Abs, GradientMatchesFiniteDifferences) {
    Rng rng(505);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor4d x = random_tensor(1, 3, 4, 4, rng);
        displace_from(x, {0.0});
        Tensor4d w = random_tensor(1, 3, 4, 4, rng);
        const auto loss = [&] { return weighted_sum(abs_val(x), w); };
        const Tensor4d g = abs_grad(x, w);
        EXPECT_LT(max_grad_err(x.v, g.v, loss), kTol) << "trial " << trial;
    }
}

// -------------------------------------------------------------------------
// Concatenation / slicing / pooling
// -------------------------------------------------------------------------

TEST(ConcatChannels, RoundTripsThroughSlice) {
    Rng rng(606);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(2));
        const int h = 2 + static_cast<int>(rng.next_below(3));
        const int w = 2 + static_cast<int>(rng.next_below(3));
        const Tensor4d a = random_tensor(n, 1 + static_cast<int>(rng.next_below(3)), h, w, rng);
        const Tensor4d b = random_tensor(n, 1 + static_cast<int>(rng.next_below(3)), h, w, rng);
        const Tensor4d cat = concat_channels<double>({&a, &b});
        EXPECT_EQ(cat.c, a.c + b.c);
        const Tensor4d sa = slice_channels(cat, 0, a.c);
        const Tensor4d sb = slice_channels(cat, a.c, b.c);
        EXPECT_EQ(sa.v, a.v);
        EXPECT_EQ(sb.v, b.v);
    }
}

TEST(ConcatChannels, RejectsSpatialMismatch) {
    Tensor4d a(1, 1, 2, 2), b(1, 1, 3, 2);
    EXPECT_THROW(concat_channels<double>({&a, &b}), ContractError);
}

TEST(GlobalAvgPool, GradientMatchesFiniteDifferences) {
    Rng rng(707);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 1 + static_cast<int>(rng.next_below(5));
        const int w = 1 + static_cast<int>(rng.next_below(5));
        Tensor4d x = random_tensor(2, 3, h, w, rng);
        Tensor4d wgt = random_tensor(2, 3, 1, 1, rng);
        const auto loss = [&] { return weighted_sum(global_avg_pool(x), wgt); };
        const Tensor4d g = global_avg_pool_grad(x, wgt);
        EXPECT_LT(max_grad_err(x.v, g.v, loss), kTol) << "trial " << trial;
    }
}

TEST(GlobalAvgPool, AveragesEachPlane) {
    Tensor4d x(1, 2, 2, 2, {1, 2, 3, 4, 10, 20, 30, 40});
    const Tensor4d y = global_avg_pool(x);
    EXPECT_EQ(y.h, 1);
    EXPECT_EQ(y.w, 1);
    EXPECT_DOUBLE_EQ(y.v[0], 2.5);
    EXPECT_DOUBLE_EQ(y.v[1], 25.0);
}

// -------------------------------------------------------------------------
// Dense + softmax + cross-entropy head
// -------------------------------------------------------------------------

TEST(DenseSoftmaxXent, GradientsMatchFiniteDifferences) {
    Rng rng(808);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(3));
        const int f = 3 + static_cast<int>(rng.next_below(5));
        Tensor4d x = random_tensor(n, f, 1, 1, rng);
        std::vector<double> w(2 * static_cast<std::size_t>(f)), b(2);
        for (auto& v : w) v = rng.next_gaussian() * 0.5;
        for (auto& v : b) v = rng.next_gaussian() * 0.2;
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng.next_below(2));

        const auto loss = [&] { return dense_softmax_xent(x, w, b, labels).loss; };
        const DenseSoftmaxResult<double> r = dense_softmax_xent(x, w, b, labels);
        EXPECT_LT(max_grad_err(x.v, r.grad_input.v, loss), kTol) << "input, trial " << trial;
        EXPECT_LT(max_grad_err(w, r.grad_weights, loss), kTol) << "weights, trial " << trial;
        EXPECT_LT(max_grad_err(b, r.grad_bias, loss), kTol) << "bias, trial " << trial;
    }
}

TEST(DenseSoftmaxXent, UniformLogitsGiveLogTwoLoss) {
    Tensor4d x(2, 3, 1, 1, {1, 2, 3, 4, 5, 6});
    std::vector<double> w(6, 0.0), b(2, 0.0);
    const auto r = dense_softmax_xent(x, w, b, {0, 1});
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
    for (double p : r.probs) EXPECT_NEAR(p, 0.5, 1e-12);
}

TEST(DenseSoftmaxXent, ProbabilitiesSumToOne) {
    Rng rng(11);
    Tensor4d x = random_tensor(5, 4, 1, 1, rng, 10.0);
    std::vector<double> w(8), b(2);
    for (auto& v : w) v = rng.next_gaussian();
    for (auto& v : b) v = rng.next_gaussian();
    const auto r = dense_softmax_xent(x, w, b, {0, 1, 0, 1, 0});
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(r.probs[2 * i] + r.probs[2 * i + 1], 1.0, 1e-12);
}

}  // namespace
