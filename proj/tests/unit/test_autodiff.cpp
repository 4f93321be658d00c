#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "rvl/autodiff.hpp"
#include "../support/gradcheck.hpp"

using namespace rvl;
using namespace rvl::ad;
using rvl::testing::grad_check;
using rvl::testing::randn;

TEST(Autodiff, ReluGradient) {
    ParamSet ps;
    Tensor& x = ps.add("x", {2}, {-1.0, 2.0});
    backward(sum(relu(x)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Autodiff, ConvOfDeltaIsRotatedKernel) {
    // cross-correlation convention: a centred delta reproduces the kernel rotated by 180 degrees
    std::vector<double> xs(25, 0.0);
    xs[2 * 5 + 2] = 1.0;
    std::vector<double> ks{1, 2, 3, 4, 5, 6, 7, 8, 9};
    Tensor x = Tensor::constant({1, 1, 5, 5}, xs);
    Tensor k = Tensor::constant({1, 1, 3, 3}, ks);
    Tensor y = conv2d(x, k, Tensor::zeros({1}), 1, 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(y.values()[(1 + i) * 5 + 1 + j], ks[(2 - i) * 3 + (2 - j)]);
    EXPECT_EQ(y.values()[0], 0.0);
}

TEST(Autodiff, ConvKernelGradientIsInputCorrelation) {
    std::mt19937_64 rng(3);
    const int H = 6, W = 7, k = 3;
    auto xs = randn(H * W, rng);
    ParamSet ps;
    Tensor& K = ps.add("k", {1, 1, k, k}, randn(k * k, rng));
    Tensor& b = ps.add_zeros("b", {1});
    backward(sum(conv2d(Tensor::constant({1, 1, H, W}, xs), K, b)));
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double want = 0;
            for (int oy = 0; oy + k <= H; ++oy)
                for (int ox = 0; ox + k <= W; ++ox) want += xs[(oy + i) * W + ox + j];
            EXPECT_NEAR(K.grad()[i * k + j], want, 1e-12);
        }
    EXPECT_DOUBLE_EQ(b.grad()[0], (H - k + 1) * (W - k + 1));
}

TEST(Autodiff, ShapeErrorsNameOperands) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    try {
        add(a, b);
        FAIL();
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
    EXPECT_THROW(matmul(a, a), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})), ShapeError);
}

TEST(Autodiff, NoGraphWithoutParameters) {
    Tensor a = Tensor::constant({2}, {1, 2});
    Tensor y = exp(a);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->inputs.empty());
}

namespace {

// Every primitive gets its own small finite-difference check.
struct PrimCase {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    Shape shape;
    bool positive = false;
};

}  // namespace

TEST(AutodiffGrad, Primitives) {
    std::vector<PrimCase> cases{
        {"relu", [](const Tensor& x) { return relu(x); }, {3, 4}},
        {"leaky", [](const Tensor& x) { return leaky_relu(x, 0.1); }, {3, 4}},
        {"sigmoid", [](const Tensor& x) { return sigmoid(x); }, {3, 4}},
        {"tanh", [](const Tensor& x) { return tanh(x); }, {3, 4}},
        {"softplus", [](const Tensor& x) { return softplus(x); }, {3, 4}},
        {"exp", [](const Tensor& x) { return exp(x); }, {3, 4}},
        {"log", [](const Tensor& x) { return log(x); }, {3, 4}, true},
        {"scale", [](const Tensor& x) { return add_scalar(scale(x, -2.5), 1.0); }, {5}},
        {"transpose", [](const Tensor& x) { return transpose(x); }, {3, 4}},
        {"normalize_l2", [](const Tensor& x) { return normalize_l2(x); }, {3, 4}},
        {"normalize_channels", [](const Tensor& x) { return normalize_channels(x); }, {2, 3, 2, 3}},
        {"gap", [](const Tensor& x) { return global_avg_pool(x); }, {2, 3, 2, 3}},
        {"avg_pool", [](const Tensor& x) { return avg_pool2d(x, 2, 2); }, {2, 2, 4, 6}},
        {"avg_pool_overlap", [](const Tensor& x) { return avg_pool2d(x, 3, 1); }, {1, 2, 4, 5}},
        {"max_over_bins", [](const Tensor& x) { return max_over_bins(x); }, {3, 5}},
        {"flatten", [](const Tensor& x) { return flatten(x); }, {2, 3, 2, 2}},
    };
    for (int seed = 0; seed < 20; ++seed) {
        for (const auto& c : cases) {
            std::mt19937_64 rng(seed);
            ParamSet ps;
            auto v = randn(numel(c.shape), rng);
            if (c.positive)
                for (auto& x : v) x = std::abs(x) + 0.5;
            ps.add("x", c.shape, v);
            // weight the outputs so the check is not blind to permutations
            Tensor probe = c.f(ps[0]);
            Tensor w = Tensor::constant(probe.shape(), randn(probe.size(), rng));
            auto r = grad_check(ps, [&] { return sum(mul(c.f(ps[0]), w)); });
            EXPECT_LT(r.max_rel, 1e-4) << c.name << " seed " << seed << " " << r.worst;
        }
    }
}

TEST(AutodiffGrad, BinaryAndLayers) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        ParamSet ps;
        ps.add("a", {3, 4}, randn(12, rng));
        ps.add("b", {3, 4}, randn(12, rng));
        ps.add("m", {4, 2}, randn(8, rng));
        ps.add("W", {5, 2}, randn(10, rng));
        ps.add("bias", {5}, randn(5, rng));
        auto f = [&] {
            Tensor ab = sub(mul(ps[0], ps[1]), add(ps[0], ps[1]));
            Tensor h = matmul(ab, ps[2]);
            Tensor z = tanh(linear(h, ps[3], ps[4]));
            return mean(mul(z, z));
        };
        auto r = grad_check(ps, f);
        EXPECT_LT(r.max_rel, 1e-4) << "seed " << seed << " " << r.worst;
    }
}

TEST(AutodiffGrad, ConvStridePad) {
    struct Cfg { int C, O, H, W, k, s, p; };
    std::vector<Cfg> cfgs{{1, 2, 6, 5, 3, 1, 1}, {2, 3, 8, 7, 4, 2, 1}, {3, 2, 5, 6, 2, 2, 0}, {2, 2, 7, 7, 4, 1, 1}};
    for (int seed = 0; seed < 20; ++seed)
        for (const auto& c : cfgs) {
            std::mt19937_64 rng(seed * 7 + c.k);
            ParamSet ps;
            ps.add("x", {2, c.C, c.H, c.W}, randn(2 * c.C * c.H * c.W, rng));
            ps.add("k", {c.O, c.C, c.k, c.k}, randn(c.O * c.C * c.k * c.k, rng));
            ps.add("b", {c.O}, randn(c.O, rng));
            Tensor y0 = conv2d(ps[0], ps[1], ps[2], c.s, c.p);
            Tensor w = Tensor::constant(y0.shape(), randn(y0.size(), rng));
            auto r = grad_check(ps, [&] { return sum(mul(conv2d(ps[0], ps[1], ps[2], c.s, c.p), w)); });
            EXPECT_LT(r.max_rel, 1e-4) << "seed " << seed << " k" << c.k << " " << r.worst;
        }
}

TEST(AutodiffGrad, MaskProductAndCrossEntropy) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(500 + seed);
        ParamSet ps;
        ps.add("x", {2, 3, 3, 4}, randn(72, rng));
        ps.add("m", {2, 1, 3, 4}, randn(24, rng));
        ps.add("logits", {4, 5}, randn(20, rng, 2.0));
        std::vector<int> tgt{0, 3, 4, 1};
        auto f = [&] {
            Tensor a = mean(tanh(mask_product(ps[0], ps[1])));
            return add(a, softmax_cross_entropy(ps[2], tgt));
        };
        auto r = grad_check(ps, f);
        EXPECT_LT(r.max_rel, 1e-4) << "seed " << seed << " " << r.worst;
    }
}

TEST(AutodiffGrad, SharedSubexpressionAccumulates) {
    ParamSet ps;
    Tensor& x = ps.add("x", {1}, {3.0});
    Tensor y = mul(x, x);
    backward(add(y, y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(CrossEntropy, UniformLogits) {
    Tensor z = Tensor::zeros({3, 4});
    EXPECT_NEAR(softmax_cross_entropy(z, {0, 1, 2}).item(), std::log(4.0), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParams) {
    ParamSet ps;
    ps.add("x", {3}, {1, -2, 3});
    Adam opt(ps, {.lr = 0.1});
    opt.step(ps);
    EXPECT_EQ(ps[0].values(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepBound) {
    ParamSet ps;
    ps.add("x", {4}, {0, 0, 0, 0});
    ps[0].mutable_grad() = {3.0, -1e-3, 250.0, -7.0};
    const double lr = 0.01;
    Adam opt(ps, {.lr = lr});
    opt.step(ps);
    const auto& g = ps[0].grad();
    for (int i = 0; i < 4; ++i) {
        double d = ps[0].values()[i];
        EXPECT_EQ(std::signbit(d), !std::signbit(g[i]));
        EXPECT_LE(std::abs(d), lr * (1 + 1e-8));
        EXPECT_GT(std::abs(d), lr * 0.99);
    }
}

TEST(Adam, QuadraticMatchesScalarRecurrence) {
    ParamSet ps;
    ps.add("x", {1}, {1.0});
    Adam opt(ps, {.lr = 0.05});
    double x = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 200; ++t) {
        ps.zero_grad();
        backward(mul(ps[0], ps[0]));
        opt.step(ps);
        double g = 2 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        ASSERT_NEAR(ps[0].values()[0], x, 1e-12) << "step " << t;
    }
    EXPECT_LT(std::abs(ps[0].values()[0]), 0.05);
}

TEST(Adam, NonFiniteGradientFailsFast) {
    ParamSet ps;
    ps.add("w", {2}, {1, 1});
    ps[0].mutable_grad() = {0.5, std::nan("")};
    Adam opt(ps);
    EXPECT_THROW(opt.step(ps), NumericError);
    EXPECT_EQ(ps[0].values(), (std::vector<double>{1, 1}));
}

TEST(Sgd, MomentumRecurrence) {
    ParamSet ps;
    ps.add("x", {1}, {2.0});
    SgdMomentum opt(ps, 0.1, 0.5);
    ps[0].mutable_grad() = {1.0};
    opt.step(ps);
    EXPECT_DOUBLE_EQ(ps[0].values()[0], 1.9);
    opt.step(ps);
    EXPECT_DOUBLE_EQ(ps[0].values()[0], 1.9 - 0.1 * 1.5);
}

TEST(Training, BitwiseDeterministic) {
    auto run = [] {
        std::mt19937_64 rng(9);
        ParamSet ps;
        ps.add_init("k", {4, 1, 3, 3}, 9, rng);
        ps.add_zeros("b", {4});
        ps.add_init("W", {1, 4}, 4, rng);
        ps.add_zeros("c", {1});
        Tensor x = Tensor::constant({2, 1, 5, 5}, randn(50, rng));
        Tensor t = Tensor::constant({2, 1}, {0.3, -0.7});
        Adam opt(ps, {.lr = 0.01});
        std::vector<double> curve;
        for (int i = 0; i < 30; ++i) {
            ps.zero_grad();
            Tensor y = linear(global_avg_pool(relu(conv2d(x, ps[0], ps[1], 1, 1))), ps[2], ps[3]);
            Tensor l = mse(y, t);
            backward(l);
            opt.step(ps);
            curve.push_back(l.item());
        }
        return curve;
    };
    auto a = run();
    auto b = run();
    EXPECT_EQ(a, b);
    EXPECT_LT(a.back(), a.front());
}

TEST(Checkpoint, RoundTripAndMismatch) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "rvl_ckpt_test";
    fs::remove_all(dir);
    std::mt19937_64 rng(1);
    ParamSet ps;
    ps.add_init("conv1.w", {2, 1, 3, 3}, 9, rng);
    ps.add_zeros("conv1.b", {2});
    save_params(ps, dir);
    ParamSet other = ps.clone();
    for (auto& v : other[0].mutable_values()) v = 0;
    load_params(other, dir);
    for (std::size_t i = 0; i < ps[0].size(); ++i)
        EXPECT_EQ(other[0].values()[i], static_cast<double>(static_cast<float>(ps[0].values()[i])));
    ParamSet wrong;
    wrong.add_zeros("conv1.w", {2, 1, 2, 2});
    wrong.add_zeros("conv1.b", {2});
    EXPECT_THROW(load_params(wrong, dir), ConsistencyError);
    EXPECT_THROW(load_params(wrong, dir / "nope"), NotFoundError);
    fs::remove_all(dir);
}
