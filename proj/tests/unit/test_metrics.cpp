#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "rvl/metrics.hpp"

using namespace rvl;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Quantile functions sampled on a fine midpoint grid; converges to the exact integral.
double wasserstein_riemann(std::vector<double> p, std::vector<double> q, int steps) {
    std::sort(p.begin(), p.end());
    std::sort(q.begin(), q.end());
    double acc = 0;
    for (int s = 0; s < steps; ++s) {
        double t = (s + 0.5) / steps;
        double a = p[std::min(p.size() - 1, static_cast<std::size_t>(t * p.size()))];
        double b = q[std::min(q.size() - 1, static_cast<std::size_t>(t * q.size()))];
        acc += (a - b) * (a - b);
    }
    return acc / steps;
}

}  // namespace

TEST(Percentile, NearestRankOnTen) {
    std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
    EXPECT_EQ(percentile(v, 0.5), 5);
    EXPECT_EQ(percentile(v, 0.9), 9);
    EXPECT_EQ(percentile(v, 0.01), 1);
    EXPECT_EQ(percentile(v, 0.99), 10);
}

TEST(Percentile, UniformMedian) {
    std::mt19937_64 rng(1);
    EXPECT_NEAR(percentile(uniform(10000, rng), 0.5), 0.5, 0.02);
}

TEST(Percentile, MonotoneInP) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = uniform(1 + trial * 7, rng);
        double prev = -INFINITY;
        for (double p = 0.05; p < 1.0; p += 0.05) {
            double x = percentile(v, p);
            EXPECT_GE(x, prev);
            prev = x;
        }
    }
}

TEST(Percentile, Errors) {
    EXPECT_THROW(percentile({}, 0.5), DomainError);
    EXPECT_THROW(percentile({1.0}, 0.0), DomainError);
    EXPECT_THROW(percentile({1.0}, 1.0), DomainError);
}

TEST(ErrorStatsTest, Summary) {
    auto s = error_stats({3, 1, 2, 4});
    EXPECT_EQ(s.sorted, (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(s.p50, 2);
    EXPECT_EQ(s.p90, 4);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_EQ(s.count, 4u);
}

TEST(LocationError, PolarToPlanar) {
    EXPECT_NEAR(location_error(10, 0, 12, 0), 2.0, 1e-12);
    EXPECT_NEAR(location_error(10, 90, 10, -90), 20.0, 1e-12);
    EXPECT_NEAR(location_error(5, 30, 5, 30), 0.0, 1e-12);
    // law of cosines
    EXPECT_NEAR(location_error(10, 0, 10, 60), 10.0, 1e-12);
}

TEST(Wasserstein, IdenticalIsZero) {
    std::mt19937_64 rng(3);
    auto v = uniform(57, rng);
    EXPECT_EQ(wasserstein_1d(v, v), 0.0);
}

TEST(Wasserstein, PointMasses) { EXPECT_DOUBLE_EQ(wasserstein_1d({3.0}, {5.0}), 4.0); }

TEST(Wasserstein, EqualCountsMatchSortedPairing) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto p = uniform(100, rng, -3, 3), q = uniform(100, rng, -1, 5);
        auto a = p, b = q;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double ref = 0;
        for (std::size_t i = 0; i < a.size(); ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
        ref /= static_cast<double>(a.size());
        EXPECT_NEAR(wasserstein_1d(p, q), ref, 1e-9);
    }
}

TEST(Wasserstein, UnequalCountsMatchQuantileGrid) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = uniform(7 + trial, rng), q = uniform(13 + 2 * trial, rng, 0.2, 1.4);
        // the grid is aligned to every breakpoint, so the midpoint rule is exact
        int steps = static_cast<int>(p.size() * q.size());
        EXPECT_NEAR(wasserstein_1d(p, q), wasserstein_riemann(p, q, steps), 1e-12);
    }
}

TEST(Wasserstein, SymmetricNonnegative) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = uniform(5 + trial, rng), q = uniform(30 - trial, rng, -1, 1);
        EXPECT_GE(wasserstein_1d(p, q), 0.0);
        EXPECT_NEAR(wasserstein_1d(p, q), wasserstein_1d(q, p), 1e-12);
    }
}

TEST(Wasserstein, HistogramPointMasses) {
    auto p = make_histogram({0.5}, 0, 8, 8), q = make_histogram({6.5}, 0, 8, 8);
    EXPECT_NEAR(wasserstein_hist(p, q), 36.0, 1e-12);
}

TEST(Wasserstein, EmptyThrows) { EXPECT_THROW(wasserstein_1d(std::vector<double>{}, {1.0}), DomainError); }

TEST(HistogramTest, MassSumsToOne) {
    std::mt19937_64 rng(7);
    auto h = make_histogram(uniform(999, rng, -2, 2), -1, 1, 32);
    auto m = h.mass();
    double s = 0;
    for (double x : m) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(h.total(), 999.0);  // out-of-window samples clamp into edge bins
    EXPECT_THROW(make_histogram({1.0}, 0, 1, 1), DomainError);
}

TEST(Kl, SelfIsZero) {
    std::mt19937_64 rng(8);
    auto h = make_histogram(uniform(200, rng), 0, 1, 16);
    EXPECT_NEAR(kl_div(h, h), 0.0, 1e-7);
}

TEST(Kl, ClosedFormLn2) {
    Histogram p{0, 2, {1, 0}}, q{0, 2, {1, 1}};
    EXPECT_NEAR(kl_div(p, q), std::log(2.0), 1e-8);
}

TEST(Kl, MatchesDirectSum) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        Histogram p{0, 1, std::vector<double>(16)}, q{0, 1, std::vector<double>(16)};
        for (int i = 0; i < 16; ++i) {
            p.counts[i] = u(rng) < 0.2 ? 0 : u(rng);
            q.counts[i] = u(rng) < 0.2 ? 0 : u(rng);
        }
        double sp = 0, sq = 0;
        for (int i = 0; i < 16; ++i) sp += p.counts[i], sq += q.counts[i];
        double ref = 0;
        for (int i = 0; i < 16; ++i) {
            double a = p.counts[i] / sp, b = q.counts[i] / sq;
            if (a > 0) ref += a * std::log(a / (b + 1e-9));
        }
        EXPECT_NEAR(kl_div(p, q), ref, 1e-9);
        EXPECT_GE(kl_div(p, q), -1e-9);
    }
}

TEST(Kl, MismatchedEdges) {
    EXPECT_THROW(kl_div(Histogram{0, 1, {1, 1}}, Histogram{0, 2, {1, 1}}), DomainError);
    EXPECT_THROW(kl_div(Histogram{0, 1, {1, 1}}, Histogram{0, 1, {1, 1, 1}}), DomainError);
}

TEST(MutualInfo, IdentityOnUniformIsLogBins) {
    std::mt19937_64 rng(10);
    auto y = uniform(20000, rng);
    EXPECT_NEAR(mutual_info(y, y, 0.0, 1.0, 32), std::log(32.0), 0.02);
}

TEST(MutualInfo, IndependentIsNearZero) {
    // plug-in bias is about (32-1)^2 / (2 * 1e4) = 0.048, so single draws straddle 0.05; bound the mean
    std::mt19937_64 rng(11);
    double sum = 0;
    for (int k = 0; k < 10; ++k) {
        auto y = uniform(10000, rng), z = uniform(10000, rng);
        double mi = mutual_info(y, z, 0.0, 1.0, 32);
        EXPECT_GE(mi, 0.0);
        sum += mi;
    }
    EXPECT_LT(sum / 10, 0.05);
}

TEST(MutualInfo, Errors) {
    EXPECT_THROW(mutual_info({1.0}, {1.0}, 0, 1), DomainError);
    EXPECT_THROW(mutual_info({1.0, 2.0}, {1.0}, 0, 1), DomainError);
    EXPECT_THROW(mutual_info({1.0, 1.0}, {1.0, 1.0}), DomainError);
}

TEST(Metrics, GroundtruthIsBestOnEveryAxis) {
    std::mt19937_64 rng(12);
    auto r = uniform(500, rng, 6, 18), a = uniform(500, rng, -40, 40);
    std::normal_distribution<double> n(0, 1.5);
    auto rn = r, an = a;
    for (auto& x : rn) x += n(rng);
    for (auto& x : an) x += 3 * n(rng);
    std::vector<double> zero(500, 0.0), err(500);
    for (int i = 0; i < 500; ++i) err[i] = location_error(r[i], a[i], rn[i], an[i]);
    auto best = evaluate_method("gt", zero, r, r, a, a, 6, 18, -45, 45);
    auto noisy = evaluate_method("noisy", err, r, rn, a, an, 6, 18, -45, 45);
    EXPECT_EQ(best.dw_range, 0.0);
    EXPECT_EQ(best.dw_angle, 0.0);
    EXPECT_NEAR(best.kl, 0.0, 1e-7);
    EXPECT_LT(best.dw_range, noisy.dw_range);
    EXPECT_LT(best.kl, noisy.kl);
    EXPECT_GT(best.mi, noisy.mi);
}

TEST(Metrics, CsvHeader) {
    std::string path = ::testing::TempDir() + "metrics.csv";
    write_metrics_csv(path, {MetricsRow{"MCL", 1, 2, 3, 4, 5, 6}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "method,p50,p90,D_W_range,D_W_angle,D_KL,MI");
    std::getline(in, line);
    EXPECT_EQ(line, "MCL,1,2,3,4,5,6");
}
