#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "rvl/baselines.hpp"
#include "rvl/synth.hpp"

using namespace rvl;

namespace {

Heatmap field(int rows, int cols, float fill = 0.0f) { return Heatmap(1, rows, cols, fill); }

Heatmap exp_noise(int rows, int cols, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    Heatmap h = field(rows, cols);
    for (auto& v : h.data) v = static_cast<float>(e(rng));
    return h;
}

// Direct per-cell window scan, no summed-area table.
DetectionMap cfar_reference(const Heatmap& hm, const CfarConfig& cfg) {
    DetectionMap out{hm.rows, hm.cols, std::vector<unsigned char>(hm.data.size(), 0)};
    const double alpha = cfg.scale();
    for (int r = 0; r < hm.rows; ++r)
        for (int c = 0; c < hm.cols; ++c) {
            double s = 0;
            int n = 0;
            for (int dr = -(cfg.guard_rows + cfg.train_rows); dr <= cfg.guard_rows + cfg.train_rows; ++dr)
                for (int dc = -(cfg.guard_cols + cfg.train_cols); dc <= cfg.guard_cols + cfg.train_cols; ++dc) {
                    if (std::abs(dr) <= cfg.guard_rows && std::abs(dc) <= cfg.guard_cols) continue;
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= hm.rows || cc < 0 || cc >= hm.cols) continue;
                    s += hm.at(rr, cc);
                    ++n;
                }
            double mean = n ? s / n : 0.0;
            out.hits[static_cast<std::size_t>(r) * hm.cols + c] = hm.at(r, c) > alpha * (mean + 1e-12);
        }
    return out;
}

// Core-point components ordered by first index; border points join the lowest-id neighbouring cluster.
std::vector<int> dbscan_reference(const std::vector<BinPoint>& p, double eps, int min_pts) {
    const std::size_t n = p.size();
    auto near = [&](std::size_t i, std::size_t j) { return std::hypot(p[i].row - p[j].row, p[i].col - p[j].col) <= eps; };
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        int k = 0;
        for (std::size_t j = 0; j < n; ++j) k += near(i, j);
        core[i] = k >= min_pts;
    }
    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || label[i] >= 0) continue;
        std::vector<std::size_t> stack{i};
        label[i] = next;
        while (!stack.empty()) {
            std::size_t a = stack.back();
            stack.pop_back();
            for (std::size_t b = 0; b < n; ++b)
                if (core[b] && label[b] < 0 && near(a, b)) {
                    label[b] = next;
                    stack.push_back(b);
                }
        }
        ++next;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        int best = -1;
        for (std::size_t j = 0; j < n; ++j)
            if (core[j] && near(i, j) && (best < 0 || label[j] < best)) best = label[j];
        label[i] = best;
    }
    return label;
}

Detection det(double range, double az, double value, int row = 0) {
    Detection d;
    d.range = range;
    d.azimuth = az;
    d.value = value;
    d.bin = {row, 0};
    return d;
}

GroundTruth gt_at(double range, double az) {
    GroundTruth g;
    g.range = range;
    g.azimuth = az;
    return g;
}

}  // namespace

TEST(Cfar, AlphaClosedForm) {
    for (int n : {8, 24, 80}) {
        for (double pfa : {1e-2, 1e-3, 1e-6}) {
            double a = alpha_for_pfa(pfa, n);
            EXPECT_NEAR(std::pow(1.0 + a / n, -n), pfa, pfa * 1e-10);
        }
    }
    EXPECT_THROW(alpha_for_pfa(0.0, 8), ConfigError);
    EXPECT_THROW(alpha_for_pfa(1e-3, 0), ConfigError);
}

TEST(Cfar, TrainingCellCount) {
    CfarConfig c;
    c.guard_rows = 1;
    c.guard_cols = 2;
    c.train_rows = 3;
    c.train_cols = 4;
    EXPECT_EQ(c.n_train(), 9 * 13 - 3 * 5);
}

TEST(Cfar, ConstantFieldHasNoDetections) {
    CfarConfig c;
    c.alpha = 1.5;
    EXPECT_EQ(ca_cfar_2d(field(20, 20, 3.0f), c).count(), 0u);
    EXPECT_EQ(ca_cfar_2d(field(20, 20, 0.0f), c).count(), 0u);
}

TEST(Cfar, SingleSpikeFlagsOnlyItself) {
    Heatmap h = field(24, 20);
    h.at(11, 7) = 5.0f;
    CfarConfig c;
    auto m = ca_cfar_2d(h, c);
    EXPECT_EQ(m.count(), 1u);
    EXPECT_TRUE(m.at(11, 7));
}

TEST(Cfar, WindowTooLarge) {
    CfarConfig c;
    c.train_rows = 10;
    EXPECT_THROW(ca_cfar_2d(field(20, 30), c), DomainError);
}

TEST(Cfar, MatchesDirectWindowScan) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 12; ++trial) {
        CfarConfig c;
        c.guard_rows = trial % 3;
        c.guard_cols = (trial / 3) % 2;
        c.train_rows = 1 + trial % 4;
        c.train_cols = 2 + trial % 3;
        c.pfa = 0.05;
        Heatmap h = exp_noise(21, 26, rng);
        EXPECT_EQ(ca_cfar_2d(h, c).hits, cfar_reference(h, c).hits) << "trial " << trial;
    }
}

TEST(Cfar, ScaleInvariant) {
    std::mt19937_64 rng(5);
    CfarConfig c;
    c.pfa = 0.02;
    for (int trial = 0; trial < 10; ++trial) {
        Heatmap h = exp_noise(30, 30, rng);
        Heatmap s = h;
        const float lam = static_cast<float>(std::pow(2.0, trial - 4));  // exact in binary floating point
        for (auto& v : s.data) v *= lam;
        EXPECT_EQ(ca_cfar_2d(h, c).hits, ca_cfar_2d(s, c).hits) << "lambda " << lam;
    }
}

TEST(Cfar, FalseAlarmRateOnExponentialNoise) {
    std::mt19937_64 rng(11);
    CfarConfig c;
    c.pfa = 1e-3;
    std::size_t hits = 0, cells = 0;
    for (int k = 0; k < 4; ++k) {
        Heatmap h = exp_noise(256, 256, rng);
        hits += ca_cfar_2d(h, c).count();
        cells += h.size();
    }
    const double rate = static_cast<double>(hits) / static_cast<double>(cells);
    EXPECT_GE(rate, 0.5e-3);
    EXPECT_LE(rate, 2e-3);
}

TEST(Dbscan, TwoSeparatedGroups) {
    std::vector<BinPoint> p{{0, 0, 1}, {0, 1, 1}, {1, 0, 1}, {10, 10, 1}, {10, 11, 1}};
    auto l = dbscan(p, 1.5, 2);
    EXPECT_EQ(l, (std::vector<int>{0, 0, 0, 1, 1}));
}

TEST(Dbscan, SparsePointsAreNoise) {
    std::vector<BinPoint> p{{0, 0, 1}, {0, 5, 1}, {5, 0, 1}, {9, 9, 1}};
    auto l = dbscan(p, 2.0, 2);
    EXPECT_TRUE(std::all_of(l.begin(), l.end(), [](int x) { return x == -1; }));
}

TEST(Dbscan, MatchesComponentReference) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> u(0, 14);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<BinPoint> p;
        for (int i = 0; i < 50; ++i) p.push_back({u(rng), u(rng), 1.0});
        const double eps = 1.0 + 0.25 * (trial % 5);
        const int min_pts = 1 + trial % 4;
        EXPECT_EQ(dbscan(p, eps, min_pts), dbscan_reference(p, eps, min_pts)) << "trial " << trial;
    }
}

TEST(Dbscan, BadParameters) {
    EXPECT_THROW(dbscan({}, 0.0, 1), ConfigError);
    EXPECT_THROW(dbscan({}, 1.0, 0), ConfigError);
}

TEST(Centroids, Singleton) {
    RadioConfig radio = RadioConfig::desk();
    auto d = centroids({{10, 20, 3.0}}, {0}, radio);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].bin, (Bin{10, 20}));
    EXPECT_DOUBLE_EQ(d[0].range, radio.range_of_row(10));
    EXPECT_DOUBLE_EQ(d[0].azimuth, radio.azimuth_of_col(20));
}

TEST(Centroids, SymmetricPairMidpoint) {
    RadioConfig radio = RadioConfig::desk();
    auto d = centroids({{10, 20, 2.0}, {12, 24, 2.0}}, {0, 0}, radio);
    EXPECT_DOUBLE_EQ(d[0].row, 11.0);
    EXPECT_DOUBLE_EQ(d[0].col, 22.0);
}

TEST(Centroids, WeightedThreePoint) {
    RadioConfig radio = RadioConfig::desk();
    auto d = centroids({{1, 2, 1.0}, {4, 2, 2.0}, {1, 8, 3.0}, {30, 30, 9.0}}, {0, 0, 0, -1}, radio);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_NEAR(d[0].row, (1 * 1 + 4 * 2 + 1 * 3) / 6.0, 1e-9);
    EXPECT_NEAR(d[0].col, (2 * 1 + 2 * 2 + 8 * 3) / 6.0, 1e-9);
    EXPECT_EQ(d[0].value, 3.0);
}

TEST(Genie, SingleDetection) {
    auto d = genie_select({det(10, 5, 1)}, gt_at(12, 0));
    ASSERT_TRUE(d);
    EXPECT_EQ(d->range, 10);
}

TEST(Genie, PicksNearest) {
    auto d = genie_select({det(17, 0, 1), det(11, 0, 1)}, gt_at(12, 0));
    EXPECT_EQ(d->range, 11);
}

TEST(Genie, TieGoesToLargerValueThenLowerRow) {
    auto d = genie_select({det(11, 0, 1, 3), det(13, 0, 2, 9)}, gt_at(12, 0));
    EXPECT_EQ(d->value, 2);
    d = genie_select({det(11, 0, 2, 9), det(13, 0, 2, 3)}, gt_at(12, 0));
    EXPECT_EQ(d->bin.row, 3);
}

TEST(Genie, EmptyIsMiss) { EXPECT_FALSE(genie_select({}, gt_at(12, 0))); }

TEST(Genie, PermutationInvariantAndIdempotent) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> r(6, 18), a(-40, 40);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Detection> d;
        for (int i = 0; i < 8; ++i) d.push_back(det(r(rng), a(rng), trial % 2, i));
        d.push_back(d[2]);  // exact duplicate
        GroundTruth g = gt_at(r(rng), a(rng));
        auto first = genie_select(d, g);
        std::shuffle(d.begin(), d.end(), rng);
        auto second = genie_select(d, g);
        EXPECT_EQ(first->range, second->range);
        EXPECT_EQ(first->azimuth, second->azimuth);
        auto again = genie_select({*first}, g);
        EXPECT_EQ(again->range, first->range);
    }
}

TEST(Genie, ArcLengthMetric) {
    // 1 m in range versus 10 deg at 12 m (about 2.1 m of arc)
    auto d = genie_select({det(12, 10, 1), det(13, 0, 1)}, gt_at(12, 0));
    EXPECT_EQ(d->range, 13);
}

TEST(Fusion, BoresightBoxGivesZeroAzimuth) {
    CameraModel cam;
    RadioConfig radio = RadioConfig::desk();
    Heatmap h = field(radio.heatmap_rows, radio.heatmap_cols);
    h.at(20, 24) = 1.0f;
    BBox b{20, 10, 27, 14};  // centre column 24 = W/2
    auto l = fusion_teacher(b, {}, cam, h, radio, 0);
    EXPECT_NEAR(l.azimuth_est, 0.0, 1e-12);
    EXPECT_EQ(l.source, LabelSource::FusionTeacher);
}

TEST(Fusion, FallbackUsesBrightestRowOfColumn) {
    CameraModel cam;
    RadioConfig radio = RadioConfig::desk();
    Heatmap h = field(radio.heatmap_rows, radio.heatmap_cols);
    h.at(37, 24) = 2.0f;
    h.at(5, 30) = 9.0f;  // brighter, wrong column
    auto l = fusion_teacher(BBox{20, 10, 27, 14}, {}, cam, h, radio, 4);
    EXPECT_EQ(l.heatmap_bin_est, (Bin{37, 24}));
    EXPECT_DOUBLE_EQ(l.range_est, radio.range_of_row(37));
    EXPECT_EQ(l.id, 4);
}

TEST(Fusion, GateRejectsFarDetections) {
    CameraModel cam;
    RadioConfig radio = RadioConfig::desk();
    Heatmap h = field(radio.heatmap_rows, radio.heatmap_cols);
    h.at(10, 24) = 1.0f;
    Detection near = det(15, 2.0, 1), far = det(8, 10.0, 5);
    auto l = fusion_teacher(BBox{20, 10, 27, 14}, {far, near}, cam, h, radio, 0);
    EXPECT_EQ(l.range_est, 15);
    l = fusion_teacher(BBox{20, 10, 27, 14}, {far}, cam, h, radio, 0);
    EXPECT_DOUBLE_EQ(l.range_est, radio.range_of_row(10));
}

TEST(Fusion, NoiselessPairWithinOneBin) {
    SynthConfig sc;
    sc.scene.n_clutter = 0;
    DetectorConfig dc;
    for (int id = 0; id < 10; ++id) {
        auto p = synthesize_pair(sc, id);
        auto dets = detect(p.heatmap, dc, sc.radio);
        auto l = fusion_teacher(p.gt.bbox, dets, sc.camera, p.heatmap, sc.radio, id);
        EXPECT_LE(std::abs(l.heatmap_bin_est.row - p.gt.heatmap_bin.row), 1) << id;
        EXPECT_LE(std::abs(l.heatmap_bin_est.col - p.gt.heatmap_bin.col), 1) << id;
    }
}

TEST(Chain, NoiselessGenieWithinTwoBins) {
    SynthConfig sc;
    sc.scene.n_clutter = 0;
    DetectorConfig dc;
    for (int id = 0; id < 25; ++id) {
        auto p = synthesize_pair(sc, id);
        bool missed = true;
        auto l = genie_label(detect(p.heatmap, dc, sc.radio), p.gt, id, missed);
        ASSERT_FALSE(missed) << id;
        EXPECT_LE(bin_error(l, p.gt), 2.0) << id;
    }
}

TEST(Detections, CsvHeader) {
    std::string path = ::testing::TempDir() + "dets.csv";
    write_detections_csv(path, {{3, {det(10, 1, 2, 4)}}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "id,row,col,range,azimuth,cluster,value");
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 6), "3,4,0,");
}
